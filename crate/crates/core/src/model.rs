//! The multi-head estimator: covariate representation, pre-subgrouping
//! outcome heads, soft subgroup membership and subgroup-informed outcome and
//! propensity heads.

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{
    softmax_rows_backward, xavier_uniform, Activation, Dense, DenseCache, EncoderBlock, EncoderCache, NetSpec,
    ParameterStore, ENCODER_PREFIX,
};
use crate::subgroup::Centroids;

/// Per-feature affine standardization applied before the representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(p: usize) -> Self {
        Standardizer {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    /// Column means and standard deviations; constant columns get scale 1.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// All per-batch predictions of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub z: Array2<f64>,
    pub y0_pre: Array1<f64>,
    pub y1_pre: Array1<f64>,
    pub te_pre: Array1<f64>,
    pub v: Array2<f64>,
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
    pub t_hat: Array1<f64>,
}

impl ModelOutput {
    /// Post-subgrouping treatment effect `ŷ1 − ŷ0`.
    pub fn te(&self) -> Array1<f64> {
        &self.y1 - &self.y0
    }

    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }
}

/// Upstream gradients of the loss with respect to each model output.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub y0_pre: Array1<f64>,
    pub y1_pre: Array1<f64>,
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
    pub t_hat: Array1<f64>,
}

#[derive(Debug, Clone)]
pub enum ReprCache {
    Tokens {
        x: Array2<f64>,
        encoder: Box<EncoderCache>,
        proj: DenseCache,
    },
    Mlp {
        first: DenseCache,
        second: DenseCache,
    },
}

/// Per-sample `(a, b, c)` columns from one stage, plus its cache.
pub type StageOutput<C> = (Array1<f64>, Array1<f64>, Array1<f64>, C);

#[derive(Debug, Clone)]
pub struct PreCache {
    y0: DenseCache,
    y1: DenseCache,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    hidden: DenseCache,
    out: DenseCache,
}

#[derive(Debug, Clone)]
pub struct HeadsCache {
    y0: HeadCache,
    y1: HeadCache,
    t: HeadCache,
}

/// Everything the backward pass needs from [`SubgroupTeModel::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    repr: ReprCache,
    pre: PreCache,
    heads: HeadsCache,
    mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    hidden: Dense,
    out: Dense,
}

impl Head {
    fn new(name: &str, in_dim: usize, width: usize, act: Activation, out_act: Activation) -> Self {
        Head {
            hidden: Dense::new(format!("{name}.hidden"), in_dim, width, act),
            out: Dense::new(format!("{name}.out"), width, 1, out_act),
        }
    }

    fn forward(&self, params: &ParameterStore, u: ArrayView2<f64>) -> Result<(Array1<f64>, HeadCache)> {
        let (h, hidden) = self.hidden.forward(params, u)?;
        let (o, out) = self.out.forward(params, h.view())?;
        Ok((o.column(0).to_owned(), HeadCache { hidden, out }))
    }

    fn backward(&self, params: &mut ParameterStore, cache: &HeadCache, grad: ArrayView1<f64>) -> Result<Array2<f64>> {
        let g = grad.to_owned().insert_axis(Axis(1));
        let gh = self.out.backward(params, &cache.out, g.view())?;
        self.hidden.backward(params, &cache.hidden, gh.view())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layers {
    encoder: Option<EncoderBlock>,
    repr_proj: Dense,
    mlp_first: Dense,
    mlp_second: Dense,
    pre_y0: Dense,
    pre_y1: Dense,
    head_y0: Head,
    head_y1: Head,
    head_t: Head,
}

impl Layers {
    fn new(spec: &NetSpec, k: usize) -> Self {
        let h = spec.hidden_dim;
        let act = spec.activation;
        let d = spec.encoder.token_dim;
        Layers {
            encoder: spec
                .encoder
                .use_encoder
                .then(|| EncoderBlock::new(ENCODER_PREFIX, d, spec.encoder.n_heads)),
            repr_proj: Dense::new("repr.proj", d, h, act),
            mlp_first: Dense::new("repr.mlp.0", spec.input_dim, h, act),
            mlp_second: Dense::new("repr.mlp.1", h, h, act),
            pre_y0: Dense::new("pre.y0", h, 1, Activation::Identity),
            pre_y1: Dense::new("pre.y1", h, 1, Activation::Identity),
            head_y0: Head::new("head.y0", h + k, h, act, Activation::Identity),
            head_y1: Head::new("head.y1", h + k, h, act, Activation::Identity),
            head_t: Head::new("head.t", h + k, h, act, Activation::Sigmoid),
        }
    }
}

pub const EMBED_WEIGHT: &str = "repr.embed.weight";
pub const EMBED_BIAS: &str = "repr.embed.bias";

/// Network parameters, shape, subgroup count and centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupTeModel {
    pub spec: NetSpec,
    pub k: usize,
    pub params: ParameterStore,
    pub centroids: Option<Centroids>,
    pub standardizer: Standardizer,
    layers: Layers,
}

impl SubgroupTeModel {
    /// Builds a model with seeded Kaiming/Xavier initialization and no
    /// centroids yet.
    pub fn new(spec: NetSpec, k: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        let layers = Layers::new(&spec, k);
        let mut params = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(enc) = &layers.encoder {
            let (p, d) = (spec.input_dim, spec.encoder.token_dim);
            params.insert(EMBED_WEIGHT, xavier_uniform(p, d, &mut rng));
            params.insert(EMBED_BIAS, xavier_uniform(p, d, &mut rng));
            enc.init(&mut params, &mut rng);
            layers.repr_proj.init(&mut params, &mut rng);
        } else {
            layers.mlp_first.init(&mut params, &mut rng);
            layers.mlp_second.init(&mut params, &mut rng);
        }
        layers.pre_y0.init(&mut params, &mut rng);
        layers.pre_y1.init(&mut params, &mut rng);
        for head in [&layers.head_y0, &layers.head_y1, &layers.head_t] {
            head.hidden.init(&mut params, &mut rng);
            head.out.init(&mut params, &mut rng);
        }
        let standardizer = Standardizer::identity(spec.input_dim);
        Ok(SubgroupTeModel {
            spec,
            k,
            params,
            centroids: None,
            standardizer,
            layers,
        })
    }

    /// Reassembles a model from persisted parts, checking that every
    /// expected parameter is present with the right shape.
    pub fn from_parts(
        spec: NetSpec,
        k: usize,
        params: ParameterStore,
        centroids: Option<Centroids>,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let template = SubgroupTeModel::new(spec, k, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Corrupt(format!(
                "expected {} parameter entries, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, p) in template.params.iter() {
            let got = params
                .get(name)
                .map_err(|_| Error::Corrupt(format!("missing parameter `{name}`")))?;
            if got.value.dim() != p.value.dim() {
                return Err(Error::Corrupt(format!("parameter `{name}` has wrong shape")));
            }
        }
        if let Some(c) = &centroids {
            if c.k() != k {
                return Err(Error::Corrupt(format!("{} centroids for K={k}", c.k())));
            }
        }
        if standardizer.mean.len() != template.spec.input_dim || standardizer.scale.len() != template.spec.input_dim {
            return Err(Error::Corrupt("standardizer width does not match input_dim".into()));
        }
        Ok(SubgroupTeModel {
            params,
            centroids,
            standardizer,
            ..template
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    pub fn centroids(&self) -> Result<&Centroids> {
        self.centroids
            .as_ref()
            .ok_or_else(|| Error::State("centroids are not initialized".into()))
    }

    /// Sets the output biases of both outcome arms, pre- and post-subgrouping.
    pub fn set_outcome_bias(&mut self, y0: f64, y1: f64) -> Result<()> {
        for (layer, v) in [
            (&self.layers.pre_y0, y0),
            (&self.layers.pre_y1, y1),
            (&self.layers.head_y0.out, y0),
            (&self.layers.head_y1.out, y1),
        ] {
            self.params.value_mut(&layer.bias_name())?.fill(v);
        }
        Ok(())
    }

    /// Maps covariates to the latent representation `z`.
    pub fn represent(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ReprCache)> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::dim("represent input", self.spec.input_dim, x.ncols()));
        }
        let x = self.standardizer.apply(x);
        match &self.layers.encoder {
            Some(enc) => {
                let (b, p, d) = (x.nrows(), x.ncols(), self.spec.encoder.token_dim);
                let w = self.params.value(EMBED_WEIGHT)?;
                let bias = self.params.value(EMBED_BIAS)?;
                let tokens = Array3::from_shape_fn((b, p, d), |(i, j, c)| x[[i, j]] * w[[j, c]] + bias[[j, c]]);
                let (encoded, encoder) = enc.forward(&self.params, tokens.view())?;
                let pooled = encoded.mean_axis(Axis(1)).expect("p > 0");
                let (z, proj) = self.layers.repr_proj.forward(&self.params, pooled.view())?;
                Ok((
                    z,
                    ReprCache::Tokens {
                        x,
                        encoder: Box::new(encoder),
                        proj,
                    },
                ))
            }
            None => {
                let (h, first) = self.layers.mlp_first.forward(&self.params, x.view())?;
                let (z, second) = self.layers.mlp_second.forward(&self.params, h.view())?;
                Ok((z, ReprCache::Mlp { first, second }))
            }
        }
    }

    /// Pre-subgrouping outcomes and their difference `te′ = ŷ′1 − ŷ′0`.
    pub fn pre_estimate(&self, z: ArrayView2<f64>) -> Result<StageOutput<PreCache>> {
        if z.ncols() != self.spec.hidden_dim {
            return Err(Error::dim("pre_estimate input", self.spec.hidden_dim, z.ncols()));
        }
        let (y0, c0) = self.layers.pre_y0.forward(&self.params, z)?;
        let (y1, c1) = self.layers.pre_y1.forward(&self.params, z)?;
        let y0 = y0.column(0).to_owned();
        let y1 = y1.column(0).to_owned();
        let te = &y1 - &y0;
        Ok((y0, y1, te, PreCache { y0: c0, y1: c1 }))
    }

    /// Outcome and propensity heads on `u = [z, v]`.
    pub fn predict_heads(&self, z: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<StageOutput<HeadsCache>> {
        if z.ncols() != self.spec.hidden_dim {
            return Err(Error::dim("predict_heads z", self.spec.hidden_dim, z.ncols()));
        }
        if v.ncols() != self.k || v.nrows() != z.nrows() {
            return Err(Error::dim(
                "predict_heads v",
                format!("{}x{}", z.nrows(), self.k),
                format!("{}x{}", v.nrows(), v.ncols()),
            ));
        }
        let u = concatenate(Axis(1), &[z, v]).map_err(|e| Error::Contract(e.to_string()))?;
        let (y0, c0) = self.layers.head_y0.forward(&self.params, u.view())?;
        let (y1, c1) = self.layers.head_y1.forward(&self.params, u.view())?;
        let (t, ct) = self.layers.head_t.forward(&self.params, u.view())?;
        Ok((y0, y1, t, HeadsCache { y0: c0, y1: c1, t: ct }))
    }

    /// Full forward pass retaining every cache for backpropagation.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(ModelOutput, ForwardCache)> {
        let centroids = self.centroids()?;
        let (z, repr) = self.represent(x)?;
        let (y0_pre, y1_pre, te_pre, pre) = self.pre_estimate(z.view())?;
        let v = subgroup_probs(te_pre.view(), centroids);
        let (y0, y1, t_hat, heads) = self.predict_heads(z.view(), v.view())?;
        let output = ModelOutput {
            z,
            y0_pre,
            y1_pre,
            te_pre,
            v,
            y0,
            y1,
            t_hat,
        };
        let cache = ForwardCache {
            repr,
            pre,
            heads,
            mu: centroids.mu().to_vec(),
        };
        Ok((output, cache))
    }

    pub fn forward_full(&self, x: ArrayView2<f64>) -> Result<ModelOutput> {
        self.forward_train(x).map(|(out, _)| out)
    }

    /// Pre-subgrouping treatment effects only; does not need centroids.
    pub fn te_pre(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (z, _) = self.represent(x)?;
        Ok(self.pre_estimate(z.view())?.2)
    }

    /// Accumulates parameter gradients of the loss given its gradients with
    /// respect to the outputs. Centroids are constants here.
    pub fn backward(&mut self, output: &ModelOutput, cache: &ForwardCache, grads: &OutputGrads) -> Result<()> {
        let n = output.len();
        for g in [&grads.y0_pre, &grads.y1_pre, &grads.y0, &grads.y1, &grads.t_hat] {
            if g.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: g.len(),
                });
            }
        }
        let layers = self.layers.clone();
        let params = &mut self.params;
        let h = self.spec.hidden_dim;

        let mut g_u = layers.head_y0.backward(params, &cache.heads.y0, grads.y0.view())?;
        g_u += &layers.head_y1.backward(params, &cache.heads.y1, grads.y1.view())?;
        g_u += &layers.head_t.backward(params, &cache.heads.t, grads.t_hat.view())?;
        let mut g_z = g_u.slice(s![.., ..h]).to_owned();
        let g_v = g_u.slice(s![.., h..]);

        // v = softmax(−|te′ − μ|)
        let g_logits = softmax_rows_backward(output.v.view(), g_v);
        let g_te: Array1<f64> = (0..n)
            .map(|i| {
                cache
                    .mu
                    .iter()
                    .enumerate()
                    .map(|(k, &mu)| -g_logits[[i, k]] * signum0(output.te_pre[i] - mu))
                    .sum()
            })
            .collect();

        let g_y1_pre = (&grads.y1_pre + &g_te).insert_axis(Axis(1));
        let g_y0_pre = (&grads.y0_pre - &g_te).insert_axis(Axis(1));
        g_z += &layers.pre_y0.backward(params, &cache.pre.y0, g_y0_pre.view())?;
        g_z += &layers.pre_y1.backward(params, &cache.pre.y1, g_y1_pre.view())?;

        match (&cache.repr, &layers.encoder) {
            (ReprCache::Tokens { x, encoder, proj }, Some(enc)) => {
                let g_pooled = layers.repr_proj.backward(params, proj, g_z.view())?;
                let (b, p, d) = (x.nrows(), x.ncols(), self.spec.encoder.token_dim);
                let inv_p = 1.0 / p as f64;
                let g_enc = Array3::from_shape_fn((b, p, d), |(i, _, c)| g_pooled[[i, c]] * inv_p);
                let g_tokens = enc.backward(params, encoder, g_enc.view())?;
                let mut g_w = Array2::<f64>::zeros((p, d));
                let mut g_b = Array2::<f64>::zeros((p, d));
                for i in 0..b {
                    for j in 0..p {
                        for c in 0..d {
                            let g = g_tokens[[i, j, c]];
                            g_w[[j, c]] += x[[i, j]] * g;
                            g_b[[j, c]] += g;
                        }
                    }
                }
                params.accumulate_grad(EMBED_WEIGHT, &g_w)?;
                params.accumulate_grad(EMBED_BIAS, &g_b)?;
            }
            (ReprCache::Mlp { first, second }, None) => {
                let g_h = layers.mlp_second.backward(params, second, g_z.view())?;
                layers.mlp_first.backward(params, first, g_h.view())?;
            }
            _ => return Err(Error::Contract("representation cache does not match model".into())),
        }
        Ok(())
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Soft subgroup membership `v_ik = softmax_k(−|te′_i − μ_k|)`.
pub fn subgroup_probs(te_pre: ArrayView1<f64>, centroids: &Centroids) -> Array2<f64> {
    let mu = centroids.mu();
    let mut v = Array2::zeros((te_pre.len(), mu.len()));
    for (i, mut row) in v.rows_mut().into_iter().enumerate() {
        let te = te_pre[i];
        // max(−d) = −min(d)
        let d_min = mu.iter().map(|m| (te - m).abs()).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for (slot, m) in row.iter_mut().zip(mu) {
            *slot = (d_min - (te - m).abs()).exp();
            sum += *slot;
        }
        row.mapv_inplace(|e| e / sum);
    }
    v
}
