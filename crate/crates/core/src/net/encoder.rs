//! Single-block Transformer encoder: multi-head self-attention followed by a
//! position-wise feedforward network, each wrapped in a residual connection.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;

use super::dense::{Activation, Dense, DenseCache};
use super::params::ParameterStore;
use super::NetSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub token_dim: usize,
    pub n_heads: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub out: Dense,
    pub ff_hidden: Dense,
    pub ff_out: Dense,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    batch: usize,
    tokens: usize,
    q: DenseCache,
    k: DenseCache,
    v: DenseCache,
    o: DenseCache,
    ff_hidden: DenseCache,
    ff_out: DenseCache,
    /// Attention weights indexed `[sample * n_heads + head]`, each `p × p`.
    pub attention: Vec<Array2<f64>>,
}

impl EncoderBlock {
    pub fn new(prefix: &str, token_dim: usize, n_heads: usize) -> Self {
        let ffn = 2 * token_dim;
        let d = token_dim;
        EncoderBlock {
            token_dim,
            n_heads,
            query: Dense::new(format!("{prefix}.attn.query"), d, d, Activation::Identity),
            key: Dense::new(format!("{prefix}.attn.key"), d, d, Activation::Identity),
            value: Dense::new(format!("{prefix}.attn.value"), d, d, Activation::Identity),
            out: Dense::new(format!("{prefix}.attn.out"), d, d, Activation::Identity),
            ff_hidden: Dense::new(format!("{prefix}.ffn.hidden"), d, ffn, Activation::Relu),
            ff_out: Dense::new(format!("{prefix}.ffn.out"), ffn, d, Activation::Identity),
        }
    }

    fn layers(&self) -> [&Dense; 6] {
        [
            &self.query,
            &self.key,
            &self.value,
            &self.out,
            &self.ff_hidden,
            &self.ff_out,
        ]
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterStore, rng: &mut R) {
        for layer in self.layers() {
            layer.init(params, rng);
        }
    }

    fn head_dim(&self) -> usize {
        self.token_dim / self.n_heads
    }

    pub fn forward(&self, params: &ParameterStore, tokens: ArrayView3<f64>) -> Result<(Array3<f64>, EncoderCache)> {
        let (batch, p, d) = tokens.dim();
        if d != self.token_dim {
            return Err(Error::dim("encoder tokens", self.token_dim, d));
        }
        let x = tokens
            .to_shape((batch * p, d))
            .map_err(|e| Error::Contract(e.to_string()))?
            .to_owned();

        let (q, q_cache) = self.query.forward(params, x.view())?;
        let (k, k_cache) = self.key.forward(params, x.view())?;
        let (v, v_cache) = self.value.forward(params, x.view())?;

        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = Array2::<f64>::zeros((batch * p, d));
        let mut attention = Vec::with_capacity(batch * self.n_heads);
        for b in 0..batch {
            let rows = b * p..(b + 1) * p;
            for h in 0..self.n_heads {
                let cols = h * hd..(h + 1) * hd;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let weights = softmax_rows(qh.dot(&kh.t()) * scale);
                mixed.slice_mut(s![rows.clone(), cols]).assign(&weights.dot(&vh));
                attention.push(weights);
            }
        }

        let (attn_out, o_cache) = self.out.forward(params, mixed.view())?;
        let hidden = &x + &attn_out;
        let (f1, ff_hidden_cache) = self.ff_hidden.forward(params, hidden.view())?;
        let (f2, ff_out_cache) = self.ff_out.forward(params, f1.view())?;
        let encoded = hidden + f2;

        let encoded = encoded
            .into_shape_with_order((batch, p, d))
            .map_err(|e| Error::Contract(e.to_string()))?;
        let cache = EncoderCache {
            batch,
            tokens: p,
            q: q_cache,
            k: k_cache,
            v: v_cache,
            o: o_cache,
            ff_hidden: ff_hidden_cache,
            ff_out: ff_out_cache,
            attention,
        };
        Ok((encoded, cache))
    }

    /// Backpropagates `grad_out` (`batch × p × d`) and returns the gradient
    /// with respect to the input tokens.
    pub fn backward(
        &self,
        params: &mut ParameterStore,
        cache: &EncoderCache,
        grad_out: ArrayView3<f64>,
    ) -> Result<Array3<f64>> {
        let (batch, p, d) = grad_out.dim();
        if batch != cache.batch || p != cache.tokens || d != self.token_dim {
            return Err(Error::Contract(format!(
                "stale encoder cache: cached {}x{}x{}, gradient {batch}x{p}x{d}",
                cache.batch, cache.tokens, self.token_dim
            )));
        }
        let g = grad_out
            .to_shape((batch * p, d))
            .map_err(|e| Error::Contract(e.to_string()))?
            .to_owned();

        // out = hidden + ffn(hidden)
        let g_f1 = self.ff_out.backward(params, &cache.ff_out, g.view())?;
        let g_hidden = &g + &self.ff_hidden.backward(params, &cache.ff_hidden, g_f1.view())?;

        // hidden = x + attn(x)
        let g_mixed = self.out.backward(params, &cache.o, g_hidden.view())?;
        let q = &cache.q.output;
        let k = &cache.k.output;
        let v = &cache.v.output;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut g_q = Array2::<f64>::zeros((batch * p, d));
        let mut g_k = Array2::<f64>::zeros((batch * p, d));
        let mut g_v = Array2::<f64>::zeros((batch * p, d));
        for b in 0..batch {
            let rows = b * p..(b + 1) * p;
            for h in 0..self.n_heads {
                let cols = h * hd..(h + 1) * hd;
                let weights = &cache.attention[b * self.n_heads + h];
                let g_oh = g_mixed.slice(s![rows.clone(), cols.clone()]);
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);

                let g_weights = g_oh.dot(&vh.t());
                g_v.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&weights.t().dot(&g_oh));
                let g_scores = softmax_rows_backward(weights.view(), g_weights.view()) * scale;
                g_q.slice_mut(s![rows.clone(), cols.clone()]).assign(&g_scores.dot(&kh));
                g_k.slice_mut(s![rows.clone(), cols]).assign(&g_scores.t().dot(&qh));
            }
        }
        let mut g_x = g_hidden;
        g_x += &self.query.backward(params, &cache.q, g_q.view())?;
        g_x += &self.key.backward(params, &cache.k, g_k.view())?;
        g_x += &self.value.backward(params, &cache.v, g_v.view())?;

        g_x.into_shape_with_order((batch, p, d))
            .map_err(|e| Error::Contract(e.to_string()))
    }
}

/// Runs the encoder block configured by `spec`.
pub fn encoder_forward(
    params: &ParameterStore,
    spec: &NetSpec,
    tokens: ArrayView3<f64>,
) -> Result<(Array3<f64>, EncoderCache)> {
    if !spec.encoder.use_encoder {
        return Err(Error::Config("encoder is disabled in the network spec".into()));
    }
    EncoderBlock::new(super::ENCODER_PREFIX, spec.encoder.token_dim, spec.encoder.n_heads).forward(params, tokens)
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows(mut scores: Array2<f64>) -> Array2<f64> {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    scores
}

/// Gradient of a row-wise softmax: `a ⊙ (g − rowsum(g ⊙ a))`.
pub fn softmax_rows_backward(weights: ArrayView2<f64>, grad: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(weights.raw_dim());
    for ((a, g), mut o) in weights.rows().into_iter().zip(grad.rows()).zip(out.rows_mut()) {
        let dot: f64 = a.iter().zip(g.iter()).map(|(x, y)| x * y).sum();
        for ((o, &ai), &gi) in o.iter_mut().zip(a.iter()).zip(g.iter()) {
            *o = ai * (gi - dot);
        }
    }
    out
}
