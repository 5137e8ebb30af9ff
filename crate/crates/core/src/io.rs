//! CSV datasets, JSON checkpoints, newline-delimited training logs and
//! experiment configuration.
//!
//! CSV layout: `id,x0,...,x{p-1},t,y[,y0,y1,te]`, floats written with 17
//! significant digits.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Oracle};
use crate::error::{Error, Result};
use crate::model::{Standardizer, SubgroupTeModel};
use crate::net::{NamedTensor, NetSpec, ParameterStore};
use crate::subgroup::Centroids;
use crate::synthdata::GenConfig;
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

const ORACLE_COLUMNS: [&str; 3] = ["y0", "y1", "te"];

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => PathBuf::from(tmp_name),
    };
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn csv_header(p: usize, with_oracle: bool) -> Vec<String> {
    let mut header = vec!["id".to_string()];
    header.extend((0..p).map(|j| format!("x{j}")));
    header.push("t".into());
    header.push("y".into());
    if with_oracle {
        header.extend(ORACLE_COLUMNS.iter().map(|s| s.to_string()));
    }
    header
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(data.n_features(), data.oracle.is_some()))?;
    for i in 0..data.len() {
        let mut rec = vec![i.to_string()];
        rec.extend(data.x.row(i).iter().map(|&v| format_float(v)));
        rec.push(format!("{}", data.t[i] as u8));
        rec.push(format_float(data.y[i]));
        if let Some(o) = &data.oracle {
            rec.extend([o.y0[i], o.y1[i], o.te[i]].map(format_float));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

fn parse_field(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column `{column}`: non-finite value"),
        });
    }
    Ok(v)
}

/// Reads a dataset; rows are numbered from 1 after the header in errors.
pub fn load_csv(path: impl AsRef<Path>, require_oracle: bool) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut x_cols = Vec::new();
    while let Some(c) = pos(&format!("x{}", x_cols.len())) {
        x_cols.push(c);
    }
    if x_cols.is_empty() {
        return Err(Error::MissingColumn("x0".into()));
    }
    let t_col = pos("t").ok_or_else(|| Error::MissingColumn("t".into()))?;
    let y_col = pos("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let oracle_cols: Vec<Option<usize>> = ORACLE_COLUMNS.iter().map(|c| pos(c)).collect();
    let has_oracle = match oracle_cols.iter().filter(|c| c.is_some()).count() {
        0 => false,
        3 => true,
        _ => {
            let missing = ORACLE_COLUMNS
                .iter()
                .zip(&oracle_cols)
                .find(|(_, c)| c.is_none())
                .map(|(n, _)| *n)
                .unwrap_or("te");
            return Err(Error::MissingColumn(missing.into()));
        }
    };
    if require_oracle && !has_oracle {
        return Err(Error::MissingOracle);
    }

    let p = x_cols.len();
    let mut xs = Vec::new();
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    let (mut y0s, mut y1s, mut tes) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize, name: &str| {
            rec.get(c).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field `{name}`"),
            })
        };
        for (j, &c) in x_cols.iter().enumerate() {
            xs.push(parse_field(field(c, "x")?, row, &format!("x{j}"))?);
        }
        let t = parse_field(field(t_col, "t")?, row, "t")?;
        if t != 0.0 && t != 1.0 {
            return Err(Error::Parse {
                row,
                message: format!("treatment must be 0 or 1, got {t}"),
            });
        }
        ts.push(t);
        ys.push(parse_field(field(y_col, "y")?, row, "y")?);
        if has_oracle {
            let vals: Vec<f64> = ORACLE_COLUMNS
                .iter()
                .zip(&oracle_cols)
                .map(|(name, c)| parse_field(field(c.expect("present"), name)?, row, name))
                .collect::<Result<_>>()?;
            y0s.push(vals[0]);
            y1s.push(vals[1]);
            tes.push(vals[2]);
        }
    }
    let n = ts.len();
    let x = Array2::from_shape_vec((n, p), xs).map_err(|e| Error::Corrupt(e.to_string()))?;
    let oracle = has_oracle.then(|| Oracle {
        y0: Array1::from(y0s),
        y1: Array1::from(y1s),
        te: Array1::from(tes),
    });
    Dataset::new(x, Array1::from(ts), Array1::from(ys), oracle)
}

/// Persisted model plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub net_spec: NetSpec,
    pub train_config: TrainConfig,
    pub k: usize,
    pub params: BTreeMap<String, NamedTensor>,
    pub centroids: Option<Centroids>,
    pub standardizer: Standardizer,
    pub best_val_mse: Option<f64>,
    pub seed: u64,
    /// Row count of the dataset the model was trained on.
    pub n_samples: Option<usize>,
}

impl Checkpoint {
    pub fn from_model(model: &SubgroupTeModel, train_config: &TrainConfig) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            net_spec: model.spec.clone(),
            train_config: train_config.clone(),
            k: model.k,
            params: model.params.to_tensors(),
            centroids: model.centroids.clone(),
            standardizer: model.standardizer.clone(),
            best_val_mse: None,
            seed: train_config.seed,
            n_samples: None,
        }
    }

    pub fn into_model(self) -> Result<SubgroupTeModel> {
        let params = ParameterStore::from_tensors(self.params)?;
        SubgroupTeModel::from_parts(self.net_spec, self.k, params, self.centroids, self.standardizer)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(checkpoint).map_err(|e| Error::Corrupt(e.to_string()))?;
    atomic_write(path, text.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SubgroupTeModel, Checkpoint)> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let checkpoint: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
    let model = checkpoint.clone().into_model()?;
    Ok((model, checkpoint))
}

/// One JSON document per line.
pub struct NdjsonWriter<W: Write> {
    inner: W,
}

impl NdjsonWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        if let Some(dir) = path.as_ref().parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        Ok(NdjsonWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(inner: W) -> Self {
        NdjsonWriter { inner }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record).map_err(|e| Error::Io(e.into()))?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Metric switches for an experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricFlags {
    /// Also report the square-root form of PEHE.
    pub pehe_root: bool,
    /// Fit and report the ridge T-learner baseline.
    pub baseline: bool,
    pub baseline_lambda: f64,
}

impl Default for MetricFlags {
    fn default() -> Self {
        MetricFlags {
            pehe_root: false,
            baseline: true,
            baseline_lambda: 1.0,
        }
    }
}

/// A single run: one data source, a training configuration and an output
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub metrics: MetricFlags,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.data_path, &self.generate) {
            (Some(p), None) => {
                if !p.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
            (None, Some(g)) => g.validate()?,
            _ => {
                return Err(Error::Config(
                    "exactly one of `data_path` or `generate` must be set".into(),
                ))
            }
        }
        self.train.validate()
    }

    pub fn load_data(&self) -> Result<Dataset> {
        self.validate()?;
        match (&self.data_path, &self.generate) {
            (Some(p), _) => load_csv(p, false),
            (_, Some(g)) => Ok(crate::synthdata::generate(g)?.data),
            _ => unreachable!("validated"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(3, true).join(","), "id,x0,x1,x2,t,y,y0,y1,te");
        assert_eq!(csv_header(2, false).join(","), "id,x0,x1,t,y");
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1 + 0.2, -1.0 / 3.0, 1e-300, 123456.789e10] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn ndjson_one_record_per_line() {
        let mut w = NdjsonWriter::new(Vec::new());
        w.write(&array![1.0, 2.0].to_vec()).unwrap();
        w.write(&"x").unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text, "[1.0,2.0]\n\"x\"\n");
    }

    #[test]
    fn experiment_needs_exactly_one_source() {
        let mut cfg = ExperimentConfig {
            data_path: None,
            generate: None,
            train: TrainConfig::default(),
            out_dir: "out".into(),
            metrics: MetricFlags::default(),
        };
        assert!(cfg.validate().is_err());
        cfg.generate = Some(GenConfig::default());
        assert!(cfg.validate().is_ok());
        cfg.data_path = Some("data.csv".into());
        assert!(cfg.validate().is_err());
    }
}
