use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use subgroup_te::io::atomic_write;

use crate::failure::Failure;

/// Record of one run: enough to repeat it exactly.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub metrics: Value,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], seed: Option<u64>, config: impl Serialize) -> Result<Self, Failure> {
        Ok(Manifest {
            command: command.into(),
            argv: argv.to_vec(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: serde_json::to_value(config)?,
            metrics: Value::Null,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        write_json(path, self)
    }
}

/// `<out>.manifest.json` next to the primary output.
pub fn path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}
