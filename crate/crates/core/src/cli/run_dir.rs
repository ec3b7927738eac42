//! Provenance files written into every output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{MadtError, Result};

/// Object hash in the style of git: `sha256("blob <len>\0" ‖ content)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<RunDir> {
        fs::create_dir_all(path).map_err(|e| MadtError::io(path, e))?;
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, text).map_err(|e| MadtError::io(&p, e))
    }

    /// Resolved config, root seed and input hashes.
    pub fn record(&self, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
        self.write("resolved_config.toml", &cfg.to_toml())?;
        self.write("seed", &format!("{}\n", cfg.seed))?;
        let mut lines = String::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| MadtError::io(p, e))?;
            lines += &format!("{}  {}\n", content_hash(&bytes), p.display());
        }
        self.write("inputs.sha256", &lines)
    }

    pub fn metrics(&self, name: &str) -> Result<JsonLines> {
        let p = self.file(name);
        let f = File::create(&p).map_err(|e| MadtError::io(&p, e))?;
        Ok(JsonLines {
            out: BufWriter::new(f),
            path: p,
        })
    }
}

pub struct JsonLines {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonLines {
    pub fn push(&mut self, record: &impl Serialize) -> Result<()> {
        let line = serde_json::to_string(record).expect("metrics serialize");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| MadtError::io(&self.path, e))
    }
}
