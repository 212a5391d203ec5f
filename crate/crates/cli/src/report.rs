//! Output files: every artifact starts with the tool version, the config hash and the seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use smoothlin_core::Vector;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Header {
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    /// Hashes the canonical JSON of the run configuration (subcommand, system, seed, overrides).
    pub fn new(config: &Value, seed: u64) -> Self {
        let digest = Sha256::digest(config.to_string().as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { tool: format!("smoothlin {VERSION}"), config_hash, seed }
    }
}

pub struct Reporter {
    dir: PathBuf,
    header: Header,
    written: Vec<PathBuf>,
}

impl Reporter {
    pub fn new(dir: &Path, header: Header) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), header, written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// CSV with `#` header lines; the body depends only on config and seed.
    pub fn csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let mut out = Vec::new();
        writeln!(out, "# tool: {}", self.header.tool)?;
        writeln!(out, "# config_hash: {}", self.header.config_hash)?;
        writeln!(out, "# seed: {}", self.header.seed)?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(columns)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        fs::write(&path, out)?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let doc = json!({ "header": self.header, "report": body });
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        self.written.push(path);
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> std::io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.written.push(path);
        Ok(())
    }
}

/// Shortest round-trip representation, so the text is a function of the value alone.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Space-separated coordinates in one CSV cell.
pub fn vec_cell(v: &Vector) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}
