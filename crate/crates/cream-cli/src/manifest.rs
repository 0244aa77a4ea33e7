//! Run manifests: every command records its resolved configuration, a
//! content hash of its inputs, its outputs and wall-clock time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::CmdError;

pub struct RunManifest {
    command: &'static str,
    config: Vec<(String, String)>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<String>,
    started: Instant,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        RunManifest {
            command,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    /// Record an input file by content hash.
    pub fn input(&mut self, path: &Path) -> Result<(), CmdError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CmdError::runtime(format!("cannot hash input {}: {e}", path.display())))?;
        self.inputs
            .push((path.to_path_buf(), hex(&Sha256::digest(&bytes))));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Hash of the resolved configuration plus all input hashes; identical
    /// inputs and flags yield identical hashes across reruns.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        let mut config = self.config.clone();
        config.sort();
        for (k, v) in &config {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        for (path, digest) in &self.inputs {
            h.update(format!("input {} {digest}\n", path.display()).as_bytes());
        }
        hex(&h.finalize())
    }

    /// Write `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path, exit_status: i32) -> Result<(), CmdError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let mut out = String::new();
        out.push_str(&format!("command={}\n", self.command));
        out.push_str(&format!("config_hash={}\n", self.config_hash()));
        let mut config = self.config.clone();
        config.sort();
        for (k, v) in &config {
            out.push_str(&format!("config.{k}={v}\n"));
        }
        for (path, digest) in &self.inputs {
            out.push_str(&format!("input={}:{digest}\n", path.display()));
        }
        for o in &self.outputs {
            out.push_str(&format!("output={o}\n"));
        }
        out.push_str(&format!(
            "wall_clock_s={:.3}\n",
            self.started.elapsed().as_secs_f64()
        ));
        out.push_str(&format!("exit_status={exit_status}\n"));
        let path = dir.join("manifest.txt");
        std::fs::write(&path, out)
            .map_err(|e| CmdError::runtime(format!("cannot write {}: {e}", path.display())))
    }
}
