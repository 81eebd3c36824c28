//! Run manifests: what was run, with which inputs, and what it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug)]
pub struct Manifest {
    command: String,
    out_dir: PathBuf,
    entries: Vec<(String, String)>,
    config: Option<String>,
    timings: Vec<(String, f64)>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            entries: Vec::new(),
            config: None,
            timings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn entry(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn config(&mut self, text: &str) {
        self.entry("config_sha256", sha256_hex(text.as_bytes()));
        self.config = Some(text.to_string());
    }

    /// Runs `f` and records its wall time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let r = f();
        self.timings.push((phase.to_string(), t.elapsed().as_secs_f64()));
        r
    }

    /// Registers a file already written into the output directory.
    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        if let Some(cfg) = &self.config {
            let _ = writeln!(s, "\n[config]");
            s.push_str(cfg);
        }
        let _ = writeln!(s, "\n[timings]");
        for (k, v) in &self.timings {
            let _ = writeln!(s, "{k} = {v:.3}");
        }
        let _ = writeln!(s, "\n[outputs]");
        let _ = writeln!(s, "file,lines,sha256");
        for name in &self.outputs {
            let bytes = fs::read(self.out_dir.join(name))?;
            let lines = bytes.iter().filter(|&&b| b == b'\n').count();
            let _ = writeln!(s, "{name},{lines},{}", sha256_hex(&bytes));
        }
        fs::write(self.out_dir.join(MANIFEST_FILE), s)
    }
}

/// Value of `key` in the top block of a manifest.
pub fn lookup(text: &str, key: &str) -> Option<String> {
    text.lines()
        .take_while(|l| !l.starts_with('['))
        .filter_map(|l| l.split_once(" = "))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.to_string())
}
