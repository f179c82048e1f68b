//! Replay record written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lltk_core::io::{fnv1a_file, KvDoc};
use lltk_core::Result;

use crate::config::Config;

pub const TOOL: &str = "lltk";

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub struct RunManifest {
    command: String,
    config: KvDoc,
    seeds: Vec<(String, u64)>,
    extra: KvDoc,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: u64,
}

impl RunManifest {
    pub fn start(command: &str, config: &Config) -> Self {
        Self {
            command: command.to_string(),
            config: config.doc.clone(),
            seeds: config.seeds().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            extra: KvDoc::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    /// A manifest for commands that run without a config file.
    pub fn bare(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: KvDoc::new(),
            seeds: Vec::new(),
            extra: KvDoc::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.extra.set(key, value);
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        if !self.inputs.contains(&path) {
            self.inputs.push(path);
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    /// Hashes every listed file and writes `<dir>/<name>.manifest`.
    pub fn finish(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let mut kv = KvDoc::new();
        kv.set("tool", TOOL);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        kv.set("command", &self.command);
        for (k, v) in self.extra.entries() {
            kv.set(k, v);
        }
        for (k, v) in self.config.entries() {
            kv.set(format!("config.{k}"), v);
        }
        for (k, v) in &self.seeds {
            kv.set(format!("seed.{k}"), v);
        }
        for (tag, files) in [("input", &self.inputs), ("output", &self.outputs)] {
            kv.set(format!("{tag}s"), files.len());
            for (i, p) in files.iter().enumerate() {
                kv.set(format!("{tag}.{i:03}.path"), p.display());
                kv.set(format!("{tag}.{i:03}.fnv1a"), format!("{:016x}", fnv1a_file(p)?));
            }
        }
        kv.set("started", self.started);
        kv.set("finished", unix_now());
        let path = dir.join(format!("{name}.manifest"));
        kv.write(&path)?;
        Ok(path)
    }
}
