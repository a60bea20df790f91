//! One JSON record per run, written next to the run's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every parsed flag, defaults included, so the run can be repeated.
    pub parameters: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub duration_seconds: f64,
    pub version: String,
}

/// Collects inputs and outputs while a subcommand runs.
pub struct Recorder {
    started: Instant,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new() -> Self {
        Self { started: Instant::now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn finish<P: Serialize>(self, subcommand: &str, parameters: &P, seed: Option<u64>) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_owned(),
            parameters: serde_json::to_value(parameters).unwrap_or(serde_json::Value::Null),
            inputs: self.inputs,
            outputs: self.outputs,
            seed,
            threads: rayon::current_num_threads(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }
}
