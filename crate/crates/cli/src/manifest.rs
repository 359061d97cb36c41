use std::path::PathBuf;
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_time_seconds: f64,
    /// Resident-set high-water mark, when the platform reports one.
    pub peak_memory_bytes: Option<u64>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<PathBuf>, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            inputs,
            config,
            seed,
            threads: rayon::current_num_threads(),
            wall_time_seconds: 0.0,
            peak_memory_bytes: None,
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, elapsed: Duration, outputs: Vec<PathBuf>) {
        self.wall_time_seconds = elapsed.as_secs_f64();
        self.peak_memory_bytes = peak_rss();
        self.outputs = outputs;
    }
}

#[cfg(target_os = "linux")]
fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(not(target_os = "linux"))]
fn peak_rss() -> Option<u64> {
    None
}
