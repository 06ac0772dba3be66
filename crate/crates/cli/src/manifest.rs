//! Run manifests written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

pub const THREADS_VAR: &str = "GAUSSKEY_THREADS";

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

/// Worker cap from `GAUSSKEY_THREADS` (default 1). Commands run on a single
/// thread, so any valid cap gives the same output.
pub fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR}={v:?} is not a count"))?;
            anyhow::ensure!(n > 0, "{THREADS_VAR} must be positive");
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

pub struct Run<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: Option<u64>,
    started: Instant,
}

impl<'a, C: Serialize> Run<'a, C> {
    pub fn start(command: &'a str, config: &'a C, seed: Option<u64>) -> Result<Self> {
        threads()?;
        Ok(Self { command, config, seed, started: Instant::now() })
    }

    pub fn finish(self, path: &Path, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION"),
            threads: threads()?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// `<file>.manifest.json` beside a file output.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
