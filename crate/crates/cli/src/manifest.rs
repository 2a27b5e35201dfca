use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;

/// Provenance record written next to a command's primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub git_describe: &'static str,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: Option<&Path>) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                config: config.map(Path::to_path_buf),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                seed: None,
                version: env!("CARGO_PKG_VERSION"),
                git_describe: env!("DLNAGG_GIT_DESCRIBE"),
                started_unix,
                wall_clock_seconds: 0.0,
            },
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.to_path_buf());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    /// Writes `<primary output>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> Result<PathBuf> {
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        let path = sidecar(primary, "manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// `<path>.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
