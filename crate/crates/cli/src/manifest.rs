use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use meshtex::config::KvConfig;

pub const MANIFEST_NAME: &str = "run.manifest";

/// Record of one invocation: the resolved settings (loadable again with
/// `--config`), inputs, outputs, timing and summary metrics.
pub struct RunManifest {
    command: String,
    settings: KvConfig,
    started: Instant,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
    metrics: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, settings: KvConfig) -> Self {
        Self {
            command: command.to_string(),
            settings,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.push((key.to_string(), path.display().to_string()));
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.outputs.push((key.to_string(), path.display().to_string()));
    }

    pub fn metric(&mut self, key: &str, value: impl std::fmt::Display) {
        self.metrics.push((key.to_string(), value.to_string()));
    }

    pub fn write(self, dir: &Path) -> anyhow::Result<PathBuf> {
        let mut doc = self.settings;
        doc.set("run", "command", &self.command)
            .set("run", "version", env!("CARGO_PKG_VERSION"))
            .set("run", "wall_time_s", format!("{:.3}", self.started.elapsed().as_secs_f64()));
        for (section, entries) in [
            ("inputs", &self.inputs),
            ("outputs", &self.outputs),
            ("metrics", &self.metrics),
        ] {
            for (k, v) in entries {
                doc.set(section, k, v);
            }
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_NAME);
        doc.save(&path)?;
        Ok(path)
    }
}
