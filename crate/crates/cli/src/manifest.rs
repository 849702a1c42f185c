use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::CliResult;
use crate::output::write_json;

/// Written next to the outputs of every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub threads: usize,
    pub wall_clock_s: f64,
    pub effective_config: serde_json::Value,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                config_path: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                seeds: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                threads: rayon::current_num_threads(),
                wall_clock_s: 0.0,
                effective_config: serde_json::Value::Null,
            },
        }
    }

    pub fn config_path(&mut self, p: Option<&Path>) -> &mut Self {
        self.manifest.config_path = p.map(display);
        self
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.manifest.inputs.push(display(p));
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.manifest.outputs.push(display(p));
        self
    }

    pub fn seeds(&mut self, seeds: &[u64]) -> &mut Self {
        self.manifest.seeds = seeds.to_vec();
        self
    }

    pub fn effective_config(&mut self, config: &impl Serialize) -> CliResult<&mut Self> {
        self.manifest.effective_config = serde_json::to_value(config)?;
        Ok(self)
    }

    pub fn write(&mut self, path: &Path) -> CliResult<PathBuf> {
        self.manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        write_json(path, &self.manifest)?;
        Ok(path.to_path_buf())
    }
}
