//! Run configuration: one JSON document with a section per module. Command
//! line flags are applied on top of it and win.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stylebc::evaluation::{EvalConfig, MetricRegistry, Property};
use stylebc::maze::EnvConfig;
use stylebc::neural::ArchConfig;
use stylebc::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySettings {
    pub resolution: usize,
    pub beta: f64,
    pub reference: usize,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self {
            resolution: 64,
            beta: 10.0,
            reference: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSettings {
    pub metric: String,
    pub min: f64,
    pub max: f64,
    pub seed: u64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            metric: "length".into(),
            min: 70.0,
            max: 80.0,
            seed: 0,
        }
    }
}

impl ControlSettings {
    pub fn property(&self) -> Property {
        Property::new(&self.metric, self.min, self.max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
    /// Preset name or inline config for new sessions.
    pub env: EnvConfig,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            env: EnvConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled maze name or path to an ASCII maze file.
    pub maze: String,
    /// Network shape; derived from the maze when absent.
    pub arch: Option<ArchConfig>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub density: DensitySettings,
    pub control: ControlSettings,
    pub serve: ServeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            maze: "medium_maze".into(),
            arch: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            density: DensitySettings::default(),
            control: ControlSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    /// Every violated constraint across all sections, prefixed by section.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.maze.trim().is_empty() {
            out.push("maze: must name a bundled maze or a file".into());
        }
        if let Some(arch) = &self.arch {
            if let Err(e) = arch.validate() {
                out.push(format!("arch: {e}"));
            }
        }
        out.extend(self.train.violations().into_iter().map(|v| format!("train.{v}")));
        out.extend(self.eval.violations().into_iter().map(|v| format!("eval.{v}")));
        if self.density.resolution == 0 {
            out.push("density.resolution: must be at least 1".into());
        }
        if !(self.density.beta.is_finite() && self.density.beta >= 0.0) {
            out.push(format!("density.beta: must be finite and >= 0, got {}", self.density.beta));
        }
        if let Err(e) = self.control.property().validate(&MetricRegistry::default()) {
            out.push(format!("control: {e}"));
        }
        out.extend(self.serve.env.violations().into_iter().map(|v| format!("serve.env.{v}")));
        out
    }
}
