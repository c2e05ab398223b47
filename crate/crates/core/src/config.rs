//! Run configuration: one TOML file with nested sections, every value
//! range-checked, unknown keys rejected. Command-line flags override the
//! file, the file overrides the built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionOptions;
use crate::keystates::KeystateOptions;
use crate::registry::RegistryOptions;
use crate::signals::SignalsOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("config value out of range: {0}")]
    Range(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerConfig {
    /// Use the file-backed deterministic mock instead of HTTP.
    pub mock: bool,
    pub endpoint: String,
    pub model: String,
    /// Tasks below this confidence (0..=10) are dropped.
    pub min_conf: f64,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub temperature: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            mock: true,
            endpoint: String::new(),
            model: String::new(),
            min_conf: 6.0,
            timeout_secs: 60,
            max_attempts: 3,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    /// Frame tolerances for keystate matching and the mAP averaging set.
    pub tolerances: Vec<u64>,
    /// Alignment tolerance for pairing labeled segments with ground-truth
    /// keystates during grounding evaluation.
    pub grounding_tolerance: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig { tolerances: vec![8, 16], grounding_tolerance: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker cap for episode-level parallelism.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { jobs: 1 }
    }
}

/// Every tunable of the pipeline, one section per stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub registry: RegistryOptions,
    pub fusion: FusionOptions,
    pub signals: SignalsOptions,
    pub keystates: KeystateOptions,
    pub labeler: LabelerConfig,
    pub evaluator: EvaluatorConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Config::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |v: f64, name: &str| -> Result<(), ConfigError> {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(ConfigError::Range(format!("{name} = {v}, expected [0, 1]")));
            }
            Ok(())
        };
        let positive = |v: f64, name: &str| -> Result<(), ConfigError> {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Range(format!("{name} = {v}, expected > 0")));
            }
            Ok(())
        };
        unit(self.registry.iou_thresh, "registry.iou_thresh")?;
        unit(self.registry.cross_frame_iou, "registry.cross_frame_iou")?;
        unit(self.registry.objectness_iou, "registry.objectness_iou")?;
        unit(self.registry.objectness_floor, "registry.objectness_floor")?;
        if self.registry.query_frames == 0 {
            return Err(ConfigError::Range("registry.query_frames must be at least 1".into()));
        }
        unit(self.fusion.min_area_frac, "fusion.min_area_frac")?;
        positive(self.fusion.static_eps_frac, "fusion.static_eps_frac")?;
        positive(self.fusion.mad_factor, "fusion.mad_factor")?;
        unit(self.signals.disp_thresh, "signals.disp_thresh")?;
        positive(self.signals.flow_thresh, "signals.flow_thresh")?;
        positive(self.signals.step_eps, "signals.step_eps")?;
        positive(self.signals.tau_rel, "signals.tau_rel")?;
        positive(self.signals.neighbor_radius, "signals.neighbor_radius")?;
        unit(self.signals.vertical_overlap, "signals.vertical_overlap")?;
        unit(self.signals.occlusion_iou, "signals.occlusion_iou")?;
        positive(self.signals.near_base_frac, "signals.near_base_frac")?;
        if self.signals.state_window == 0 {
            return Err(ConfigError::Range("signals.state_window must be at least 1".into()));
        }
        if self.signals.near_min_frames == 0 {
            return Err(ConfigError::Range("signals.near_min_frames must be at least 1".into()));
        }
        unit(self.keystates.keystate_threshold, "keystates.keystate_threshold")?;
        if self.keystates.enabled.is_empty() {
            return Err(ConfigError::Range("keystates.enabled must not be empty".into()));
        }
        if let Some(w) = &self.keystates.weights {
            for (h, v) in w {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(ConfigError::Range(format!("keystates.weights.{h} = {v}")));
                }
            }
        }
        if !(0.0..=10.0).contains(&self.labeler.min_conf) {
            return Err(ConfigError::Range(format!(
                "labeler.min_conf = {}, expected [0, 10]",
                self.labeler.min_conf
            )));
        }
        if self.evaluator.tolerances.is_empty() {
            return Err(ConfigError::Range("evaluator.tolerances must not be empty".into()));
        }
        if self.run.jobs == 0 {
            return Err(ConfigError::Range("run.jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical serialized form; the manifest hashes this so every
    /// effective value is pinned, defaults included.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
