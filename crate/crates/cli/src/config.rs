//! Project configuration file: schema-validated defaults for the CLI.
//!
//! Flags always win over config values. Unknown keys are rejected so typos
//! fail loudly instead of silently using defaults.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;

use latentmark::detection::DetectConfig;
use latentmark::diffusion::{DenoiserTrainConfig, ToyDatasetConfig};
use latentmark::flow::train::FlowTrainConfig;
use latentmark::harness::ScheduleConfig;
use latentmark::watermark::embed::EmbedConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    pub seed: u64,
    pub paths: ProjectPaths,
    pub dataset: ToyDatasetConfig,
    pub schedule: ScheduleConfig,
    pub denoiser_train: DenoiserTrainConfig,
    pub flow_train: FlowTrainConfig,
    pub embed: EmbedConfig,
    pub detect: DetectConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectPaths {
    pub denoiser_checkpoint: Option<PathBuf>,
    pub flow_checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl ProjectConfig {
    pub fn load(path: &std::path::Path) -> latentmark::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ProjectConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Stable hash of the effective configuration, for the reproducibility
    /// header. DefaultHasher with fresh state is deterministic across runs.
    pub fn hash(&self) -> u64 {
        let canonical = serde_json::to_string(self).unwrap_or_default();
        let mut h = DefaultHasher::new();
        canonical.hash(&mut h);
        h.finish()
    }
}
