//! The experiment config file: one JSON document drives a whole run.
//!
//! The `task` section is a corpus [`TaskSpec`]; `model` and `train`
//! mirror the library configs, with vocabulary sizes and the feature
//! dimension derived from the task so they cannot drift apart.

use std::path::{Path, PathBuf};

use ctcst_core::corpus::TaskSpec;
use ctcst_core::nn::ModelConfig;
use ctcst_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub num_layers: usize,
    pub attention_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    #[serde(default = "default_conv_layers")]
    pub conv_layers: usize,
    #[serde(default = "default_conv_stride")]
    pub conv_stride: usize,
    #[serde(default)]
    pub asr_layer: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_conv_layers() -> usize {
    2
}

fn default_conv_stride() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStorageChoice {
    #[default]
    Inline,
    Sidecar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub n_train: usize,
    pub n_eval: usize,
    #[serde(default)]
    pub feature_storage: FeatureStorageChoice,
    /// Optional JSON-lines file with externally produced
    /// source-to-hypothesis alignments; the lexical aligner is used when
    /// absent.
    #[serde(default)]
    pub sigma_alignments: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
}

/// A parsed config plus the hash of the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
    config.task.validate().map_err(|e| CliError::Config(e.to_string()))?;
    config.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = seed_override {
        config.model.seed = seed;
        config.train.seed = seed;
    }
    let hash = hex_digest(&bytes);
    let loaded = LoadedConfig { config, hash };
    // Surface model-section mistakes now rather than at first forward.
    loaded.model_config().map(|_| ()).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(loaded)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    /// Assemble the full model config; vocabulary sizes include the blank.
    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let m = &self.config.model;
        let task = &self.config.task;
        let cfg = ModelConfig {
            num_layers: m.num_layers,
            attention_dim: m.attention_dim,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            feat_dim: task.feat_dim,
            conv_layers: m.conv_layers,
            conv_stride: m.conv_stride,
            asr_layer: m.asr_layer,
            st_vocab_size: task.target_vocab().size(),
            asr_vocab_size: m.asr_layer.map(|_| task.source_vocab().size()),
            dropout: m.dropout,
            seed: m.seed,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
