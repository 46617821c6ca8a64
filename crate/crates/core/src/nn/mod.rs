//! Encoder-only transduction model: convolutional subsampler, transformer
//! stack, and CTC projection heads for translation (final layer) and
//! optionally recognition (an intermediate layer).

mod checkpoint;
mod encoder;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use encoder::{
    forward, forward_from_layer, grad_wrt_activations, loss_and_grad, reinitialize_st_head,
    ForwardOutput, LossOptions, LossParts,
};
pub(crate) use encoder::build_forward_for_analysis;

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite activation at layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("selector out of range: {0}")]
    SelectorOutOfRange(String),
    #[error("target infeasible after downsampling: needs {needed} frames, have {available}")]
    InfeasibleTarget { needed: usize, available: usize },
    #[error("unknown parameter tensor {0:?}")]
    UnknownTensor(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Ctc(#[from] crate::ctc::CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub attention_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub feat_dim: usize,
    #[serde(default = "default_conv_layers")]
    pub conv_layers: usize,
    #[serde(default = "default_conv_stride")]
    pub conv_stride: usize,
    /// Intermediate layer carrying the recognition CTC head, 1-based.
    pub asr_layer: Option<usize>,
    pub st_vocab_size: usize,
    pub asr_vocab_size: Option<usize>,
    pub dropout: f64,
    pub seed: u64,
}

fn default_conv_layers() -> usize {
    2
}

fn default_conv_stride() -> usize {
    2
}

impl ModelConfig {
    /// Desk-scale defaults: 4 layers, dim 32, 2 heads, ffn 64.
    pub fn toy(feat_dim: usize, st_vocab_size: usize, asr: Option<(usize, usize)>) -> Self {
        Self {
            num_layers: 4,
            attention_dim: 32,
            num_heads: 2,
            ffn_dim: 64,
            feat_dim,
            conv_layers: 2,
            conv_stride: 2,
            asr_layer: asr.map(|(layer, _)| layer),
            st_vocab_size,
            asr_vocab_size: asr.map(|(_, vocab)| vocab),
            dropout: 0.0,
            seed: 0,
        }
    }

    /// Full-scale defaults: 12 layers, dim 256, 4 heads, ffn 2048.
    pub fn full_scale(feat_dim: usize, st_vocab_size: usize, asr: Option<(usize, usize)>) -> Self {
        Self {
            num_layers: 12,
            attention_dim: 256,
            num_heads: 4,
            ffn_dim: 2048,
            feat_dim,
            conv_layers: 2,
            conv_stride: 2,
            asr_layer: asr.map(|(layer, _)| layer),
            st_vocab_size,
            asr_vocab_size: asr.map(|(_, vocab)| vocab),
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |msg: String| Err(NnError::InvalidConfig(msg));
        if self.attention_dim == 0 || self.attention_dim % self.num_heads != 0 {
            return err(format!(
                "attention_dim {} not divisible by num_heads {}",
                self.attention_dim, self.num_heads
            ));
        }
        if let Some(m) = self.asr_layer {
            if m < 1 || m > self.num_layers {
                return err(format!("asr_layer {m} outside 1..={}", self.num_layers));
            }
            if self.asr_vocab_size.is_none() {
                return err("asr_layer set without asr_vocab_size".into());
            }
        } else if self.asr_vocab_size.is_some() {
            return err("asr_vocab_size set without asr_layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.st_vocab_size < 2 {
            return err("st_vocab_size must be at least 2".into());
        }
        if self.feat_dim == 0 || self.conv_layers == 0 || self.conv_stride == 0 {
            return err("feat_dim, conv_layers and conv_stride must be positive".into());
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        self.conv_stride.pow(self.conv_layers as u32)
    }

    /// Frame count after the subsampler (ceiling division per conv layer).
    pub fn downsampled_len(&self, frames: usize) -> usize {
        let mut len = frames;
        for _ in 0..self.conv_layers {
            len = len.div_ceil(self.conv_stride);
        }
        len
    }
}

/// A real-valued input sequence (frames x feat_dim).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub values: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Named parameter tensors plus the config that shaped them. Iteration
/// order is fixed at initialization and preserved by checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    config: ModelConfig,
    tensors: IndexMap<String, Array2<f64>>,
}

impl ParameterSet {
    /// Seeded Xavier-uniform initialization from the config.
    pub fn init(config: &ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(config.seed, "params"));
        let mut tensors = IndexMap::new();
        let d = config.attention_dim;
        let k = 3usize; // conv kernel

        let mut in_ch = config.feat_dim;
        for i in 0..config.conv_layers {
            tensors.insert(format!("conv.{i}.weight"), xavier(&mut rng, in_ch * k, d));
            tensors.insert(format!("conv.{i}.bias"), Array2::zeros((1, d)));
            in_ch = d;
        }
        for l in 0..config.num_layers {
            for name in ["wq", "wk", "wv", "wo"] {
                tensors.insert(format!("layers.{l}.attn.{name}"), xavier(&mut rng, d, d));
            }
            for name in ["bq", "bk", "bv", "bo"] {
                tensors.insert(format!("layers.{l}.attn.{name}"), Array2::zeros((1, d)));
            }
            tensors.insert(format!("layers.{l}.ln1.gamma"), Array2::ones((1, d)));
            tensors.insert(format!("layers.{l}.ln1.beta"), Array2::zeros((1, d)));
            tensors.insert(format!("layers.{l}.ffn.w1"), xavier(&mut rng, d, config.ffn_dim));
            tensors.insert(format!("layers.{l}.ffn.b1"), Array2::zeros((1, config.ffn_dim)));
            tensors.insert(format!("layers.{l}.ffn.w2"), xavier(&mut rng, config.ffn_dim, d));
            tensors.insert(format!("layers.{l}.ffn.b2"), Array2::zeros((1, d)));
            tensors.insert(format!("layers.{l}.ln2.gamma"), Array2::ones((1, d)));
            tensors.insert(format!("layers.{l}.ln2.beta"), Array2::zeros((1, d)));
        }
        tensors.insert("st_head.weight".into(), xavier(&mut rng, d, config.st_vocab_size));
        tensors.insert("st_head.bias".into(), Array2::zeros((1, config.st_vocab_size)));
        if let Some(v) = config.asr_vocab_size {
            tensors.insert("asr_head.weight".into(), xavier(&mut rng, d, v));
            tensors.insert("asr_head.bias".into(), Array2::zeros((1, v)));
        }
        Ok(Self { config: config.clone(), tensors })
    }

    /// Same names and shapes, all zeros; gradient and optimizer buffers.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), Array2::zeros(t.raw_dim())))
            .collect();
        Self { config: self.config.clone(), tensors }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>, NnError> {
        self.tensors.get(name).ok_or_else(|| NnError::UnknownTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>, NnError> {
        self.tensors.get_mut(name).ok_or_else(|| NnError::UnknownTensor(name.to_string()))
    }

    pub fn insert(&mut self, name: String, value: Array2<f64>) {
        self.tensors.insert(name, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Global L2 norm over every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// self += scale * other, tensor by tensor.
    pub fn scaled_add(&mut self, scale: f64, other: &ParameterSet) {
        for (name, t) in self.tensors.iter_mut() {
            let o = other.tensors.get(name).expect("parameter sets share names");
            t.scaled_add(scale, o);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

/// Retained per-layer representations from one forward pass.
///
/// Index `l` in `1..=num_layers` addresses the input of block `l`; index
/// `num_layers + 1` addresses the output of the final block (the
/// translation head input). With zero layers the single entry is the
/// subsampler output.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    values: Vec<Array2<f64>>,
}

impl LayerActivations {
    pub(crate) fn new(values: Vec<Array2<f64>>) -> Self {
        Self { values }
    }

    /// Number of addressable activation sites (`num_layers + 1`).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1-based activation lookup; see the type-level docs for indexing.
    pub fn layer(&self, layer: usize) -> Option<&Array2<f64>> {
        if layer == 0 {
            return None;
        }
        self.values.get(layer - 1)
    }

    /// Downsampled frame count shared by all layers.
    pub fn frames(&self) -> usize {
        self.values.first().map_or(0, |a| a.nrows())
    }
}
