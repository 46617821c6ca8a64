//! Non-autoregressive sequence transduction with CTC.
//!
//! The crate bundles everything needed to train and analyze small
//! encoder-only transduction models at desk scale:
//!
//! * [`ctc`] — exact CTC log-likelihood, gradient, greedy decoding and a
//!   brute-force enumeration oracle.
//! * [`nn`] — a convolutional subsampler plus transformer encoder with two
//!   CTC projection heads, built on a reverse-mode tape so gradients with
//!   respect to parameters and intermediate activations are available.
//! * [`train`] — noam-scheduled Adam with clipping, accumulation,
//!   checkpointing and checkpoint averaging.
//! * [`metrics`] — alignment-based reordering metrics (Kendall's tau
//!   disagreement, reordering correctness and difficulty), corpus BLEU,
//!   WER and difficulty-binned evaluation.
//! * [`saliency`] — gradient-norm saliency and per-token reordering
//!   matrices with CSV/SVG export.
//! * [`corpus`] — seeded synthetic corpora with controllable reordering
//!   difficulty, ground-truth alignments and pseudo-audio features.
//! * [`decode`] — greedy decoding over whole manifests.

pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod saliency;
pub mod train;

pub use corpus::{CorpusManifest, TaskKind, TaskSpec, Utterance};
pub use ctc::{AlignmentPath, LabelSequence, LogProbLattice, Vocabulary};
pub use decode::DecodedUtterance;
pub use metrics::{AlignmentMap, DifficultyBin, EvalTriplet};
pub use nn::{FeatureSequence, LayerActivations, ModelConfig, ParameterSet};
pub use saliency::{ReorderingMatrix, SaliencyMatrix, TokenFrameMap};
pub use train::{TrainConfig, TrainingLog};
