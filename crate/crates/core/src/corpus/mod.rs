//! Seeded synthetic transduction corpora with known alignments.
//!
//! Each task kind maps a random source-symbol sequence to a translation
//! with an exact ground-truth alignment, so reordering metrics can be
//! verified without an external aligner. Sources double as
//! transcriptions, keeping the recognition branch perfectly monotonic.
//! Features are rendered as per-symbol embeddings repeated over frames
//! plus Gaussian noise, standing in for filterbank audio.

mod io;

pub use io::{load_manifest, save_manifest, FeatureStorage};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{min_frames, CtcError, Vocabulary};
use crate::metrics::{
    reorder_difficulty, simplify_to_bijection, AlignError, AlignmentMap, EvalTriplet,
};
use crate::nn::FeatureSequence;
use crate::rng::{derive_seed, rng_from_seed};

/// Downsampling of the default model config, used for the generation-time
/// feasibility check.
const DEFAULT_DOWNSAMPLE: usize = 4;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("utterance {id}: translation needs {needed} downsampled frames, only {available} available")]
    InfeasibleUtterance { id: String, needed: usize, available: usize },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a source sequence is turned into a translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Translation repeats the source tokens.
    Copy,
    /// Each token is mapped through a fixed bijective lexicon.
    Substitute,
    /// Substitute, then swap each adjacent pair with probability
    /// `swap_prob`, scanning left to right without overlaps.
    LocalSwap { swap_prob: f64 },
    /// Substitute, then apply a fixed permutation inside each complete
    /// window; a trailing partial window stays monotonic.
    WindowPermute { window: usize, pattern: Vec<usize> },
    /// Substitute, then reverse the whole sequence.
    Reverse,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Substitute => "substitute",
            TaskKind::LocalSwap { .. } => "local_swap",
            TaskKind::WindowPermute { .. } => "window_permute",
            TaskKind::Reverse => "reverse",
        }
    }
}

/// Generation settings for one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default = "default_frames_per_symbol")]
    pub frames_per_symbol: usize,
    #[serde(default = "default_feat_dim")]
    pub feat_dim: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    pub seed: u64,
}

fn default_frames_per_symbol() -> usize {
    8
}

fn default_feat_dim() -> usize {
    16
}

fn default_noise_std() -> f64 {
    0.1
}

impl TaskSpec {
    pub fn new(kind: TaskKind, src_vocab_size: usize, tgt_vocab_size: usize, seed: u64) -> Self {
        Self {
            kind,
            src_vocab_size,
            tgt_vocab_size,
            min_len: 5,
            max_len: 12,
            frames_per_symbol: default_frames_per_symbol(),
            feat_dim: default_feat_dim(),
            noise_std: default_noise_std(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |msg: String| Err(CorpusError::InvalidSpec(msg));
        if self.src_vocab_size == 0 {
            return err("src_vocab_size must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return err(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.frames_per_symbol == 0 || self.feat_dim == 0 {
            return err("frames_per_symbol and feat_dim must be positive".into());
        }
        if self.noise_std < 0.0 {
            return err(format!("noise_std {} negative", self.noise_std));
        }
        match &self.kind {
            TaskKind::Copy => {}
            TaskKind::LocalSwap { swap_prob } => {
                if !(0.0..=1.0).contains(swap_prob) {
                    return err(format!("swap_prob {swap_prob} outside [0,1]"));
                }
            }
            TaskKind::WindowPermute { window, pattern } => {
                let mut sorted = pattern.clone();
                sorted.sort_unstable();
                if *window == 0 || sorted != (0..*window).collect::<Vec<_>>() {
                    return err(format!(
                        "pattern {pattern:?} is not a permutation of 0..{window}"
                    ));
                }
            }
            TaskKind::Substitute | TaskKind::Reverse => {}
        }
        if !matches!(self.kind, TaskKind::Copy) && self.tgt_vocab_size < self.src_vocab_size {
            return err(format!(
                "bijective lexicon needs tgt_vocab_size >= src_vocab_size ({} < {})",
                self.tgt_vocab_size, self.src_vocab_size
            ));
        }
        Ok(())
    }

    /// Source-side vocabulary (blank + `s00`, `s01`, ...).
    pub fn source_vocab(&self) -> Vocabulary {
        Vocabulary::with_blank(self.src_vocab_size, |i| format!("s{i:02}"))
            .expect("validated spec produces a valid vocabulary")
    }

    /// Translation-side vocabulary; the copy task reuses source tokens.
    pub fn target_vocab(&self) -> Vocabulary {
        match self.kind {
            TaskKind::Copy => self.source_vocab(),
            _ => Vocabulary::with_blank(self.tgt_vocab_size, |i| format!("t{i:02}"))
                .expect("validated spec produces a valid vocabulary"),
        }
    }

    /// The seeded bijective lexicon from source symbols to target symbols;
    /// `None` for the copy task. Indices are symbol indices (vocabulary id
    /// minus one).
    pub fn lexicon(&self) -> Option<Vec<usize>> {
        if matches!(self.kind, TaskKind::Copy) {
            return None;
        }
        let mut rng = rng_from_seed(derive_seed(self.seed, "lexicon"));
        let mut targets: Vec<usize> = (0..self.tgt_vocab_size).collect();
        targets.shuffle(&mut rng);
        targets.truncate(self.src_vocab_size);
        Some(targets)
    }
}

/// One generated example.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub source: Vec<String>,
    pub transcription: Vec<String>,
    pub translation: Vec<String>,
    /// Ground-truth alignment from source positions to translation
    /// positions.
    pub pi: AlignmentMap,
    pub r_pi: f64,
    pub features: FeatureSequence,
    /// Reserved for distilled training targets; never produced here.
    pub distilled_translation: Option<Vec<String>>,
}

/// A generated split: spec, vocabularies, lexicon and utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub spec: TaskSpec,
    pub split: String,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub lexicon: Option<Vec<usize>>,
    pub utterances: Vec<Utterance>,
}

impl CorpusManifest {
    /// Merge same-vocabulary splits into one evaluation/training pool.
    pub fn merge(parts: Vec<CorpusManifest>) -> Result<CorpusManifest, CorpusError> {
        let mut iter = parts.into_iter();
        let mut base = iter
            .next()
            .ok_or_else(|| CorpusError::MalformedManifest("nothing to merge".into()))?;
        for part in iter {
            if part.src_vocab != base.src_vocab || part.tgt_vocab != base.tgt_vocab {
                return Err(CorpusError::VocabularyMismatch(format!(
                    "split {:?} uses a different vocabulary than {:?}",
                    part.split, base.split
                )));
            }
            if part.lexicon != base.lexicon {
                return Err(CorpusError::VocabularyMismatch(format!(
                    "split {:?} uses a different lexicon than {:?}",
                    part.split, base.split
                )));
            }
            base.utterances.extend(part.utterances);
        }
        let mut seen = std::collections::HashSet::new();
        for utt in &base.utterances {
            if !seen.insert(utt.id.as_str()) {
                return Err(CorpusError::MalformedManifest(format!(
                    "duplicate utterance id {:?} after merge",
                    utt.id
                )));
            }
        }
        base.split = "merged".to_string();
        Ok(base)
    }

    /// Build the evaluation triplet for one utterance given a decoded
    /// hypothesis, aligning source tokens to hypothesis tokens through the
    /// lexicon and the LRscore-style bijective simplification.
    pub fn triplet(
        &self,
        utt: &Utterance,
        hypothesis: &[String],
    ) -> Result<EvalTriplet, CorpusError> {
        let sigma = self.align_hypothesis(utt, hypothesis)?;
        Ok(EvalTriplet {
            id: utt.id.clone(),
            transcription: utt.transcription.clone(),
            hypothesis: hypothesis.to_vec(),
            reference: utt.translation.clone(),
            pi: utt.pi.clone(),
            sigma,
        })
    }

    /// Lexical alignment of source positions to hypothesis positions: link
    /// every position pair whose tokens correspond under the lexicon, then
    /// simplify to a bijection.
    pub fn align_hypothesis(
        &self,
        utt: &Utterance,
        hypothesis: &[String],
    ) -> Result<AlignmentMap, CorpusError> {
        let expected: Vec<&str> = match &self.lexicon {
            Some(lex) => utt
                .source
                .iter()
                .map(|tok| {
                    let sym = self
                        .src_vocab
                        .id_of(tok)
                        .ok_or_else(|| {
                            CorpusError::VocabularyMismatch(format!(
                                "source token {tok:?} missing from vocabulary"
                            ))
                        })?
                        - 1;
                    Ok(self.tgt_vocab.token(lex[sym] + 1).expect("lexicon in range"))
                })
                .collect::<Result<_, CorpusError>>()?,
            None => utt.source.iter().map(String::as_str).collect(),
        };
        let mut raw = Vec::new();
        for (k, want) in expected.iter().enumerate() {
            for (j, tok) in hypothesis.iter().enumerate() {
                if tok == want {
                    raw.push((k, j));
                }
            }
        }
        Ok(simplify_to_bijection(&raw, utt.source.len().max(1), hypothesis.len().max(1))?)
    }
}

/// Draw `n` utterances for `split` under the spec. Fully seeded: the same
/// arguments always produce the same manifest.
pub fn generate(spec: &TaskSpec, n: usize, split: &str) -> Result<CorpusManifest, CorpusError> {
    spec.validate()?;
    if n == 0 {
        return Err(CorpusError::InvalidSpec("need at least one utterance".into()));
    }
    let src_vocab = spec.source_vocab();
    let tgt_vocab = spec.target_vocab();
    let lexicon = spec.lexicon();

    let mut utterances = Vec::with_capacity(n);
    for idx in 0..n {
        let id = format!("{split}_{idx:05}");
        let utt_seed = derive_seed(spec.seed, &id);
        let mut rng = rng_from_seed(utt_seed);

        let len = rng.random_range(spec.min_len..=spec.max_len);
        let symbols: Vec<usize> =
            (0..len).map(|_| rng.random_range(0..spec.src_vocab_size)).collect();

        let mapped: Vec<usize> = match &lexicon {
            Some(lex) => symbols.iter().map(|&s| lex[s]).collect(),
            None => symbols.clone(),
        };
        // targets[i] = translation position of source position i
        let targets: Vec<usize> = match &spec.kind {
            TaskKind::Copy | TaskKind::Substitute => (0..len).collect(),
            TaskKind::LocalSwap { swap_prob } => {
                let mut t: Vec<usize> = (0..len).collect();
                let mut i = 0;
                while i + 1 < len {
                    if rng.random::<f64>() < *swap_prob {
                        t.swap(i, i + 1);
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
                t
            }
            TaskKind::WindowPermute { window, pattern } => {
                let mut t: Vec<usize> = (0..len).collect();
                let mut start = 0;
                while start + window <= len {
                    for (j, &p) in pattern.iter().enumerate() {
                        t[start + j] = start + p;
                    }
                    start += window;
                }
                t
            }
            TaskKind::Reverse => (0..len).rev().collect(),
        };

        let mut translation_syms = vec![0usize; len];
        for (i, &pos) in targets.iter().enumerate() {
            translation_syms[pos] = mapped[i];
        }
        let pi = AlignmentMap::new(targets.iter().copied().enumerate().collect(), len, len)?;
        let r_pi = reorder_difficulty(&pi);

        let source: Vec<String> = symbols
            .iter()
            .map(|&s| src_vocab.token(s + 1).expect("in range").to_string())
            .collect();
        let translation: Vec<String> = translation_syms
            .iter()
            .map(|&s| tgt_vocab.token(s + 1).expect("in range").to_string())
            .collect();

        let features = render_features(&symbols, spec, derive_seed(utt_seed, "noise"));

        let translation_ids = tgt_vocab
            .encode(&translation)
            .expect("generated tokens are in the vocabulary");
        let needed = min_frames(&translation_ids);
        let available = (spec.frames_per_symbol * len).div_ceil(DEFAULT_DOWNSAMPLE);
        if needed > available {
            return Err(CorpusError::InfeasibleUtterance { id, needed, available });
        }

        utterances.push(Utterance {
            id,
            transcription: source.clone(),
            source,
            translation,
            pi,
            r_pi,
            features,
            distilled_translation: None,
        });
    }

    Ok(CorpusManifest {
        spec: spec.clone(),
        split: split.to_string(),
        src_vocab,
        tgt_vocab,
        lexicon,
        utterances,
    })
}

/// Render pseudo-audio for a symbol sequence: each symbol's fixed seeded
/// embedding repeated `frames_per_symbol` times, plus Gaussian noise.
pub fn render_features(symbols: &[usize], spec: &TaskSpec, noise_seed: u64) -> FeatureSequence {
    let r = spec.frames_per_symbol;
    let d = spec.feat_dim;
    let mut values = Array2::zeros((r * symbols.len(), d));
    let unit = Normal::new(0.0, 1.0).expect("unit normal is valid");
    for (i, &sym) in symbols.iter().enumerate() {
        let mut emb_rng = rng_from_seed(derive_seed(spec.seed, &format!("embed:{sym}")));
        let emb: Vec<f64> = (0..d).map(|_| unit.sample(&mut emb_rng)).collect();
        for f in 0..r {
            for (c, &e) in emb.iter().enumerate() {
                values[(i * r + f, c)] = e;
            }
        }
    }
    if spec.noise_std > 0.0 {
        let mut rng = rng_from_seed(noise_seed);
        let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
        values.mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    FeatureSequence::new(values)
}

/// A Monte Carlo or closed-form estimate of the corpus difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDifficulty {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Expected reordering difficulty of the spec. Monotonic kinds and full
/// reversal have closed forms; the rest is estimated over 10k seeded
/// draws.
pub fn expected_difficulty(spec: &TaskSpec) -> Result<ExpectedDifficulty, CorpusError> {
    spec.validate()?;
    match &spec.kind {
        TaskKind::Copy | TaskKind::Substitute => {
            Ok(ExpectedDifficulty { mean: 0.0, stderr: 0.0, trials: 0 })
        }
        TaskKind::Reverse if spec.min_len >= 2 => {
            Ok(ExpectedDifficulty { mean: 1.0, stderr: 0.0, trials: 0 })
        }
        _ => {
            const TRIALS: usize = 10_000;
            let mut probe = spec.clone();
            probe.noise_std = 0.0;
            probe.feat_dim = 1;
            let manifest = generate(&probe, TRIALS, "difficulty_probe")?;
            let mean = manifest.utterances.iter().map(|u| u.r_pi).sum::<f64>() / TRIALS as f64;
            let var = manifest
                .utterances
                .iter()
                .map(|u| (u.r_pi - mean).powi(2))
                .sum::<f64>()
                / (TRIALS - 1) as f64;
            Ok(ExpectedDifficulty {
                mean,
                stderr: (var / TRIALS as f64).sqrt(),
                trials: TRIALS,
            })
        }
    }
}
