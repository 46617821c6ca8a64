//! Connectionist temporal classification over log-probability lattices.
//!
//! The blank token always sits at vocabulary index 0. All arithmetic is
//! 64-bit and log-space.

mod io;
mod loss;

pub use io::{load_lattice_file, read_lattice, read_lattice_json, write_lattice, write_lattice_json};
pub use loss::{ctc_grad, ctc_log_likelihood, ctc_log_likelihood_bruteforce, BRUTE_FORCE_LIMIT};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of the blank token in every vocabulary.
pub const BLANK_ID: usize = 0;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("token index {index} out of range for vocabulary of size {vocab_size}")]
    InvalidToken { index: usize, vocab_size: usize },
    #[error("blank token (id {0}) not allowed in a label sequence")]
    BlankInLabels(usize),
    #[error("lattice row {row} is not normalized: log-sum-exp = {lse:e}")]
    UnnormalizedRow { row: usize, lse: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("brute-force instance too large: V^T = {paths} exceeds limit {limit}")]
    InstanceTooLarge { paths: f64, limit: f64 },
    #[error("gradient undefined: target has zero probability under the lattice")]
    InfeasibleGradient,
    #[error("vocabulary invalid: {0}")]
    InvalidVocabulary(String),
    #[error("malformed lattice file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An ordered token inventory with a designated blank at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Build a vocabulary from token strings; `tokens[0]` is the blank.
    pub fn new(tokens: Vec<String>) -> Result<Self, CtcError> {
        if tokens.len() < 2 {
            return Err(CtcError::InvalidVocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(CtcError::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens })
    }

    /// Blank plus `n` tokens named by `name(i)`.
    pub fn with_blank<F: Fn(usize) -> String>(n: usize, name: F) -> Result<Self, CtcError> {
        let mut tokens = Vec::with_capacity(n + 1);
        tokens.push("<b>".to_string());
        tokens.extend((0..n).map(name));
        Self::new(tokens)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn blank_id(&self) -> usize {
        BLANK_ID
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Render label ids as token strings.
    pub fn decode(&self, labels: &LabelSequence) -> Result<Vec<String>, CtcError> {
        labels
            .ids()
            .iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or(CtcError::InvalidToken { index: id, vocab_size: self.size() })
            })
            .collect()
    }

    /// Map token strings to a label sequence.
    pub fn encode(&self, tokens: &[String]) -> Result<LabelSequence, CtcError> {
        let ids = tokens
            .iter()
            .map(|t| {
                self.id_of(t).ok_or_else(|| CtcError::InvalidVocabulary(format!(
                    "unknown token {t:?}"
                )))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LabelSequence::new(ids)
    }
}

/// Collapsed target tokens; never contains the blank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSequence {
    ids: Vec<usize>,
}

impl LabelSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self, CtcError> {
        if let Some(&b) = ids.iter().find(|&&id| id == BLANK_ID) {
            return Err(CtcError::BlankInLabels(b));
        }
        Ok(Self { ids })
    }

    pub fn empty() -> Self {
        Self { ids: Vec::new() }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A frame-level path over the vocabulary; may contain blanks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    ids: Vec<usize>,
}

impl AlignmentPath {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Per-frame log-distributions over a vocabulary.
///
/// Rows are frames, columns are tokens; every row must log-sum-exp to 0
/// within `1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbLattice {
    values: Array2<f64>,
}

impl LogProbLattice {
    pub const ROW_NORM_TOL: f64 = 1e-9;

    pub fn new(values: Array2<f64>) -> Result<Self, CtcError> {
        if values.nrows() == 0 {
            return Err(CtcError::DimensionMismatch("lattice needs at least one frame".into()));
        }
        for (row, r) in values.rows().into_iter().enumerate() {
            let lse = log_sum_exp(r.iter().copied());
            if lse.abs() > Self::ROW_NORM_TOL {
                return Err(CtcError::UnnormalizedRow { row, lse });
            }
        }
        Ok(Self { values })
    }

    /// Normalize arbitrary scores row-wise into a valid lattice.
    pub fn from_logits(logits: Array2<f64>) -> Result<Self, CtcError> {
        Self::new(log_softmax_rows(&logits))
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Per-frame argmax with ties broken toward the lowest index.
    pub fn argmax_path(&self) -> AlignmentPath {
        let ids = self
            .values
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        AlignmentPath::new(ids)
    }
}

/// Stable log(sum(exp(xs))).
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// The collapsing function: merge consecutive repeats, then drop blanks.
pub fn collapse(path: &AlignmentPath, vocab: &Vocabulary) -> Result<LabelSequence, CtcError> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &id in path.ids() {
        if id >= vocab.size() {
            return Err(CtcError::InvalidToken { index: id, vocab_size: vocab.size() });
        }
        if Some(id) != prev && id != BLANK_ID {
            out.push(id);
        }
        prev = Some(id);
    }
    LabelSequence::new(out)
}

/// Minimum number of frames any path collapsing to `target` must have:
/// one frame per label plus a separating blank per adjacent repeat.
pub fn min_frames(target: &LabelSequence) -> usize {
    let ids = target.ids();
    let repeats = ids.windows(2).filter(|w| w[0] == w[1]).count();
    ids.len() + repeats
}

/// Greedy (best-path) decoding: collapse the per-frame argmax path.
///
/// Returns the path as well, so callers can map decoded tokens back to
/// the frames that emitted them.
pub fn greedy_decode(lattice: &LogProbLattice) -> (LabelSequence, AlignmentPath) {
    let path = lattice.argmax_path();
    let vocab_size = lattice.vocab_size();
    // collapse() cannot fail here: argmax indices are always in range.
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &id in path.ids() {
        debug_assert!(id < vocab_size);
        if Some(id) != prev && id != BLANK_ID {
            out.push(id);
        }
        prev = Some(id);
    }
    (LabelSequence { ids: out }, path)
}
