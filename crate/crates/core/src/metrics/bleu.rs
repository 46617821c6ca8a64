//! Corpus BLEU-4: geometric mean of clipped n-gram precisions times a
//! corpus-level brevity penalty, no smoothing.

use std::collections::HashMap;

use thiserror::Error;

const MAX_NGRAM: usize = 4;

#[derive(Debug, Error)]
pub enum BleuError {
    #[error("hypothesis and reference counts differ ({0} vs {1})")]
    CountMismatch(usize, usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("reference {0} is empty")]
    EmptyReference(usize),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over parallel hypothesis/reference token sequences, in
/// `[0, 1]`. Returns 0 when any n-gram order has no match corpus-wide.
pub fn corpus_bleu(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<f64, BleuError> {
    if hypotheses.len() != references.len() {
        return Err(BleuError::CountMismatch(hypotheses.len(), references.len()));
    }
    if hypotheses.is_empty() {
        return Err(BleuError::EmptyCorpus);
    }
    let mut matched = [0usize; MAX_NGRAM];
    let mut total = [0usize; MAX_NGRAM];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (i, (hyp, rf)) in hypotheses.iter().zip(references).enumerate() {
        if rf.is_empty() {
            return Err(BleuError::EmptyReference(i));
        }
        hyp_len += hyp.len();
        ref_len += rf.len();
        for n in 1..=MAX_NGRAM {
            let ref_counts = ngram_counts(rf, n);
            for (gram, count) in ngram_counts(hyp, n) {
                total[n - 1] += count;
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matched[n - 1] += count.min(clip);
            }
        }
    }
    if matched.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..MAX_NGRAM)
        .map(|n| (matched[n] as f64 / total[n] as f64).ln())
        .sum::<f64>()
        / MAX_NGRAM as f64;
    let bp = if hyp_len >= ref_len || hyp_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_precision.exp())
}
