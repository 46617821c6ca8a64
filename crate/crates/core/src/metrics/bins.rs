//! Equal-count difficulty binning: sort by reordering difficulty, split
//! into contiguous bins, and score each bin separately.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::align::EvalTriplet;
use super::bleu::{corpus_bleu, BleuError};

#[derive(Debug, Error)]
pub enum BinError {
    #[error("need at least {wanted} examples for {wanted} bins, got {got}")]
    TooFewExamples { wanted: usize, got: usize },
    #[error("bins must be at least 1")]
    ZeroBins,
    #[error(transparent)]
    Bleu(#[from] BleuError),
}

/// One difficulty bin with its members and scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifficultyBin {
    pub index: usize,
    pub r_pi_min: f64,
    pub r_pi_max: f64,
    pub member_ids: Vec<String>,
    pub bleu: f64,
    pub mean_r_acc: f64,
}

/// Sort triplets by reordering difficulty (ties by id), split into `bins`
/// contiguous groups whose sizes differ by at most one, and compute corpus
/// BLEU and mean reordering correctness per group.
pub fn bin_by_difficulty(
    triplets: &[EvalTriplet],
    bins: usize,
) -> Result<Vec<DifficultyBin>, BinError> {
    if bins == 0 {
        return Err(BinError::ZeroBins);
    }
    if triplets.len() < bins {
        return Err(BinError::TooFewExamples { wanted: bins, got: triplets.len() });
    }
    let mut scored: Vec<(f64, &EvalTriplet)> =
        triplets.iter().map(|t| (t.reorder_difficulty(), t)).collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("difficulty is finite")
            .then_with(|| a.1.id.cmp(&b.1.id))
    });

    let n = scored.len();
    let base = n / bins;
    let extra = n % bins;
    let mut out = Vec::with_capacity(bins);
    let mut start = 0usize;
    for index in 0..bins {
        let size = base + usize::from(index < extra);
        let members = &scored[start..start + size];
        start += size;
        let hyps: Vec<Vec<String>> =
            members.iter().map(|(_, t)| t.hypothesis.clone()).collect();
        let refs: Vec<Vec<String>> =
            members.iter().map(|(_, t)| t.reference.clone()).collect();
        let bleu = corpus_bleu(&hyps, &refs)?;
        let mean_r_acc = members.iter().map(|(_, t)| t.reorder_correctness()).sum::<f64>()
            / size as f64;
        out.push(DifficultyBin {
            index,
            r_pi_min: members.first().map(|(r, _)| *r).unwrap_or(0.0),
            r_pi_max: members.last().map(|(r, _)| *r).unwrap_or(0.0),
            member_ids: members.iter().map(|(_, t)| t.id.clone()).collect(),
            bleu,
            mean_r_acc,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::align::AlignmentMap;

    fn triplet(id: &str, targets: &[usize], tokens: &[&str]) -> EvalTriplet {
        let n = targets.len();
        let pi = AlignmentMap::new(
            targets.iter().copied().enumerate().collect(),
            n,
            n,
        )
        .unwrap();
        let words: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
        EvalTriplet {
            id: id.to_string(),
            transcription: words.clone(),
            hypothesis: words.clone(),
            reference: words,
            pi: pi.clone(),
            sigma: pi,
        }
    }

    #[test]
    fn single_bin_covers_whole_corpus() {
        let trips = vec![
            triplet("u1", &[0, 1, 2, 3], &["a", "b", "c", "d"]),
            triplet("u2", &[3, 2, 1, 0], &["a", "b", "c", "d"]),
        ];
        let bins = bin_by_difficulty(&trips, 1).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].member_ids.len(), 2);
        // hypothesis == reference everywhere, so bin BLEU is 1
        assert!((bins[0].bleu - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_bins_are_in_difficulty_order() {
        let trips = vec![
            triplet("u_rev", &[3, 2, 1, 0], &["a", "b", "c", "d"]),
            triplet("u_mono", &[0, 1, 2, 3], &["a", "b", "c", "d"]),
            triplet("u_swap", &[1, 0, 2, 3], &["a", "b", "c", "d"]),
        ];
        let bins = bin_by_difficulty(&trips, 3).unwrap();
        let order: Vec<&str> =
            bins.iter().map(|b| b.member_ids[0].as_str()).collect();
        assert_eq!(order, vec!["u_mono", "u_swap", "u_rev"]);
        assert!(bins[0].r_pi_max <= bins[1].r_pi_min);
    }

    #[test]
    fn all_monotonic_corpus_has_zero_ranges() {
        let trips: Vec<EvalTriplet> = (0..10)
            .map(|i| triplet(&format!("u{i}"), &[0, 1, 2, 3], &["a", "b", "c", "d"]))
            .collect();
        let bins = bin_by_difficulty(&trips, 5).unwrap();
        for b in &bins {
            assert_eq!(b.r_pi_min, 0.0);
            assert_eq!(b.r_pi_max, 0.0);
            assert_eq!(b.member_ids.len(), 2);
        }
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let trips: Vec<EvalTriplet> = (0..11)
            .map(|i| triplet(&format!("u{i:02}"), &[1, 0, 2], &["a", "b", "c"]))
            .collect();
        let bins = bin_by_difficulty(&trips, 4).unwrap();
        let sizes: Vec<usize> = bins.iter().map(|b| b.member_ids.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2]);
        let mut all: Vec<String> =
            bins.iter().flat_map(|b| b.member_ids.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 11);
    }

    #[test]
    fn too_few_examples_error() {
        let trips = vec![triplet("u", &[0, 1], &["a", "b"])];
        assert!(matches!(
            bin_by_difficulty(&trips, 2),
            Err(BinError::TooFewExamples { .. })
        ));
    }
}
