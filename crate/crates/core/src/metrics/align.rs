//! Alignments and reordering metrics.
//!
//! An [`AlignmentMap`] is a bijective partial map from source-token
//! positions to target-token positions. [`kendall_disagreement`] measures
//! the fraction of source pairs ordered differently by two such maps,
//! [`reorder_correctness`] adds a brevity penalty, and
//! [`reorder_difficulty`] compares a map against the monotonic identity.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed_u64, rng_from_seed};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("alignment pair ({0}, {1}) out of range (src_len {2}, tgt_len {3})")]
    PairOutOfRange(usize, usize, usize, usize),
    #[error("alignment is not bijective: {0}")]
    NotBijective(String),
}

/// Bijective partial map from source positions to target positions.
/// Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pairs: Vec<(usize, usize)>,
    src_len: usize,
    tgt_len: usize,
}

impl AlignmentMap {
    /// Build a map from already-bijective pairs. Pairs are stored sorted by
    /// source index.
    pub fn new(
        mut pairs: Vec<(usize, usize)>,
        src_len: usize,
        tgt_len: usize,
    ) -> Result<Self, AlignError> {
        for &(s, t) in &pairs {
            if s >= src_len || t >= tgt_len {
                return Err(AlignError::PairOutOfRange(s, t, src_len, tgt_len));
            }
        }
        pairs.sort_unstable();
        let mut src_seen = std::collections::HashSet::new();
        let mut tgt_seen = std::collections::HashSet::new();
        for &(s, t) in &pairs {
            if !src_seen.insert(s) {
                return Err(AlignError::NotBijective(format!("source {s} aligned twice")));
            }
            if !tgt_seen.insert(t) {
                return Err(AlignError::NotBijective(format!("target {t} aligned twice")));
            }
        }
        Ok(Self { pairs, src_len, tgt_len })
    }

    /// The identity ("dummy monotonic") alignment over `len` positions.
    pub fn identity(len: usize) -> Self {
        Self { pairs: (0..len).map(|i| (i, i)).collect(), src_len: len, tgt_len: len }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_len
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Target position of a source position, if aligned.
    pub fn target_of(&self, src: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&src, |&(s, _)| s)
            .ok()
            .map(|i| self.pairs[i].1)
    }
}

/// Reduce a many-to-many alignment to a bijection: a source linked to
/// several targets keeps the lowest target index; a target linked to
/// several sources keeps the lowest source index. Unaligned source tokens
/// are dropped.
pub fn simplify_to_bijection(
    raw_pairs: &[(usize, usize)],
    src_len: usize,
    tgt_len: usize,
) -> Result<AlignmentMap, AlignError> {
    for &(s, t) in raw_pairs {
        if s >= src_len || t >= tgt_len {
            return Err(AlignError::PairOutOfRange(s, t, src_len, tgt_len));
        }
    }
    let mut pairs: Vec<(usize, usize)> = raw_pairs.to_vec();
    pairs.sort_unstable();
    pairs.dedup();
    // One-to-many: keep the lowest target per source.
    let mut by_src: Vec<(usize, usize)> = Vec::new();
    for &(s, t) in &pairs {
        match by_src.last() {
            Some(&(ps, _)) if ps == s => {} // already kept the lowest t
            _ => by_src.push((s, t)),
        }
    }
    // Many-to-one: keep the lowest source per target.
    let mut by_tgt = by_src.clone();
    by_tgt.sort_unstable_by_key(|&(s, t)| (t, s));
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for &(s, t) in &by_tgt {
        match kept.last() {
            Some(&(_, pt)) if pt == t => {}
            _ => kept.push((s, t)),
        }
    }
    AlignmentMap::new(kept, src_len, tgt_len)
}

/// Source positions aligned by both maps, with their two target positions,
/// in source order.
fn common_targets(pi: &AlignmentMap, sigma: &AlignmentMap) -> Vec<(usize, usize)> {
    pi.pairs()
        .iter()
        .filter_map(|&(s, t_pi)| sigma.target_of(s).map(|t_sig| (t_pi, t_sig)))
        .collect()
}

/// Kendall's-tau disagreement between two alignments: the fraction of
/// common source pairs the two maps order oppositely. Fewer than two
/// common positions yields 0.
pub fn kendall_disagreement(pi: &AlignmentMap, sigma: &AlignmentMap) -> f64 {
    let mut common = common_targets(pi, sigma);
    let n = common.len();
    if n < 2 {
        return 0.0;
    }
    // Sort by pi's target order, then discordant pairs are exactly the
    // inversions of the sigma sequence.
    common.sort_unstable();
    let mut sigma_seq: Vec<usize> = common.into_iter().map(|(_, t)| t).collect();
    let inversions = count_inversions(&mut sigma_seq);
    inversions as f64 / (n * (n - 1) / 2) as f64
}

/// The literal double-sum definition; oracle for [`kendall_disagreement`].
pub fn kendall_disagreement_quadratic(pi: &AlignmentMap, sigma: &AlignmentMap) -> f64 {
    let common = common_targets(pi, sigma);
    let n = common.len();
    if n < 2 {
        return 0.0;
    }
    let mut z = 0usize;
    for i in 0..n {
        for j in 0..n {
            let (pi_i, sig_i) = common[i];
            let (pi_j, sig_j) = common[j];
            if pi_i < pi_j && sig_i > sig_j {
                z += 1;
            }
        }
    }
    z as f64 / (n * (n - 1) / 2) as f64
}

/// Merge-sort inversion counting; consumes the buffer.
fn count_inversions(seq: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mut buf = seq.to_vec();
    merge_count(seq, &mut buf)
}

fn merge_count(seq: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left_buf, right_buf) = buf.split_at_mut(mid);
    let mut inv = {
        let (left, right) = seq.split_at_mut(mid);
        merge_count(left, left_buf) + merge_count(right, right_buf)
    };
    let (left, right) = (&seq[..mid], &seq[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            buf[k] = right[j];
            j += 1;
            inv += (left.len() - i) as u64;
        }
        k += 1;
    }
    while i < left.len() {
        buf[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        buf[k] = right[j];
        j += 1;
        k += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    inv
}

/// Reordering correctness: `(1 - sqrt(R)) * BP` where the brevity penalty
/// is `e^(1 - |Y|/|H|)` when the hypothesis is no longer than the
/// reference. An empty hypothesis scores 0.
pub fn reorder_correctness(
    pi: &AlignmentMap,
    sigma: &AlignmentMap,
    hyp_len: usize,
    ref_len: usize,
) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let r = kendall_disagreement(pi, sigma);
    let bp = if hyp_len <= ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    (1.0 - r.sqrt()) * bp
}

/// Reordering difficulty: disagreement between the reference alignment and
/// the dummy monotonic alignment.
pub fn reorder_difficulty(pi: &AlignmentMap) -> f64 {
    kendall_disagreement(pi, &AlignmentMap::identity(pi.src_len()))
}

/// Best reordering correctness over several candidate references. Each
/// candidate carries its own alignment and reference length; the brevity
/// penalty uses the maximizing candidate's length.
pub fn max_reorder_correctness(
    candidates: &[(AlignmentMap, usize)],
    sigma: &AlignmentMap,
    hyp_len: usize,
) -> f64 {
    candidates
        .iter()
        .map(|(pi, ref_len)| reorder_correctness(pi, sigma, hyp_len, *ref_len))
        .fold(0.0, f64::max)
}

/// One evaluated sentence: transcription, hypothesis, reference, and the
/// two alignments (source-to-reference and source-to-hypothesis).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTriplet {
    pub id: String,
    pub transcription: Vec<String>,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
    /// Alignment from transcription positions to reference positions.
    pub pi: AlignmentMap,
    /// Alignment from transcription positions to hypothesis positions.
    pub sigma: AlignmentMap,
}

impl EvalTriplet {
    pub fn reorder_correctness(&self) -> f64 {
        reorder_correctness(&self.pi, &self.sigma, self.hypothesis.len(), self.reference.len())
    }

    pub fn reorder_difficulty(&self) -> f64 {
        reorder_difficulty(&self.pi)
    }
}

/// Mean reordering correctness when each hypothesis alignment is replaced
/// by a uniformly random permutation of the reference-aligned positions
/// (a length-preserving scramble, so the brevity penalty is 1).
pub fn random_permutation_baseline(triplets: &[EvalTriplet], seed: u64, trials: usize) -> f64 {
    assert!(trials >= 1, "trials must be positive");
    let mut total = 0.0;
    let mut count = 0usize;
    for (idx, trip) in triplets.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed_u64(seed, idx as u64));
        let sources: Vec<usize> = trip.pi.pairs().iter().map(|&(s, _)| s).collect();
        let mut targets: Vec<usize> = trip.pi.pairs().iter().map(|&(_, t)| t).collect();
        for _ in 0..trials {
            targets.shuffle(&mut rng);
            let pairs: Vec<(usize, usize)> =
                sources.iter().copied().zip(targets.iter().copied()).collect();
            let sigma = AlignmentMap::new(pairs, trip.pi.src_len(), trip.pi.tgt_len())
                .expect("shuffled bijection stays bijective");
            let r = kendall_disagreement(&trip.pi, &sigma);
            total += 1.0 - r.sqrt();
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Map i -> targets[i] over the whole source.
    fn map_of(targets: &[usize]) -> AlignmentMap {
        let n = targets.len();
        let tgt_len = targets.iter().max().map_or(0, |m| m + 1);
        AlignmentMap::new(
            targets.iter().copied().enumerate().collect(),
            n,
            tgt_len.max(n),
        )
        .unwrap()
    }

    #[test]
    fn simplify_keeps_already_bijective_input() {
        let m = simplify_to_bijection(&[(0, 1), (1, 0), (2, 2)], 3, 3).unwrap();
        assert_eq!(m.pairs(), &[(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn simplify_one_to_many_keeps_lowest_target() {
        // 1-based spec example {(1,1),(1,2),(2,3)} -> {(1,1),(2,3)}
        let m = simplify_to_bijection(&[(0, 0), (0, 1), (1, 2)], 2, 3).unwrap();
        assert_eq!(m.pairs(), &[(0, 0), (1, 2)]);
    }

    #[test]
    fn simplify_many_to_one_keeps_lowest_source() {
        // {(1,2),(3,2)} -> {(1,2)}
        let m = simplify_to_bijection(&[(0, 1), (2, 1)], 3, 2).unwrap();
        assert_eq!(m.pairs(), &[(0, 1)]);
    }

    #[test]
    fn kendall_identical_maps_agree() {
        let pi = map_of(&[2, 0, 1]);
        assert_eq!(kendall_disagreement(&pi, &pi), 0.0);
    }

    #[test]
    fn kendall_reversed_is_one() {
        let pi = map_of(&[0, 1, 2]);
        let sigma = map_of(&[2, 1, 0]);
        assert_eq!(kendall_disagreement(&pi, &sigma), 1.0);
    }

    #[test]
    fn kendall_single_discordant_pair() {
        let pi = map_of(&[0, 1, 2]);
        let sigma = map_of(&[0, 2, 1]);
        let r = kendall_disagreement(&pi, &sigma);
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_fewer_than_two_common_positions_is_zero() {
        let pi = AlignmentMap::new(vec![(0, 0)], 2, 2).unwrap();
        let sigma = AlignmentMap::new(vec![(0, 1)], 2, 2).unwrap();
        assert_eq!(kendall_disagreement(&pi, &sigma), 0.0);
        // Disjoint domains as well.
        let sigma2 = AlignmentMap::new(vec![(1, 0)], 2, 2).unwrap();
        assert_eq!(kendall_disagreement(&pi, &sigma2), 0.0);
    }

    #[test]
    fn optimized_matches_quadratic_on_random_bijections() {
        let mut rng = rng_from_seed(99);
        for _ in 0..200 {
            let n = rand::Rng::random_range(&mut rng, 2..30);
            let mut a: Vec<usize> = (0..n).collect();
            let mut b: Vec<usize> = (0..n).collect();
            a.shuffle(&mut rng);
            b.shuffle(&mut rng);
            let pi = map_of(&a);
            let sigma = map_of(&b);
            let fast = kendall_disagreement(&pi, &sigma);
            let slow = kendall_disagreement_quadratic(&pi, &sigma);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn correctness_closed_forms() {
        // R=0, |H|=|Y| -> 1
        let pi = map_of(&[0, 1, 2]);
        assert_eq!(reorder_correctness(&pi, &pi, 3, 3), 1.0);
        // R=1 -> 0
        let sigma = map_of(&[2, 1, 0]);
        assert_eq!(reorder_correctness(&pi, &sigma, 3, 3), 0.0);
        // empty hypothesis -> 0
        assert_eq!(reorder_correctness(&pi, &sigma, 0, 3), 0.0);
    }

    #[test]
    fn correctness_brevity_penalty_example() {
        // R=0.25, |Y|=10, |H|=5 -> 0.5 * e^-1.
        // Moving the last element to the front gives exactly 7 inversions
        // over C(8,2)=28 pairs, i.e. R = 0.25.
        let pi = map_of(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let sigma = map_of(&[7, 0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(kendall_disagreement(&pi, &sigma), 0.25);
        let got = reorder_correctness(&pi, &sigma, 5, 10);
        assert!((got - 0.5 * (-1.0_f64).exp()).abs() < 1e-15);
        assert!((got - 0.18393972058572117).abs() < 1e-15);
    }

    #[test]
    fn difficulty_examples() {
        assert_eq!(reorder_difficulty(&map_of(&[0, 1, 2, 3])), 0.0);
        assert_eq!(reorder_difficulty(&map_of(&[3, 2, 1, 0])), 1.0);
        let r = reorder_difficulty(&map_of(&[1, 0, 2, 3]));
        assert!((r - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_two_positions_is_half() {
        // n=2: R is 0 or 1 with equal probability, so mean R_acc -> 0.5.
        let trip = EvalTriplet {
            id: "t".into(),
            transcription: vec!["a".into(), "b".into()],
            hypothesis: vec!["x".into(), "y".into()],
            reference: vec!["x".into(), "y".into()],
            pi: map_of(&[0, 1]),
            sigma: map_of(&[0, 1]),
        };
        let mean = random_permutation_baseline(&[trip], 7, 40_000);
        assert!((mean - 0.5).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn max_correctness_picks_best_reference() {
        let pi_bad = map_of(&[2, 1, 0]);
        let pi_good = map_of(&[0, 1, 2]);
        let sigma = map_of(&[0, 1, 2]);
        let best = max_reorder_correctness(
            &[(pi_bad, 3), (pi_good.clone(), 3)],
            &sigma,
            3,
        );
        assert_eq!(best, 1.0);
    }
}
