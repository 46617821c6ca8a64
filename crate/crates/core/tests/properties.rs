//! Cross-module invariants checked over randomized inputs.

use ctcst_core::corpus::{self, TaskKind, TaskSpec};
use ctcst_core::ctc::{
    collapse, ctc_grad, ctc_log_likelihood, ctc_log_likelihood_bruteforce, greedy_decode,
    AlignmentPath, LabelSequence, LogProbLattice, Vocabulary,
};
use ctcst_core::metrics::{
    bin_by_difficulty, kendall_disagreement, kendall_disagreement_quadratic, reorder_correctness,
    reorder_difficulty, AlignmentMap, EvalTriplet,
};
use ndarray::Array2;
use proptest::prelude::*;

fn lattice_strategy(
    max_frames: usize,
    max_vocab: usize,
) -> impl Strategy<Value = LogProbLattice> {
    (1..=max_frames, 2..=max_vocab).prop_flat_map(|(t, v)| {
        proptest::collection::vec(-3.0..3.0f64, t * v).prop_map(move |flat| {
            LogProbLattice::from_logits(Array2::from_shape_vec((t, v), flat).unwrap()).unwrap()
        })
    })
}

fn two_permutations(max_len: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2..=max_len).prop_flat_map(|n| {
        (
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

fn three_permutations(
    max_len: usize,
) -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
    (2..=max_len).prop_flat_map(|n| {
        (
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

fn map_of(targets: &[usize]) -> AlignmentMap {
    AlignmentMap::new(
        targets.iter().copied().enumerate().collect(),
        targets.len(),
        targets.len(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dp_equals_bruteforce(lattice in lattice_strategy(6, 3), ids in proptest::collection::vec(1..3usize, 0..=4)) {
        let v = lattice.vocab_size();
        let ids: Vec<usize> = ids.into_iter().map(|i| 1 + (i - 1) % (v - 1)).collect();
        let target = LabelSequence::new(ids).unwrap();
        let dp = ctc_log_likelihood(&lattice, &target).unwrap();
        let bf = ctc_log_likelihood_bruteforce(&lattice, &target).unwrap();
        if dp == f64::NEG_INFINITY {
            prop_assert_eq!(bf, f64::NEG_INFINITY);
        } else {
            prop_assert!((dp - bf).abs() <= 1e-9, "dp={} bf={}", dp, bf);
        }
    }

    #[test]
    fn collapse_class_probabilities_sum_to_one(lattice in lattice_strategy(4, 3)) {
        let t = lattice.frames();
        let v = lattice.vocab_size();
        let mut total = 0.0;
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(ids) = stack.pop() {
            let y = LabelSequence::new(ids.clone()).unwrap();
            total += ctc_log_likelihood(&lattice, &y).unwrap().exp();
            if ids.len() < t {
                for k in 1..v {
                    let mut next = ids.clone();
                    next.push(k);
                    stack.push(next);
                }
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-6, "total = {}", total);
    }

    #[test]
    fn log_likelihood_is_permutation_covariant(
        lattice in lattice_strategy(5, 4),
        ids in proptest::collection::vec(1..4usize, 1..=3),
        swap in (1usize..4, 1usize..4),
    ) {
        let v = lattice.vocab_size();
        let (a, b) = swap;
        let (a, b) = (1 + (a - 1) % (v - 1), 1 + (b - 1) % (v - 1));
        let relabel = |id: usize| if id == a { b } else if id == b { a } else { id };

        let ids: Vec<usize> = ids.into_iter().map(|i| 1 + (i - 1) % (v - 1)).collect();
        let target = LabelSequence::new(ids.clone()).unwrap();
        let before = ctc_log_likelihood(&lattice, &target).unwrap();

        let mut permuted = lattice.values().clone();
        for t in 0..lattice.frames() {
            permuted.swap((t, a), (t, b));
        }
        let relattice = LogProbLattice::new(permuted).unwrap();
        let retarget = LabelSequence::new(ids.iter().map(|&i| relabel(i)).collect()).unwrap();
        let after = ctc_log_likelihood(&relattice, &retarget).unwrap();
        if before == f64::NEG_INFINITY {
            prop_assert_eq!(after, f64::NEG_INFINITY);
        } else {
            prop_assert!((before - after).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_collapse_has_no_blanks_and_matches_run_oracle(lattice in lattice_strategy(8, 4)) {
        let (seq, path) = greedy_decode(&lattice);
        prop_assert!(seq.ids().iter().all(|&id| id != 0));
        // Independent oracle: dedup consecutive ids, then drop blanks.
        let oracle: Vec<usize> = {
            let mut deduped: Vec<usize> = Vec::new();
            for &id in path.ids() {
                if deduped.last() != Some(&id) {
                    deduped.push(id);
                }
            }
            deduped.into_iter().filter(|&id| id != 0).collect()
        };
        prop_assert_eq!(seq.ids(), &oracle[..]);
        // And collapse() agrees on the same path.
        let vocab = Vocabulary::new((0..lattice.vocab_size()).map(|i| format!("#{i}")).collect()).unwrap();
        let via_collapse = collapse(&AlignmentPath::new(path.ids().to_vec()), &vocab).unwrap();
        prop_assert_eq!(seq.ids(), via_collapse.ids());
    }

    #[test]
    fn grad_rows_sum_to_zero_on_feasible_instances(
        lattice in lattice_strategy(5, 3),
        ids in proptest::collection::vec(1..3usize, 1..=3),
    ) {
        let v = lattice.vocab_size();
        let ids: Vec<usize> = ids.into_iter().map(|i| 1 + (i - 1) % (v - 1)).collect();
        let target = LabelSequence::new(ids).unwrap();
        if ctc_log_likelihood(&lattice, &target).unwrap() != f64::NEG_INFINITY {
            let g = ctc_grad(&lattice, &target).unwrap();
            for row in g.rows() {
                prop_assert!(row.sum().abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kendall_is_symmetric_and_bounded((a, b) in two_permutations(12)) {
        let pi = map_of(&a);
        let sigma = map_of(&b);
        let r1 = kendall_disagreement(&pi, &sigma);
        let r2 = kendall_disagreement(&sigma, &pi);
        prop_assert!((r1 - r2).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&r1));
        prop_assert_eq!(r1, kendall_disagreement_quadratic(&pi, &sigma));
    }

    #[test]
    fn kendall_invariant_under_order_preserving_relabeling(
        (a, b) in two_permutations(10),
        stretch in 2usize..5,
        offset in 0usize..7,
    ) {
        let before = kendall_disagreement(&map_of(&a), &map_of(&b));
        // x -> stretch*x + offset preserves order on both target sides.
        let ax: Vec<usize> = a.iter().map(|&x| stretch * x + offset).collect();
        let bx: Vec<usize> = b.iter().map(|&x| stretch * x + offset).collect();
        let len = a.len();
        let tgt = stretch * (len - 1) + offset + 1;
        let pi = AlignmentMap::new(ax.into_iter().enumerate().collect(), len, tgt).unwrap();
        let sigma = AlignmentMap::new(bx.into_iter().enumerate().collect(), len, tgt).unwrap();
        let after = kendall_disagreement(&pi, &sigma);
        prop_assert!((before - after).abs() < 1e-15);
    }

    #[test]
    fn correctness_is_monotone((a, b, c) in three_permutations(10)) {
        let pi = map_of(&a);
        let s1 = map_of(&b);
        let s2 = map_of(&c);
        let (r1, r2) = (kendall_disagreement(&pi, &s1), kendall_disagreement(&pi, &s2));
        let ref_len = 12usize;
        // Non-increasing in R at fixed lengths.
        let (lo, hi) = if r1 <= r2 { (&s1, &s2) } else { (&s2, &s1) };
        prop_assert!(
            reorder_correctness(&pi, lo, 8, ref_len) >= reorder_correctness(&pi, hi, 8, ref_len)
        );
        // Non-decreasing in |H| while |H| <= |Y|.
        for h in 1..ref_len {
            prop_assert!(
                reorder_correctness(&pi, &s1, h, ref_len)
                    <= reorder_correctness(&pi, &s1, h + 1, ref_len) + 1e-15
            );
        }
    }

    #[test]
    fn bins_partition_the_corpus(seed in 0u64..500, bins in 1usize..6) {
        let spec = TaskSpec::new(TaskKind::LocalSwap { swap_prob: 0.4 }, 8, 8, seed);
        let manifest = corpus::generate(&spec, 12, "prop").unwrap();
        let triplets: Vec<EvalTriplet> = manifest
            .utterances
            .iter()
            .map(|u| manifest.triplet(u, &u.translation).unwrap())
            .collect();
        let result = bin_by_difficulty(&triplets, bins).unwrap();
        let mut all_ids: Vec<String> = result.iter().flat_map(|b| b.member_ids.clone()).collect();
        prop_assert_eq!(all_ids.len(), 12);
        all_ids.sort();
        all_ids.dedup();
        prop_assert_eq!(all_ids.len(), 12);
        let sizes: Vec<usize> = result.iter().map(|b| b.member_ids.len()).collect();
        let min = sizes.iter().min().unwrap();
        let max = sizes.iter().max().unwrap();
        prop_assert!(max - min <= 1);
    }

    #[test]
    fn stored_difficulty_matches_recomputation(seed in 0u64..200) {
        for kind in [
            TaskKind::Copy,
            TaskKind::Substitute,
            TaskKind::LocalSwap { swap_prob: 0.5 },
            TaskKind::WindowPermute { window: 3, pattern: vec![1, 2, 0] },
            TaskKind::Reverse,
        ] {
            let spec = TaskSpec::new(kind, 6, 6, seed);
            let manifest = corpus::generate(&spec, 4, "prop").unwrap();
            for utt in &manifest.utterances {
                prop_assert_eq!(utt.r_pi, reorder_difficulty(&utt.pi));
            }
        }
    }
}
