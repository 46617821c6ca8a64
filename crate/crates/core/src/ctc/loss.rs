//! Exact CTC log-likelihood, its gradient, and the enumeration oracle.

use ndarray::Array2;

use super::{
    collapse, log_add_exp, log_sum_exp, min_frames, AlignmentPath, CtcError, LabelSequence,
    LogProbLattice, Vocabulary, BLANK_ID,
};

/// Maximum number of paths `ctc_log_likelihood_bruteforce` will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Blank-interleaved extended label sequence: `[-, y1, -, y2, ..., -]`.
fn extend_with_blanks(target: &LabelSequence) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK_ID);
    for &id in target.ids() {
        ext.push(id);
        ext.push(BLANK_ID);
    }
    ext
}

fn check_target(lattice: &LogProbLattice, target: &LabelSequence) -> Result<(), CtcError> {
    if let Some(&id) = target.ids().iter().find(|&&id| id >= lattice.vocab_size()) {
        return Err(CtcError::DimensionMismatch(format!(
            "target id {id} out of range for lattice with V = {}",
            lattice.vocab_size()
        )));
    }
    Ok(())
}

/// Forward-variable table over the extended sequence. `alpha[t][s]` is the
/// log-probability of emitting the prefix of `ext[..=s]` within frames
/// `0..=t`, including the emission at `t`.
fn forward_table(lattice: &LogProbLattice, ext: &[usize]) -> Array2<f64> {
    let t_len = lattice.frames();
    let s_len = ext.len();
    let lp = lattice.values();
    let mut alpha = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);

    alpha[(0, 0)] = lp[(0, ext[0])];
    if s_len > 1 {
        alpha[(0, 1)] = lp[(0, ext[1])];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_add_exp(acc, alpha[(t - 1, s - 1)]);
            }
            if s >= 2 && ext[s] != BLANK_ID && ext[s] != ext[s - 2] {
                acc = log_add_exp(acc, alpha[(t - 1, s - 2)]);
            }
            if acc != f64::NEG_INFINITY {
                alpha[(t, s)] = acc + lp[(t, ext[s])];
            }
        }
    }
    alpha
}

/// Backward table. `beta[t][s]` is the log-probability of completing the
/// path from state `s` over frames `t+1..T`, excluding the emission at `t`.
fn backward_table(lattice: &LogProbLattice, ext: &[usize]) -> Array2<f64> {
    let t_len = lattice.frames();
    let s_len = ext.len();
    let lp = lattice.values();
    let mut beta = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);

    beta[(t_len - 1, s_len - 1)] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1, s_len - 2)] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1, s)] + lp[(t + 1, ext[s])];
            if s + 1 < s_len {
                acc = log_add_exp(acc, beta[(t + 1, s + 1)] + lp[(t + 1, ext[s + 1])]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK_ID && ext[s + 2] != ext[s] {
                acc = log_add_exp(acc, beta[(t + 1, s + 2)] + lp[(t + 1, ext[s + 2])]);
            }
            beta[(t, s)] = acc;
        }
    }
    beta
}

/// log p(target | lattice), marginalized over all collapsing paths by the
/// forward dynamic program. Infeasible targets yield `-inf`, not an error.
pub fn ctc_log_likelihood(
    lattice: &LogProbLattice,
    target: &LabelSequence,
) -> Result<f64, CtcError> {
    check_target(lattice, target)?;
    if lattice.frames() < min_frames(target) {
        return Ok(f64::NEG_INFINITY);
    }
    let ext = extend_with_blanks(target);
    let alpha = forward_table(lattice, &ext);
    let t_last = lattice.frames() - 1;
    let s_len = ext.len();
    let mut ll = alpha[(t_last, s_len - 1)];
    if s_len > 1 {
        ll = log_add_exp(ll, alpha[(t_last, s_len - 2)]);
    }
    Ok(ll)
}

/// Enumeration oracle: sums every length-T path whose collapse equals the
/// target. Refuses instances with more than [`BRUTE_FORCE_LIMIT`] paths.
pub fn ctc_log_likelihood_bruteforce(
    lattice: &LogProbLattice,
    target: &LabelSequence,
) -> Result<f64, CtcError> {
    check_target(lattice, target)?;
    let t_len = lattice.frames();
    let v = lattice.vocab_size();
    let paths = (v as f64).powi(t_len as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(CtcError::InstanceTooLarge { paths, limit: BRUTE_FORCE_LIMIT });
    }
    // Any vocabulary of matching size works for collapsing; indices are all
    // that matter.
    let vocab = Vocabulary::new((0..v).map(|i| format!("#{i}")).collect())?;
    let lp = lattice.values();

    let mut terms = Vec::new();
    let mut path = vec![0usize; t_len];
    loop {
        let collapsed = collapse(&AlignmentPath::new(path.clone()), &vocab)?;
        if collapsed == *target {
            let logp: f64 = path.iter().enumerate().map(|(t, &k)| lp[(t, k)]).sum();
            terms.push(logp);
        }
        // Odometer increment over the V^T path space.
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok(log_sum_exp(terms));
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// Gradient of the negative log-likelihood with respect to pre-softmax
/// logits, computed by forward-backward. Each row sums to zero.
///
/// The lattice's log-probabilities themselves serve as the logit
/// parameterization (log-softmax is idempotent on them).
pub fn ctc_grad(
    lattice: &LogProbLattice,
    target: &LabelSequence,
) -> Result<Array2<f64>, CtcError> {
    check_target(lattice, target)?;
    let t_len = lattice.frames();
    let v = lattice.vocab_size();
    if t_len < min_frames(target) {
        return Err(CtcError::InfeasibleGradient);
    }
    let ext = extend_with_blanks(target);
    let alpha = forward_table(lattice, &ext);
    let beta = backward_table(lattice, &ext);
    let s_len = ext.len();
    let t_last = t_len - 1;
    let mut ll = alpha[(t_last, s_len - 1)];
    if s_len > 1 {
        ll = log_add_exp(ll, alpha[(t_last, s_len - 2)]);
    }
    if ll == f64::NEG_INFINITY {
        return Err(CtcError::InfeasibleGradient);
    }

    let lp = lattice.values();
    let mut grad = Array2::zeros((t_len, v));
    for t in 0..t_len {
        // log posterior mass per vocabulary entry at frame t
        let mut occ = vec![f64::NEG_INFINITY; v];
        for s in 0..s_len {
            let g = alpha[(t, s)] + beta[(t, s)];
            occ[ext[s]] = log_add_exp(occ[ext[s]], g);
        }
        for k in 0..v {
            grad[(t, k)] = lp[(t, k)].exp() - (occ[k] - ll).exp();
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::log_softmax_rows;
    use ndarray::Array2;
    use rand::Rng;

    fn uniform_lattice(t: usize, v: usize) -> LogProbLattice {
        let p = (1.0 / v as f64).ln();
        LogProbLattice::new(Array2::from_elem((t, v), p)).unwrap()
    }

    fn random_lattice(t: usize, v: usize, rng: &mut impl Rng) -> LogProbLattice {
        let logits = Array2::from_shape_fn((t, v), |_| rng.random_range(-2.0..2.0));
        LogProbLattice::from_logits(logits).unwrap()
    }

    #[test]
    fn uniform_two_frame_single_label() {
        // T=2, V={blank,a}, all p=0.5, target [a]: paths a-, -a, aa.
        let l = uniform_lattice(2, 2);
        let y = LabelSequence::new(vec![1]).unwrap();
        let ll = ctc_log_likelihood(&l, &y).unwrap();
        assert!((ll - 0.75_f64.ln()).abs() < 1e-12);
        let bf = ctc_log_likelihood_bruteforce(&l, &y).unwrap();
        assert!((ll - bf).abs() < 1e-12);
    }

    #[test]
    fn uniform_three_frame_two_labels() {
        // T=3, V={blank,a,b}, all p=1/3, target [a,b]:
        // paths aab, abb, ab-, a-b, -ab.
        let l = uniform_lattice(3, 3);
        let y = LabelSequence::new(vec![1, 2]).unwrap();
        let ll = ctc_log_likelihood(&l, &y).unwrap();
        assert!((ll - (5.0 / 27.0_f64).ln()).abs() < 1e-12);
        let bf = ctc_log_likelihood_bruteforce(&l, &y).unwrap();
        assert!((ll - bf).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_is_neg_infinity() {
        let l = uniform_lattice(2, 2);
        let y = LabelSequence::new(vec![1, 1]).unwrap(); // min_frames = 3
        assert_eq!(ctc_log_likelihood(&l, &y).unwrap(), f64::NEG_INFINITY);
        // Brute force agrees.
        assert_eq!(ctc_log_likelihood_bruteforce(&l, &y).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn target_longer_than_frames_is_neg_infinity() {
        let l = uniform_lattice(2, 3);
        let y = LabelSequence::new(vec![1, 2, 1]).unwrap();
        assert_eq!(ctc_log_likelihood_bruteforce(&l, &y).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_target_single_frame_is_blank_prob() {
        let mut rng = crate::rng::rng_from_seed(3);
        let l = random_lattice(1, 3, &mut rng);
        let ll = ctc_log_likelihood(&l, &LabelSequence::empty()).unwrap();
        assert!((ll - l.values()[(0, 0)]).abs() < 1e-12);
        let bf = ctc_log_likelihood_bruteforce(&l, &LabelSequence::empty()).unwrap();
        assert!((ll - bf).abs() < 1e-12);
    }

    #[test]
    fn dp_matches_bruteforce_on_random_instances() {
        let mut rng = crate::rng::rng_from_seed(17);
        for _ in 0..50 {
            let t = rng.random_range(1..=6);
            let v = rng.random_range(2..=3);
            let l = random_lattice(t, v, &mut rng);
            let len = rng.random_range(0..=4.min(t));
            let ids: Vec<usize> =
                (0..len).map(|_| rng.random_range(1..v)).collect();
            let y = LabelSequence::new(ids).unwrap();
            let dp = ctc_log_likelihood(&l, &y).unwrap();
            let bf = ctc_log_likelihood_bruteforce(&l, &y).unwrap();
            if dp == f64::NEG_INFINITY {
                assert_eq!(bf, f64::NEG_INFINITY);
            } else {
                assert!((dp - bf).abs() <= 1e-9, "dp={dp} bf={bf}");
            }
        }
    }

    #[test]
    fn bruteforce_refuses_large_instances() {
        let l = uniform_lattice(18, 3); // 3^18 > 1e7 paths
        let err = ctc_log_likelihood_bruteforce(&l, &LabelSequence::empty()).unwrap_err();
        assert!(matches!(err, CtcError::InstanceTooLarge { .. }));
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let mut rng = crate::rng::rng_from_seed(5);
        let l = random_lattice(5, 3, &mut rng);
        let y = LabelSequence::new(vec![1, 2]).unwrap();
        let g = ctc_grad(&l, &y).unwrap();
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-8);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(11);
        for _ in 0..10 {
            let t = rng.random_range(2..=5);
            let v = rng.random_range(2..=3);
            let l = random_lattice(t, v, &mut rng);
            let len = rng.random_range(1..=2.min(t));
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
            let y = LabelSequence::new(ids).unwrap();
            if ctc_log_likelihood(&l, &y).unwrap() == f64::NEG_INFINITY {
                continue;
            }
            let g = ctc_grad(&l, &y).unwrap();
            let h = 1e-5;
            for r in 0..t {
                for c in 0..v {
                    let mut plus = l.values().clone();
                    plus[(r, c)] += h;
                    let mut minus = l.values().clone();
                    minus[(r, c)] -= h;
                    let llp = ctc_log_likelihood(
                        &LogProbLattice::new(log_softmax_rows(&plus)).unwrap(),
                        &y,
                    )
                    .unwrap();
                    let llm = ctc_log_likelihood(
                        &LogProbLattice::new(log_softmax_rows(&minus)).unwrap(),
                        &y,
                    )
                    .unwrap();
                    let fd = -(llp - llm) / (2.0 * h);
                    let denom = g[(r, c)].abs().max(fd.abs()).max(1e-6);
                    assert!(
                        ((g[(r, c)] - fd) / denom).abs() <= 1e-4,
                        "t={r} k={c}: analytic {} vs fd {fd}",
                        g[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn grad_vanishes_at_peaked_optimum() {
        // T=1, target [a], p(a) -> 1.
        let logits = ndarray::array![[-30.0, 0.0]];
        let l = LogProbLattice::from_logits(logits).unwrap();
        let y = LabelSequence::new(vec![1]).unwrap();
        let g = ctc_grad(&l, &y).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grad_errors_on_infeasible_target() {
        let l = uniform_lattice(2, 2);
        let y = LabelSequence::new(vec![1, 1]).unwrap();
        assert!(matches!(ctc_grad(&l, &y), Err(CtcError::InfeasibleGradient)));
    }

    #[test]
    fn total_probability_over_all_targets_is_one() {
        // Sum of exp(ll) over every label sequence with |y| <= T must be 1.
        let mut rng = crate::rng::rng_from_seed(23);
        let t = 4;
        let v = 3;
        let l = random_lattice(t, v, &mut rng);
        let mut total = 0.0;
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(ids) = stack.pop() {
            let y = LabelSequence::new(ids.clone()).unwrap();
            total += ctc_log_likelihood(&l, &y).unwrap().exp();
            if ids.len() < t {
                for k in 1..v {
                    let mut next = ids.clone();
                    next.push(k);
                    stack.push(next);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "total = {total}");
    }
}
