//! Word error rate: token-level Levenshtein distance over reference length.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WerError {
    #[error("reference must not be empty")]
    EmptyReference,
}

/// Unit-cost edit distance between token sequences.
pub fn levenshtein(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// WER of a single hypothesis; can exceed 1 for long hypotheses.
pub fn wer(hypothesis: &[String], reference: &[String]) -> Result<f64, WerError> {
    if reference.is_empty() {
        return Err(WerError::EmptyReference);
    }
    Ok(levenshtein(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Corpus WER: total edit distance over total reference length.
pub fn corpus_wer<'a, I>(pairs: I) -> Result<f64, WerError>
where
    I: IntoIterator<Item = (&'a [String], &'a [String])>,
{
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (hyp, rf) in pairs {
        if rf.is_empty() {
            return Err(WerError::EmptyReference);
        }
        edits += levenshtein(hyp, rf);
        ref_len += rf.len();
    }
    if ref_len == 0 {
        return Err(WerError::EmptyReference);
    }
    Ok(edits as f64 / ref_len as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).unwrap(), 0.0);
    }

    #[test]
    fn single_substitution() {
        let w = wer(&toks("a b c"), &toks("a x c")).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        assert_eq!(wer(&[], &toks("a b c d")).unwrap(), 1.0);
    }

    #[test]
    fn long_hypothesis_can_exceed_one() {
        let w = wer(&toks("a b c d e f"), &toks("x")).unwrap();
        assert_eq!(w, 6.0);
    }

    #[test]
    fn empty_reference_errors() {
        assert!(wer(&toks("a"), &[]).is_err());
    }

    #[test]
    fn corpus_wer_pools_edits() {
        let h1 = toks("a b c");
        let r1 = toks("a x c");
        let h2 = toks("d e");
        let r2 = toks("d e");
        let pairs: Vec<(&[String], &[String])> =
            vec![(&h1[..], &r1[..]), (&h2[..], &r2[..])];
        let w = corpus_wer(pairs).unwrap();
        assert!((w - 1.0 / 5.0).abs() < 1e-15);
    }
}
