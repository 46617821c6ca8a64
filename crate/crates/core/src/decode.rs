//! Greedy decoding over whole manifests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusManifest;
use crate::ctc::{greedy_decode, CtcError};
use crate::nn::{forward, NnError, ParameterSet};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("utterance {id}: {source}")]
    Utterance { id: String, source: NnError },
    #[error(transparent)]
    Ctc(#[from] CtcError),
}

/// Greedy decode of one utterance, token strings on both heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedUtterance {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asr_tokens: Option<Vec<String>>,
}

/// Decode every utterance in the manifest, in manifest order.
pub fn decode_manifest(
    params: &ParameterSet,
    manifest: &CorpusManifest,
) -> Result<Vec<DecodedUtterance>, DecodeError> {
    manifest
        .utterances
        .par_iter()
        .map(|utt| {
            let out = forward(params, &utt.features, false)
                .map_err(|source| DecodeError::Utterance { id: utt.id.clone(), source })?;
            let (st_seq, _) = greedy_decode(&out.st_lattice);
            let tokens = manifest.tgt_vocab.decode(&st_seq)?;
            let asr_tokens = out
                .asr_lattice
                .map(|lat| {
                    let (asr_seq, _) = greedy_decode(&lat);
                    manifest.src_vocab.decode(&asr_seq)
                })
                .transpose()?;
            Ok(DecodedUtterance { id: utt.id.clone(), tokens, asr_tokens })
        })
        .collect()
}

/// Fraction of utterances whose decoded tokens exactly match the
/// reference translation.
pub fn exact_match_rate(decoded: &[DecodedUtterance], manifest: &CorpusManifest) -> f64 {
    let hits = decoded
        .iter()
        .zip(&manifest.utterances)
        .filter(|(d, u)| {
            debug_assert_eq!(d.id, u.id);
            d.tokens == u.translation
        })
        .count();
    hits as f64 / decoded.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, TaskKind, TaskSpec};
    use crate::nn::ModelConfig;

    #[test]
    fn decoding_preserves_order_and_produces_both_heads() {
        let spec = TaskSpec::new(TaskKind::Substitute, 6, 6, 11);
        let manifest = generate(&spec, 8, "dev").unwrap();
        let cfg = ModelConfig::toy(
            spec.feat_dim,
            manifest.tgt_vocab.size(),
            Some((2, manifest.src_vocab.size())),
        );
        let params = ParameterSet::init(&cfg).unwrap();
        let decoded = decode_manifest(&params, &manifest).unwrap();
        assert_eq!(decoded.len(), 8);
        for (d, u) in decoded.iter().zip(&manifest.utterances) {
            assert_eq!(d.id, u.id);
            assert!(d.asr_tokens.is_some());
        }
        // Untrained model: exact match is effectively zero but defined.
        let rate = exact_match_rate(&decoded, &manifest);
        assert!((0.0..=1.0).contains(&rate));
    }

    #[test]
    fn decoding_is_deterministic() {
        let spec = TaskSpec::new(TaskKind::Copy, 5, 5, 3);
        let manifest = generate(&spec, 5, "dev").unwrap();
        let cfg = ModelConfig::toy(spec.feat_dim, manifest.tgt_vocab.size(), None);
        let params = ParameterSet::init(&cfg).unwrap();
        let a = decode_manifest(&params, &manifest).unwrap();
        let b = decode_manifest(&params, &manifest).unwrap();
        assert_eq!(a, b);
    }
}
