//! Manifest persistence.
//!
//! A split is stored as `<split>.jsonl` (one utterance per line) next to
//! `<split>.meta.json` (spec, vocabularies, lexicon, feature storage).
//! Features are inline JSON by default or sidecar tensors under `feats/`
//! with the binary layout: magic `FEAT`, u32 frames, u32 dim, then 32-bit
//! little-endian reals row-major.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusManifest, TaskSpec, Utterance};
use crate::ctc::Vocabulary;
use crate::metrics::{reorder_difficulty, AlignmentMap};
use crate::nn::FeatureSequence;

const FEAT_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStorage {
    Inline,
    Sidecar,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    spec: TaskSpec,
    split: String,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    lexicon: Option<Vec<usize>>,
    features: FeatureStorage,
}

#[derive(Serialize, Deserialize)]
struct AlignRecord {
    pairs: Vec<(usize, usize)>,
    src_len: usize,
    tgt_len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeaturesRecord {
    Inline { frames: usize, dim: usize, values: Vec<Vec<f64>> },
    Sidecar { path: String },
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    source: Vec<String>,
    transcription: Vec<String>,
    translation: Vec<String>,
    pi: AlignRecord,
    r_pi: f64,
    features: FeaturesRecord,
    distilled_translation: Option<Vec<String>>,
}

pub fn write_features(features: &FeatureSequence, mut w: impl Write) -> Result<(), CorpusError> {
    w.write_all(FEAT_MAGIC)?;
    w.write_all(&(features.frames() as u32).to_le_bytes())?;
    w.write_all(&(features.feat_dim() as u32).to_le_bytes())?;
    for v in features.values.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features(mut r: impl Read) -> Result<FeatureSequence, CorpusError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEAT_MAGIC {
        return Err(CorpusError::MalformedManifest(format!("bad feature magic {magic:?}")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let frames = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4)?;
    let dim = u32::from_le_bytes(buf4) as usize;
    let mut values = Vec::with_capacity(frames * dim);
    for _ in 0..frames * dim {
        r.read_exact(&mut buf4)?;
        values.push(f32::from_le_bytes(buf4) as f64);
    }
    let arr = Array2::from_shape_vec((frames, dim), values)
        .map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
    Ok(FeatureSequence::new(arr))
}

/// Write `<dir>/<split>.jsonl` plus `<dir>/<split>.meta.json`; with
/// sidecar storage, feature tensors go under `<dir>/feats/`.
pub fn save_manifest(
    manifest: &CorpusManifest,
    dir: &Path,
    storage: FeatureStorage,
) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir)?;
    if storage == FeatureStorage::Sidecar {
        std::fs::create_dir_all(dir.join("feats"))?;
    }

    let meta = MetaFile {
        spec: manifest.spec.clone(),
        split: manifest.split.clone(),
        src_vocab: manifest.src_vocab.tokens().to_vec(),
        tgt_vocab: manifest.tgt_vocab.tokens().to_vec(),
        lexicon: manifest.lexicon.clone(),
        features: storage,
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
    std::fs::write(dir.join(format!("{}.meta.json", manifest.split)), meta_json)?;

    let mut out = Vec::new();
    for utt in &manifest.utterances {
        let features = match storage {
            FeatureStorage::Inline => FeaturesRecord::Inline {
                frames: utt.features.frames(),
                dim: utt.features.feat_dim(),
                values: utt.features.values.rows().into_iter().map(|r| r.to_vec()).collect(),
            },
            FeatureStorage::Sidecar => {
                let rel = format!("feats/{}.feat", utt.id);
                let mut buf = Vec::new();
                write_features(&utt.features, &mut buf)?;
                std::fs::write(dir.join(&rel), buf)?;
                FeaturesRecord::Sidecar { path: rel }
            }
        };
        let record = UtteranceRecord {
            id: utt.id.clone(),
            source: utt.source.clone(),
            transcription: utt.transcription.clone(),
            translation: utt.translation.clone(),
            pi: AlignRecord {
                pairs: utt.pi.pairs().to_vec(),
                src_len: utt.pi.src_len(),
                tgt_len: utt.pi.tgt_len(),
            },
            r_pi: utt.r_pi,
            features,
            distilled_translation: utt.distilled_translation.clone(),
        };
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::write(dir.join(format!("{}.jsonl", manifest.split)), out)?;
    Ok(())
}

/// Load a split saved by [`save_manifest`], validating alignments and the
/// stored difficulty values.
pub fn load_manifest(dir: &Path, split: &str) -> Result<CorpusManifest, CorpusError> {
    let meta_text = std::fs::read_to_string(dir.join(format!("{split}.meta.json")))?;
    let meta: MetaFile = serde_json::from_str(&meta_text)
        .map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
    meta.spec.validate()?;
    let src_vocab = Vocabulary::new(meta.src_vocab)?;
    let tgt_vocab = Vocabulary::new(meta.tgt_vocab)?;

    let file = std::fs::File::open(dir.join(format!("{split}.jsonl")))?;
    let mut utterances = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedManifest(format!("line {}: {e}", lineno + 1))
        })?;
        let pi = AlignmentMap::new(record.pi.pairs, record.pi.src_len, record.pi.tgt_len)?;
        let recomputed = reorder_difficulty(&pi);
        if (recomputed - record.r_pi).abs() > 1e-12 {
            return Err(CorpusError::MalformedManifest(format!(
                "utterance {:?}: stored r_pi {} disagrees with alignment ({recomputed})",
                record.id, record.r_pi
            )));
        }
        let features = match record.features {
            FeaturesRecord::Inline { frames, dim, values } => {
                if values.len() != frames || values.iter().any(|r| r.len() != dim) {
                    return Err(CorpusError::MalformedManifest(format!(
                        "utterance {:?}: feature shape disagrees with frames/dim",
                        record.id
                    )));
                }
                let flat: Vec<f64> = values.into_iter().flatten().collect();
                FeatureSequence::new(
                    Array2::from_shape_vec((frames, dim), flat)
                        .map_err(|e| CorpusError::MalformedManifest(e.to_string()))?,
                )
            }
            FeaturesRecord::Sidecar { path } => {
                let bytes = std::fs::read(dir.join(&path))?;
                read_features(&bytes[..])?
            }
        };
        utterances.push(Utterance {
            id: record.id,
            source: record.source,
            transcription: record.transcription,
            translation: record.translation,
            pi,
            r_pi: record.r_pi,
            features,
            distilled_translation: record.distilled_translation,
        });
    }

    Ok(CorpusManifest {
        spec: meta.spec,
        split: meta.split,
        src_vocab,
        tgt_vocab,
        lexicon: meta.lexicon,
        utterances,
    })
}
