//! Subcommand implementations and shared plumbing.

pub mod bench;
pub mod bin_analysis;
pub mod decode;
pub mod eval;
pub mod gen_data;
pub mod saliency;
pub mod train;

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use ctcst_core::corpus::{load_manifest, CorpusManifest};
use ctcst_core::decode::DecodedUtterance;
use ctcst_core::metrics::{simplify_to_bijection, AlignmentMap};
use ctcst_core::nn::{load_checkpoint, ParameterSet};
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;
use crate::error::CliError;

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn ckpt_dir(out: &Path) -> PathBuf {
    out.join("ckpts")
}

pub fn hyps_path(out: &Path) -> PathBuf {
    out.join("hyps.jsonl")
}

pub fn load_split(out: &Path, split: &str) -> Result<CorpusManifest, CliError> {
    let dir = data_dir(out);
    load_manifest(&dir, split).map_err(|e| {
        CliError::Data(format!(
            "cannot load split {split:?} from {} (run gen-data first?): {e}",
            dir.display()
        ))
    })
}

/// Metadata persisted by `train` and checked by downstream commands.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_run_meta(out: &Path, meta: &RunMeta) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(out.join("run_meta.json"), text)?;
    Ok(())
}

/// Fail with a config error when the supplied config is not the one the
/// checkpoints were trained with.
pub fn check_run_meta(out: &Path, loaded: &LoadedConfig) -> Result<RunMeta, CliError> {
    let path = out.join("run_meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Data(format!("missing {} (run train first?): {e}", path.display()))
    })?;
    let meta: RunMeta = serde_json::from_str(&text)?;
    if meta.config_hash != loaded.hash {
        return Err(CliError::Config(format!(
            "config hash mismatch: checkpoints were trained with {}, current config is {}",
            meta.config_hash, loaded.hash
        )));
    }
    Ok(meta)
}

/// The decoding model: the averaged checkpoint when present, otherwise
/// the one named by the `latest` pointer.
pub fn load_model(out: &Path) -> Result<ParameterSet, CliError> {
    let dir = ckpt_dir(out);
    let averaged = dir.join("averaged.bin");
    let path = if averaged.exists() {
        averaged
    } else {
        let latest = std::fs::read_to_string(dir.join("latest")).map_err(|e| {
            CliError::Data(format!("no checkpoints under {} : {e}", dir.display()))
        })?;
        dir.join(latest.trim())
    };
    load_checkpoint(&path).map_err(CliError::from)
}

pub fn write_hypotheses(path: &Path, decoded: &[DecodedUtterance]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for d in decoded {
        serde_json::to_writer(&mut out, d)?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<DecodedUtterance>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {} (run decode first?): {e}", path.display())))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct AlignmentLine {
    id: String,
    src_len: usize,
    tgt_len: usize,
    pairs: Vec<(usize, usize)>,
}

/// External alignment files: JSON-lines, 0-based indices, arbitrary
/// many-to-many pairs reduced to a bijection on load.
pub fn read_alignment_file(path: &Path) -> Result<HashMap<String, AlignmentMap>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open alignments {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AlignmentLine = serde_json::from_str(&line)?;
        let map = simplify_to_bijection(&record.pairs, record.src_len, record.tgt_len)?;
        out.insert(record.id, map);
    }
    Ok(out)
}

pub fn write_alignment_file<'a, I>(path: &Path, records: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = (&'a str, &'a AlignmentMap)>,
{
    let mut out = Vec::new();
    for (id, map) in records {
        let line = AlignmentLine {
            id: id.to_string(),
            src_len: map.src_len(),
            tgt_len: map.tgt_len(),
            pairs: map.pairs().to_vec(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Pair hypotheses with manifest utterances by id, erroring on gaps.
pub fn join_by_id<'m, 'h>(
    manifest: &'m CorpusManifest,
    decoded: &'h [DecodedUtterance],
) -> Result<Vec<(&'m ctcst_core::corpus::Utterance, &'h DecodedUtterance)>, CliError> {
    let by_id: HashMap<&str, &DecodedUtterance> =
        decoded.iter().map(|d| (d.id.as_str(), d)).collect();
    manifest
        .utterances
        .iter()
        .map(|u| {
            by_id
                .get(u.id.as_str())
                .map(|d| (u, *d))
                .ok_or_else(|| CliError::Data(format!("no hypothesis for utterance {:?}", u.id)))
        })
        .collect()
}
