//! `bench-decode`: greedy-decoding throughput over the eval split,
//! median of several repetitions after one warmup pass.

use std::path::Path;
use std::time::Instant;

use ctcst_core::corpus::CorpusManifest;
use ctcst_core::decode::decode_manifest;
use ctcst_core::nn::ParameterSet;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::{check_run_meta, load_model, load_split};

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub repetitions: usize,
    pub utterances: usize,
    pub frames: usize,
    pub utt_per_sec: Vec<f64>,
    pub frames_per_sec: Vec<f64>,
    pub median_utt_per_sec: f64,
    pub median_frames_per_sec: f64,
    /// Largest relative deviation of any repetition from the median.
    pub max_rel_spread: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("throughput is finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Timed decoding repetitions; shared by the subcommand and the tests.
pub fn measure(
    params: &ParameterSet,
    manifest: &CorpusManifest,
    repetitions: usize,
) -> Result<BenchResult, CliError> {
    let utterances = manifest.utterances.len();
    let frames: usize = manifest.utterances.iter().map(|u| u.features.frames()).sum();
    // Warmup pass: page in caches and the thread pool.
    decode_manifest(params, manifest)?;

    let mut utt_per_sec = Vec::with_capacity(repetitions);
    let mut frames_per_sec = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let started = Instant::now();
        let decoded = decode_manifest(params, manifest)?;
        let secs = started.elapsed().as_secs_f64();
        debug_assert_eq!(decoded.len(), utterances);
        utt_per_sec.push(utterances as f64 / secs);
        frames_per_sec.push(frames as f64 / secs);
    }
    let median_utt_per_sec = median(&utt_per_sec);
    let median_frames_per_sec = median(&frames_per_sec);
    let max_rel_spread = utt_per_sec
        .iter()
        .map(|v| (v - median_utt_per_sec).abs() / median_utt_per_sec)
        .fold(0.0, f64::max);
    Ok(BenchResult {
        repetitions,
        utterances,
        frames,
        utt_per_sec,
        frames_per_sec,
        median_utt_per_sec,
        median_frames_per_sec,
        max_rel_spread,
    })
}

pub fn run(loaded: &LoadedConfig, out: &Path, repetitions: usize) -> Result<ReportFile, CliError> {
    if repetitions == 0 {
        return Err(CliError::Config("--repetitions must be at least 1".into()));
    }
    let meta = check_run_meta(out, loaded)?;
    let mut report = ReportBuilder::new("bench_decode", &loaded.hash, meta.seed);
    let manifest = load_split(out, "eval")?;
    let params = load_model(out)?;
    let result = measure(&params, &manifest, repetitions)?;
    report
        .metric("utterances_per_sec", result.median_utt_per_sec)
        .metric("frames_per_sec", result.median_frames_per_sec)
        .metric("max_rel_spread", result.max_rel_spread)
        .metric("detail", &result);
    let (_, file) = report.write(out)?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
