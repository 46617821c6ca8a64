//! `eval`: score a hypothesis file against the eval split.

use std::path::Path;

use ctcst_core::corpus::CorpusManifest;
use ctcst_core::metrics::{
    build_report, corpus_bleu, corpus_wer, random_permutation_baseline, wer, write_bins_csv,
    EvalTriplet,
};

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::{hyps_path, join_by_id, load_split, read_alignment_file, read_hypotheses};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Bleu,
    Wer,
    Reorder,
}

impl EvalKind {
    fn command(self) -> &'static str {
        match self {
            EvalKind::Bleu => "eval_bleu",
            EvalKind::Wer => "eval_wer",
            EvalKind::Reorder => "eval_reorder",
        }
    }
}

pub fn run(
    loaded: &LoadedConfig,
    out: &Path,
    kind: EvalKind,
    bins: usize,
) -> Result<ReportFile, CliError> {
    let mut report = ReportBuilder::new(kind.command(), &loaded.hash, loaded.config.train.seed);
    let manifest = load_split(out, "eval")?;
    let decoded = read_hypotheses(&hyps_path(out))?;
    let joined = join_by_id(&manifest, &decoded)?;

    match kind {
        EvalKind::Bleu => {
            let hyps: Vec<Vec<String>> = joined.iter().map(|(_, d)| d.tokens.clone()).collect();
            let refs: Vec<Vec<String>> =
                joined.iter().map(|(u, _)| u.translation.clone()).collect();
            let bleu = corpus_bleu(&hyps, &refs)?;
            let exact = joined.iter().filter(|(u, d)| d.tokens == u.translation).count();
            report
                .metric("bleu", bleu)
                .metric("exact_match", exact as f64 / joined.len() as f64);
        }
        EvalKind::Wer => {
            let mut pairs = Vec::new();
            for (u, d) in &joined {
                let asr = d.asr_tokens.as_ref().ok_or_else(|| {
                    CliError::Data(format!(
                        "utterance {:?} has no asr_tokens; decode a multitask model for WER",
                        u.id
                    ))
                })?;
                pairs.push((asr.as_slice(), u.transcription.as_slice()));
            }
            let corpus = corpus_wer(pairs.iter().copied())?;
            let mean = pairs
                .iter()
                .map(|(h, r)| wer(h, r))
                .collect::<Result<Vec<_>, _>>()?
                .iter()
                .sum::<f64>()
                / joined.len() as f64;
            report.metric("wer", corpus).metric("mean_utterance_wer", mean);
        }
        EvalKind::Reorder => {
            let triplets = build_triplets(loaded, &manifest, &joined)?;
            let bins = bins.min(triplets.len()).max(1);
            let reorder = build_report(&triplets, bins)?;
            let baseline = random_permutation_baseline(&triplets, loaded.config.train.seed, 100);

            let report_path = out.join("reorder_report.json");
            std::fs::write(&report_path, serde_json::to_string_pretty(&reorder)?)?;
            let csv_path = out.join("reorder_bins.csv");
            let mut csv = Vec::new();
            write_bins_csv(&reorder, &mut csv)?;
            std::fs::write(&csv_path, csv)?;

            report
                .metric("mean_r_acc", reorder.summary.mean_r_acc)
                .metric("mean_r_pi", reorder.summary.mean_r_pi)
                .metric("corpus_bleu", reorder.summary.corpus_bleu)
                .metric("random_permutation_baseline", baseline)
                .metric("bins", reorder.bins.len())
                .artifact("reorder_report", &report_path)
                .artifact("bins_csv", &csv_path);
        }
    }
    let (_, file) = report.write(out)?;
    Ok(file)
}

/// Triplets with sigma from the external alignment file when configured,
/// otherwise from the built-in lexical aligner.
pub fn build_triplets(
    loaded: &LoadedConfig,
    manifest: &CorpusManifest,
    joined: &[(&ctcst_core::corpus::Utterance, &ctcst_core::decode::DecodedUtterance)],
) -> Result<Vec<EvalTriplet>, CliError> {
    match &loaded.config.data.sigma_alignments {
        Some(path) => {
            let maps = read_alignment_file(path)?;
            joined
                .iter()
                .map(|(u, d)| {
                    let sigma = maps.get(&u.id).cloned().ok_or_else(|| {
                        CliError::Data(format!("no sigma alignment for utterance {:?}", u.id))
                    })?;
                    Ok(EvalTriplet {
                        id: u.id.clone(),
                        transcription: u.transcription.clone(),
                        hypothesis: d.tokens.clone(),
                        reference: u.translation.clone(),
                        pi: u.pi.clone(),
                        sigma,
                    })
                })
                .collect()
        }
        None => joined
            .iter()
            .map(|(u, d)| manifest.triplet(u, &d.tokens).map_err(CliError::from))
            .collect(),
    }
}
