//! Reordering evaluation report: per-utterance scores, corpus summary,
//! difficulty bins, and a plotting CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::align::EvalTriplet;
use super::bins::{bin_by_difficulty, BinError, DifficultyBin};
use super::bleu::corpus_bleu;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerUtt {
    pub id: String,
    pub r_pi: f64,
    pub r_acc: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub utterances: usize,
    pub corpus_bleu: f64,
    pub mean_r_acc: f64,
    pub mean_r_pi: f64,
}

/// The full reordering analysis for one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReorderReport {
    pub per_utt: Vec<PerUtt>,
    pub summary: Summary,
    pub bins: Vec<DifficultyBin>,
}

/// Score every triplet, the corpus, and `bins` difficulty bins.
pub fn build_report(triplets: &[EvalTriplet], bins: usize) -> Result<ReorderReport, BinError> {
    let per_utt: Vec<PerUtt> = triplets
        .iter()
        .map(|t| PerUtt {
            id: t.id.clone(),
            r_pi: t.reorder_difficulty(),
            r_acc: t.reorder_correctness(),
            hyp_len: t.hypothesis.len(),
            ref_len: t.reference.len(),
        })
        .collect();
    let hyps: Vec<Vec<String>> = triplets.iter().map(|t| t.hypothesis.clone()).collect();
    let refs: Vec<Vec<String>> = triplets.iter().map(|t| t.reference.clone()).collect();
    let n = triplets.len() as f64;
    let summary = Summary {
        utterances: triplets.len(),
        corpus_bleu: corpus_bleu(&hyps, &refs)?,
        mean_r_acc: per_utt.iter().map(|u| u.r_acc).sum::<f64>() / n,
        mean_r_pi: per_utt.iter().map(|u| u.r_pi).sum::<f64>() / n,
    };
    let bins = bin_by_difficulty(triplets, bins)?;
    Ok(ReorderReport { per_utt, summary, bins })
}

/// CSV of the bin curve, one row per bin.
pub fn write_bins_csv(report: &ReorderReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "bin,r_pi_min,r_pi_max,count,bleu,mean_r_acc")?;
    for b in &report.bins {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            b.index,
            b.r_pi_min,
            b.r_pi_max,
            b.member_ids.len(),
            b.bleu,
            b.mean_r_acc
        )?;
    }
    Ok(())
}
