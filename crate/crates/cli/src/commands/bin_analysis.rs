//! `bin-analysis`: the difficulty-binned quality curve over the eval
//! split, written as JSON plus a plotting CSV.

use std::path::Path;

use ctcst_core::metrics::{build_report, write_bins_csv};

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::eval::build_triplets;
use super::{hyps_path, join_by_id, load_split, read_hypotheses};

pub fn run(loaded: &LoadedConfig, out: &Path, bins: usize) -> Result<ReportFile, CliError> {
    if bins == 0 {
        return Err(CliError::Config("--bins must be at least 1".into()));
    }
    let mut report = ReportBuilder::new("bin_analysis", &loaded.hash, loaded.config.train.seed);
    let manifest = load_split(out, "eval")?;
    let decoded = read_hypotheses(&hyps_path(out))?;
    let joined = join_by_id(&manifest, &decoded)?;
    let triplets = build_triplets(loaded, &manifest, &joined)?;
    let reorder = build_report(&triplets, bins)?;

    let report_path = out.join("bin_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&reorder)?)?;
    let csv_path = out.join("bins.csv");
    let mut csv = Vec::new();
    write_bins_csv(&reorder, &mut csv)?;
    std::fs::write(&csv_path, csv)?;

    let bleu_curve: Vec<f64> = reorder.bins.iter().map(|b| b.bleu).collect();
    let racc_curve: Vec<f64> = reorder.bins.iter().map(|b| b.mean_r_acc).collect();
    report
        .metric("bins", reorder.bins.len())
        .metric("bleu_per_bin", bleu_curve)
        .metric("r_acc_per_bin", racc_curve)
        .metric("corpus_bleu", reorder.summary.corpus_bleu)
        .artifact("bin_report", &report_path)
        .artifact("bins_csv", &csv_path);
    let (_, file) = report.write(out)?;
    Ok(file)
}
