//! `gen-data`: render the train and eval splits plus the ground-truth
//! alignment file for the eval split.

use std::path::Path;

use ctcst_core::corpus::{expected_difficulty, generate, save_manifest, FeatureStorage};

use crate::config::{FeatureStorageChoice, LoadedConfig};
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::{data_dir, write_alignment_file};

pub fn run(loaded: &LoadedConfig, out: &Path) -> Result<ReportFile, CliError> {
    let cfg = &loaded.config;
    let mut report = ReportBuilder::new("gen_data", &loaded.hash, cfg.task.seed);
    let storage = match cfg.data.feature_storage {
        FeatureStorageChoice::Inline => FeatureStorage::Inline,
        FeatureStorageChoice::Sidecar => FeatureStorage::Sidecar,
    };
    let dir = data_dir(out);
    std::fs::create_dir_all(&dir)?;

    let train = generate(&cfg.task, cfg.data.n_train, "train")?;
    save_manifest(&train, &dir, storage)?;
    let eval = generate(&cfg.task, cfg.data.n_eval, "eval")?;
    save_manifest(&eval, &dir, storage)?;

    let align_path = dir.join("eval.align.jsonl");
    write_alignment_file(
        &align_path,
        eval.utterances.iter().map(|u| (u.id.as_str(), &u.pi)),
    )?;

    let difficulty = expected_difficulty(&cfg.task)?;
    let mean_r_pi =
        train.utterances.iter().map(|u| u.r_pi).sum::<f64>() / train.utterances.len() as f64;

    report
        .artifact("train_manifest", &dir.join("train.jsonl"))
        .artifact("eval_manifest", &dir.join("eval.jsonl"))
        .artifact("eval_alignments", &align_path)
        .metric("task_kind", cfg.task.kind.name())
        .metric("n_train", cfg.data.n_train)
        .metric("n_eval", cfg.data.n_eval)
        .metric("expected_difficulty", difficulty)
        .metric("train_mean_r_pi", mean_r_pi);
    let (_, file) = report.write(out)?;
    Ok(file)
}
