//! `train`: optimize on the train split, checkpointing on schedule and
//! persisting the averaged final model.

use std::path::Path;

use ctcst_core::nn::{save_checkpoint, ParameterSet};
use ctcst_core::train::{average_checkpoints, prepare_items, train};

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::{ckpt_dir, load_split, write_run_meta, RunMeta};

pub fn run(loaded: &LoadedConfig, out: &Path) -> Result<ReportFile, CliError> {
    let cfg = &loaded.config;
    let mut report = ReportBuilder::new("train", &loaded.hash, cfg.train.seed);

    let manifest = load_split(out, "train")?;
    let model_cfg = loaded.model_config()?;
    let params = ParameterSet::init(&model_cfg)?;
    let (items, rejected) = prepare_items(&manifest, &params)?;

    let ckpts = ckpt_dir(out);
    let (final_params, log, checkpoints) = train(params, items, &cfg.train, Some(&ckpts))?;

    let k = cfg.train.average_last_k.max(1).min(checkpoints.len());
    let averaged = average_checkpoints(&checkpoints[checkpoints.len() - k..])?;
    let averaged_path = ckpts.join("averaged.bin");
    save_checkpoint(&averaged, &averaged_path)?;

    let log_path = out.join("train_log.jsonl");
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    std::fs::write(&log_path, buf)?;

    write_run_meta(out, &RunMeta { config_hash: loaded.hash.clone(), seed: cfg.train.seed })?;

    if let Some(last) = log.records.last() {
        report
            .metric("final_loss", last.loss)
            .metric("final_st_loss", last.st_loss)
            .metric("final_asr_loss", last.asr_loss)
            .metric("final_lr", last.lr);
    }
    report
        .metric("steps", log.records.len())
        .metric("trained_utterances", manifest.utterances.len() - rejected.len())
        .metric("rejected_utterances", rejected)
        .metric("averaged_checkpoints", k)
        .metric("parameter_count", final_params.num_scalars())
        .artifact("train_log", &log_path)
        .artifact("checkpoints", &ckpts)
        .artifact("averaged_model", &averaged_path);
    let (_, file) = report.write(out)?;
    Ok(file)
}
