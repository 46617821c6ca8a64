//! `decode`: greedy decoding of the eval split into a hypothesis file.

use std::path::Path;

use ctcst_core::decode::decode_manifest;

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::{check_run_meta, hyps_path, load_model, load_split, write_hypotheses};

pub fn run(loaded: &LoadedConfig, out: &Path) -> Result<ReportFile, CliError> {
    let meta = check_run_meta(out, loaded)?;
    let mut report = ReportBuilder::new("decode", &loaded.hash, meta.seed);

    let manifest = load_split(out, "eval")?;
    let params = load_model(out)?;
    let decoded = decode_manifest(&params, &manifest)?;
    let path = hyps_path(out);
    write_hypotheses(&path, &decoded)?;

    let with_asr = decoded.iter().filter(|d| d.asr_tokens.is_some()).count();
    report
        .metric("utterances", decoded.len())
        .metric("with_asr_tokens", with_asr)
        .artifact("hypotheses", &path);
    let (_, file) = report.write(out)?;
    Ok(file)
}
