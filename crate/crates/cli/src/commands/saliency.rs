//! `saliency`: export a layer's saliency matrix and one token's
//! reordering matrix for an eval utterance as CSV/SVG heatmaps.
//!
//! `--token` selects the occurrence: either a plain index into the first
//! eval utterance's decoded tokens, or `<utterance-id>:<index>`.

use std::path::Path;

use ctcst_core::ctc::greedy_decode;
use ctcst_core::nn::forward;
use ctcst_core::saliency::{
    export_heatmap, reordering_matrix_from_stack, saliency_stack, TokenFrameMap,
};

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::report::{ReportBuilder, ReportFile};

use super::{check_run_meta, load_model, load_split};

pub fn run(
    loaded: &LoadedConfig,
    out: &Path,
    layer: usize,
    token: &str,
) -> Result<ReportFile, CliError> {
    let meta = check_run_meta(out, loaded)?;
    let mut report = ReportBuilder::new("saliency", &loaded.hash, meta.seed);
    let manifest = load_split(out, "eval")?;
    let params = load_model(out)?;

    let (utt_id, occurrence) = match token.split_once(':') {
        Some((id, idx)) => (
            id.to_string(),
            idx.parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad --token occurrence {idx:?}")))?,
        ),
        None => (
            manifest
                .utterances
                .first()
                .ok_or_else(|| CliError::Data("eval split is empty".into()))?
                .id
                .clone(),
            token
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad --token value {token:?}")))?,
        ),
    };
    let utt = manifest
        .utterances
        .iter()
        .find(|u| u.id == utt_id)
        .ok_or_else(|| CliError::Data(format!("utterance {utt_id:?} not in eval split")))?;

    let num_layers = params.config().num_layers;
    if layer == 0 || layer > num_layers {
        return Err(CliError::Config(format!("--layer {layer} outside 1..={num_layers}")));
    }

    let stack = saliency_stack(&params, &utt.features)?;
    let matrix = &stack.layers[layer - 1];
    let reorder = reordering_matrix_from_stack(&stack, occurrence)?;

    // Recognition tokens annotate the frame axis when the model has the
    // auxiliary head.
    let annotations: Vec<(usize, String)> = match forward(&params, &utt.features, false)?
        .asr_lattice
    {
        Some(lattice) => {
            let (_, path) = greedy_decode(&lattice);
            TokenFrameMap::from_path(&path)
                .iter()
                .map(|(id, frames)| {
                    let token = manifest
                        .src_vocab
                        .token(id)
                        .unwrap_or("?")
                        .to_string();
                    (frames[0], token)
                })
                .collect()
        }
        None => Vec::new(),
    };

    let dir = out.join("saliency");
    let token_str = manifest.tgt_vocab.token(reorder.token_id).unwrap_or("?").to_string();
    let (sal_csv, sal_svg) = export_heatmap(
        &matrix.values,
        &dir.join(format!("{utt_id}_layer{layer}")),
        "out",
        &format!("saliency layer {layer} ({utt_id})"),
        &annotations,
    )?;
    let (re_csv, re_svg) = export_heatmap(
        &reorder.values,
        &dir.join(format!("{utt_id}_token{occurrence}")),
        "layer",
        &format!("reordering matrix for {token_str:?} ({utt_id})"),
        &annotations,
    )?;

    let decoded_tokens = manifest.tgt_vocab.decode(&stack.decoded)?;
    report
        .metric("utterance", utt_id.as_str())
        .metric("layer", layer)
        .metric("occurrence", occurrence)
        .metric("token", token_str)
        .metric("decoded_tokens", decoded_tokens)
        .artifact("saliency_csv", &sal_csv)
        .artifact("saliency_svg", &sal_svg)
        .artifact("reordering_csv", &re_csv)
        .artifact("reordering_svg", &re_svg);
    let (_, file) = report.write(out)?;
    Ok(file)
}
