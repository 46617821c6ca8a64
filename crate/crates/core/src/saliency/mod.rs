//! Gradient-norm saliency.
//!
//! For every output frame the emitted token's log-probability is
//! differentiated against each layer's input representations; the L2 norm
//! over the hidden dimension gives one column of that layer's saliency
//! matrix. Columns are L1-normalized so entry (t, i) reads as the
//! relative influence of frame t on output i. Stacking one averaged
//! column per layer for a decoded token yields its reordering matrix.

mod export;

pub use export::{export_heatmap, heatmap_svg, write_matrix_csv};

use ndarray::Array2;
use thiserror::Error;

use crate::ctc::{greedy_decode, AlignmentPath, LabelSequence, BLANK_ID};
use crate::nn::tape::NodeId;
use crate::nn::{FeatureSequence, NnError, ParameterSet};

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("layer {layer} out of range 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("token occurrence {occurrence} not found (decoded {decoded} tokens)")]
    OccurrenceNotFound { occurrence: usize, decoded: usize },
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column-normalized influence of every frame on every output position
/// for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMatrix {
    pub layer: usize,
    /// rows = frame positions at the layer, columns = output positions
    pub values: Array2<f64>,
}

/// Per-layer influence columns for a single decoded token occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderingMatrix {
    pub occurrence: usize,
    pub token_id: usize,
    /// rows = frames, columns = layers 1..=L
    pub values: Array2<f64>,
}

/// Which greedy-path frames emitted each decoded token occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFrameMap {
    entries: Vec<(usize, Vec<usize>)>,
}

impl TokenFrameMap {
    /// Derive the map from a greedy path: each maximal run of one
    /// non-blank id is one occurrence, emitted by the run's frames.
    pub fn from_path(path: &AlignmentPath) -> Self {
        let mut entries: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut prev: Option<usize> = None;
        for (frame, &id) in path.ids().iter().enumerate() {
            if id != BLANK_ID && Some(id) != prev {
                entries.push((id, vec![frame]));
            } else if id != BLANK_ID {
                entries.last_mut().expect("run already opened").1.push(frame);
            }
            prev = Some(id);
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Token id and emitting frames of one occurrence.
    pub fn get(&self, occurrence: usize) -> Option<(usize, &[usize])> {
        self.entries.get(occurrence).map(|(id, frames)| (*id, frames.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.entries.iter().map(|(id, frames)| (*id, frames.as_slice()))
    }
}

/// One forward pass worth of saliency: all layers' matrices plus the
/// greedy decode they describe.
#[derive(Debug, Clone)]
pub struct SaliencyStack {
    pub layers: Vec<SaliencyMatrix>,
    pub decoded: LabelSequence,
    pub path: AlignmentPath,
    pub token_map: TokenFrameMap,
}

/// Compute every layer's saliency matrix in one pass: one backward sweep
/// per output frame fills column `i` of all layers at once.
pub fn saliency_stack(
    params: &ParameterSet,
    features: &FeatureSequence,
) -> Result<SaliencyStack, SaliencyError> {
    let mut built = crate::nn::build_forward_for_analysis(params, features)?;
    let num_layers = params.config().num_layers;
    let lattice = built.st_lattice()?;
    let (decoded, path) = greedy_decode(&lattice);
    let frames = lattice.frames();

    // Raw gradient norms; columns are normalized afterwards.
    let mut raw: Vec<Array2<f64>> =
        (0..num_layers).map(|_| Array2::zeros((frames, frames))).collect();
    let act_ids: Vec<NodeId> = built.act_ids[..num_layers].to_vec();
    for (i, &emitted) in path.ids().iter().enumerate() {
        let scalar = built.tape.select_log_prob(built.st_logits, i, emitted);
        built.tape.zero_grads();
        built.tape.backward(scalar);
        for (l, &act) in act_ids.iter().enumerate() {
            let grad = built.tape.grad(act);
            for t in 0..frames {
                let norm: f64 = grad.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
                raw[l][(t, i)] = norm;
            }
        }
    }

    let layers = raw
        .into_iter()
        .enumerate()
        .map(|(l, mut values)| {
            normalize_columns(&mut values);
            SaliencyMatrix { layer: l + 1, values }
        })
        .collect::<Vec<_>>();
    for m in &layers {
        if m.values.iter().any(|v| !v.is_finite()) {
            return Err(SaliencyError::NonFinite);
        }
    }
    let token_map = TokenFrameMap::from_path(&path);
    Ok(SaliencyStack { layers, decoded, path, token_map })
}

/// L1-normalize each column; all-zero columns stay zero.
fn normalize_columns(values: &mut Array2<f64>) {
    for mut col in values.columns_mut() {
        let sum: f64 = col.iter().sum();
        if sum > 0.0 {
            col.mapv_inplace(|v| v / sum);
        }
    }
}

/// The saliency matrix of one layer (1-based).
pub fn saliency_layer(
    params: &ParameterSet,
    features: &FeatureSequence,
    layer: usize,
) -> Result<SaliencyMatrix, SaliencyError> {
    let layers = params.config().num_layers;
    if layer == 0 || layer > layers {
        return Err(SaliencyError::LayerOutOfRange { layer, layers });
    }
    let stack = saliency_stack(params, features)?;
    Ok(stack.layers[layer - 1].clone())
}

/// The reordering matrix of one decoded token occurrence: column `l` is
/// the mean of layer `l`'s saliency columns over the frames that emitted
/// the token.
pub fn reordering_matrix(
    params: &ParameterSet,
    features: &FeatureSequence,
    occurrence: usize,
) -> Result<ReorderingMatrix, SaliencyError> {
    let stack = saliency_stack(params, features)?;
    reordering_matrix_from_stack(&stack, occurrence)
}

/// Extract one token's reordering matrix from a precomputed stack.
pub fn reordering_matrix_from_stack(
    stack: &SaliencyStack,
    occurrence: usize,
) -> Result<ReorderingMatrix, SaliencyError> {
    let (token_id, frames) = stack
        .token_map
        .get(occurrence)
        .ok_or(SaliencyError::OccurrenceNotFound {
            occurrence,
            decoded: stack.token_map.len(),
        })?;
    let rows = stack.layers.first().map_or(0, |m| m.values.nrows());
    let mut values = Array2::zeros((rows, stack.layers.len()));
    for (l, matrix) in stack.layers.iter().enumerate() {
        for t in 0..rows {
            let mean: f64 =
                frames.iter().map(|&f| matrix.values[(t, f)]).sum::<f64>() / frames.len() as f64;
            values[(t, l)] = mean;
        }
    }
    Ok(ReorderingMatrix { occurrence, token_id, values })
}
