//! Forward pass and differentiation for the encoder model.
//!
//! Layout: `conv_layers` strided 1-D convolutions (kernel 3, ReLU) reduce
//! the frame count by `conv_stride` each, sinusoidal positions are added,
//! then `num_layers` post-layer-norm self-attention blocks run. The
//! translation head projects the final block's output; the recognition
//! head, when configured, projects the output of block `asr_layer` and
//! never feeds back into the translation path.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::{FeatureSequence, LayerActivations, NnError, ParameterSet};
use crate::ctc::{min_frames, LabelSequence, LogProbLattice};
use crate::rng::{derive_seed, rng_from_seed};

const CONV_KERNEL: usize = 3;
const CONV_PAD: usize = 1;

/// Dropout behaviour for one pass. `Off` also serves as the
/// deterministic-gradient mode used by finite-difference checks.
#[derive(Debug, Clone, Copy)]
pub(crate) enum DropoutMode {
    Off,
    Seeded(u64),
}

pub(crate) struct BuiltForward {
    pub tape: Tape,
    pub st_logits: NodeId,
    pub asr_logits: Option<NodeId>,
    /// Input of block `l+1` at index `l`; last entry is the final output.
    pub act_ids: Vec<NodeId>,
    pub param_ids: Vec<(String, NodeId)>,
}

impl BuiltForward {
    pub fn st_lattice(&self) -> Result<LogProbLattice, NnError> {
        Ok(LogProbLattice::from_logits(self.tape.value(self.st_logits).clone())?)
    }

    pub fn asr_lattice(&self) -> Result<Option<LogProbLattice>, NnError> {
        self.asr_logits
            .map(|id| {
                LogProbLattice::from_logits(self.tape.value(id).clone()).map_err(NnError::from)
            })
            .transpose()
    }

    pub fn activations(&self) -> LayerActivations {
        LayerActivations::new(
            self.act_ids.iter().map(|&id| self.tape.value(id).clone()).collect(),
        )
    }
}

fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let exponent = (2 * (i / 2)) as f64 / dim as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

struct DropoutState {
    rng: Option<ChaCha8Rng>,
    p: f64,
}

impl DropoutState {
    fn new(mode: DropoutMode, p: f64) -> Self {
        let rng = match mode {
            DropoutMode::Seeded(seed) if p > 0.0 => Some(rng_from_seed(seed)),
            _ => None,
        };
        Self { rng, p }
    }

    fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        let dim = tape.value(x).raw_dim();
        let keep_scale = 1.0 / (1.0 - self.p);
        let p = self.p;
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep_scale
            }
        });
        tape.mul_const(x, mask)
    }
}

pub(crate) fn build_forward(
    params: &ParameterSet,
    features: &FeatureSequence,
    dropout: DropoutMode,
) -> Result<BuiltForward, NnError> {
    let cfg = params.config().clone();
    cfg.validate()?;
    if features.feat_dim() != cfg.feat_dim {
        return Err(NnError::DimensionMismatch(format!(
            "features have dim {}, config expects {}",
            features.feat_dim(),
            cfg.feat_dim
        )));
    }
    if features.frames() < cfg.downsample_factor() {
        return Err(NnError::DimensionMismatch(format!(
            "need at least {} frames, got {}",
            cfg.downsample_factor(),
            features.frames()
        )));
    }

    let mut tape = Tape::new();
    let mut param_ids = Vec::new();
    let mut id_of = std::collections::HashMap::new();
    for (name, tensor) in params.iter() {
        let id = tape.leaf(tensor.clone());
        param_ids.push((name.clone(), id));
        id_of.insert(name.clone(), id);
    }
    let p = |name: &str| -> NodeId { id_of[name] };

    let mut drop = DropoutState::new(dropout, cfg.dropout);
    let mut x = tape.leaf(features.values.clone());
    for i in 0..cfg.conv_layers {
        let unfolded = tape.im2col(x, CONV_KERNEL, cfg.conv_stride, CONV_PAD);
        let h = tape.matmul(unfolded, p(&format!("conv.{i}.weight")));
        let h = tape.add_row(h, p(&format!("conv.{i}.bias")));
        x = tape.relu(h);
    }
    check_finite(&tape, x, 0)?;

    let frames = tape.value(x).nrows();
    let pe = tape.leaf(positional_encoding(frames, cfg.attention_dim));
    x = tape.add(x, pe);
    x = drop.apply(&mut tape, x);

    let head_dim = cfg.attention_dim / cfg.num_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut act_ids = vec![x];
    for l in 0..cfg.num_layers {
        let at = |part: &str| p(&format!("layers.{l}.attn.{part}"));
        let q = tape.matmul(x, at("wq"));
        let q = tape.add_row(q, at("bq"));
        let k = tape.matmul(x, at("wk"));
        let k = tape.add_row(k, at("bk"));
        let v = tape.matmul(x, at("wv"));
        let v = tape.add_row(v, at("bv"));
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let start = h * head_dim;
            let qh = tape.slice_cols(q, start, head_dim);
            let kh = tape.slice_cols(k, start, head_dim);
            let vh = tape.slice_cols(v, start, head_dim);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&heads);
        let proj = tape.matmul(merged, at("wo"));
        let proj = tape.add_row(proj, at("bo"));
        let proj = drop.apply(&mut tape, proj);
        let res = tape.add(x, proj);
        let x1 = tape.layer_norm(
            res,
            p(&format!("layers.{l}.ln1.gamma")),
            p(&format!("layers.{l}.ln1.beta")),
        );

        let f = tape.matmul(x1, p(&format!("layers.{l}.ffn.w1")));
        let f = tape.add_row(f, p(&format!("layers.{l}.ffn.b1")));
        let f = tape.relu(f);
        let f = tape.matmul(f, p(&format!("layers.{l}.ffn.w2")));
        let f = tape.add_row(f, p(&format!("layers.{l}.ffn.b2")));
        let f = drop.apply(&mut tape, f);
        let res2 = tape.add(x1, f);
        let x2 = tape.layer_norm(
            res2,
            p(&format!("layers.{l}.ln2.gamma")),
            p(&format!("layers.{l}.ln2.beta")),
        );
        check_finite(&tape, x2, l + 1)?;
        x = x2;
        act_ids.push(x);
    }

    let st = tape.matmul(x, p("st_head.weight"));
    let st_logits = tape.add_row(st, p("st_head.bias"));
    let asr_logits = match cfg.asr_layer {
        Some(m) => {
            // Output of block m, i.e. the representation after its final
            // layer norm.
            let src = act_ids[m];
            let a = tape.matmul(src, p("asr_head.weight"));
            Some(tape.add_row(a, p("asr_head.bias")))
        }
        None => None,
    };

    Ok(BuiltForward { tape, st_logits, asr_logits, act_ids, param_ids })
}

/// Dropout-free tape for saliency extraction elsewhere in the crate.
pub(crate) fn build_forward_for_analysis(
    params: &ParameterSet,
    features: &FeatureSequence,
) -> Result<BuiltForward, NnError> {
    build_forward(params, features, DropoutMode::Off)
}

fn check_finite(tape: &Tape, id: NodeId, layer: usize) -> Result<(), NnError> {
    if tape.value(id).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFiniteActivation { layer })
    }
}

/// Inference-mode outputs of one utterance.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub st_lattice: LogProbLattice,
    pub asr_lattice: Option<LogProbLattice>,
    pub activations: Option<LayerActivations>,
}

/// Run the encoder without dropout.
pub fn forward(
    params: &ParameterSet,
    features: &FeatureSequence,
    retain_activations: bool,
) -> Result<ForwardOutput, NnError> {
    let built = build_forward(params, features, DropoutMode::Off)?;
    Ok(ForwardOutput {
        st_lattice: built.st_lattice()?,
        asr_lattice: built.asr_lattice()?,
        activations: retain_activations.then(|| built.activations()),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    /// Mixing weight: loss = (1 - lambda) * ST + lambda * ASR.
    pub lambda: f64,
    /// Dropout seed for this pass; `None` disables dropout, making the
    /// gradient deterministic.
    pub dropout_seed: Option<u64>,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { lambda: 0.5, dropout_seed: None }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub st: f64,
    pub asr: Option<f64>,
}

/// Combined CTC loss and parameter gradients for one utterance.
pub fn loss_and_grad(
    params: &ParameterSet,
    features: &FeatureSequence,
    st_target: &LabelSequence,
    asr_target: Option<&LabelSequence>,
    opts: LossOptions,
) -> Result<(LossParts, ParameterSet), NnError> {
    let cfg = params.config();
    if cfg.asr_layer.is_some() != asr_target.is_some() {
        return Err(NnError::DimensionMismatch(
            "asr_target must be supplied exactly when the config has an asr_layer".into(),
        ));
    }
    if !(0.0..=1.0).contains(&opts.lambda) {
        return Err(NnError::InvalidConfig(format!("lambda {} outside [0,1]", opts.lambda)));
    }
    let available = cfg.downsampled_len(features.frames());
    for target in std::iter::once(st_target).chain(asr_target) {
        let needed = min_frames(target);
        if needed > available {
            return Err(NnError::InfeasibleTarget { needed, available });
        }
    }

    let mode = match opts.dropout_seed {
        Some(seed) => DropoutMode::Seeded(seed),
        None => DropoutMode::Off,
    };
    let mut built = build_forward(params, features, mode)?;
    let st_loss = built.tape.ctc_loss(built.st_logits, st_target)?;
    let (root, parts) = match (built.asr_logits, asr_target) {
        (Some(asr_logits), Some(asr_target)) => {
            let asr_loss = built.tape.ctc_loss(asr_logits, asr_target)?;
            let root = built
                .tape
                .weighted_sum(&[(st_loss, 1.0 - opts.lambda), (asr_loss, opts.lambda)]);
            let st = built.tape.value(st_loss)[(0, 0)];
            let asr = built.tape.value(asr_loss)[(0, 0)];
            (root, LossParts { total: built.tape.value(root)[(0, 0)], st, asr: Some(asr) })
        }
        _ => {
            let st = built.tape.value(st_loss)[(0, 0)];
            (st_loss, LossParts { total: st, st, asr: None })
        }
    };
    if !parts.total.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }

    built.tape.backward(root);
    let mut grads = params.zeros_like();
    for (name, id) in &built.param_ids {
        *grads.get_mut(name)? = built.tape.grad(*id);
    }
    Ok((parts, grads))
}

/// Gradient of the emitted token's log-probability at `output_frame` with
/// respect to the activation addressed by `layer` (see
/// [`LayerActivations`] for the indexing convention). Returns a
/// frames-by-dim matrix.
pub fn grad_wrt_activations(
    params: &ParameterSet,
    features: &FeatureSequence,
    output_frame: usize,
    layer: usize,
) -> Result<Array2<f64>, NnError> {
    let mut built = build_forward(params, features, DropoutMode::Off)?;
    let frames = built.tape.value(built.st_logits).nrows();
    if output_frame >= frames {
        return Err(NnError::SelectorOutOfRange(format!(
            "output frame {output_frame} >= {frames}"
        )));
    }
    if layer == 0 || layer > built.act_ids.len() {
        return Err(NnError::SelectorOutOfRange(format!(
            "layer {layer} outside 1..={}",
            built.act_ids.len()
        )));
    }
    let lattice = built.st_lattice()?;
    let emitted = lattice.argmax_path().ids()[output_frame];
    let scalar = built.tape.select_log_prob(built.st_logits, output_frame, emitted);
    built.tape.backward(scalar);
    Ok(built.tape.grad(built.act_ids[layer - 1]))
}

/// Re-run the model from a supplied activation: `acts` replaces the input
/// of block `layer` (or the final output when `layer == num_layers + 1`)
/// and the remaining blocks plus the translation head are applied.
///
/// This is the independent route used to cross-check
/// [`grad_wrt_activations`] by finite differences.
pub fn forward_from_layer(
    params: &ParameterSet,
    acts: &Array2<f64>,
    layer: usize,
) -> Result<LogProbLattice, NnError> {
    let cfg = params.config().clone();
    cfg.validate()?;
    if layer == 0 || layer > cfg.num_layers + 1 {
        return Err(NnError::SelectorOutOfRange(format!(
            "layer {layer} outside 1..={}",
            cfg.num_layers + 1
        )));
    }
    if acts.ncols() != cfg.attention_dim {
        return Err(NnError::DimensionMismatch(format!(
            "activation dim {} != attention_dim {}",
            acts.ncols(),
            cfg.attention_dim
        )));
    }

    let mut tape = Tape::new();
    let mut id_of = std::collections::HashMap::new();
    for (name, tensor) in params.iter() {
        id_of.insert(name.clone(), tape.leaf(tensor.clone()));
    }
    let p = |name: &str| -> NodeId { id_of[name] };

    let head_dim = cfg.attention_dim / cfg.num_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut x = tape.leaf(acts.clone());
    for l in (layer - 1)..cfg.num_layers {
        let at = |part: &str| p(&format!("layers.{l}.attn.{part}"));
        let q = tape.matmul(x, at("wq"));
        let q = tape.add_row(q, at("bq"));
        let k = tape.matmul(x, at("wk"));
        let k = tape.add_row(k, at("bk"));
        let v = tape.matmul(x, at("wv"));
        let v = tape.add_row(v, at("bv"));
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let start = h * head_dim;
            let qh = tape.slice_cols(q, start, head_dim);
            let kh = tape.slice_cols(k, start, head_dim);
            let vh = tape.slice_cols(v, start, head_dim);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&heads);
        let proj = tape.matmul(merged, at("wo"));
        let proj = tape.add_row(proj, at("bo"));
        let res = tape.add(x, proj);
        let x1 = tape.layer_norm(
            res,
            p(&format!("layers.{l}.ln1.gamma")),
            p(&format!("layers.{l}.ln1.beta")),
        );
        let f = tape.matmul(x1, p(&format!("layers.{l}.ffn.w1")));
        let f = tape.add_row(f, p(&format!("layers.{l}.ffn.b1")));
        let f = tape.relu(f);
        let f = tape.matmul(f, p(&format!("layers.{l}.ffn.w2")));
        let f = tape.add_row(f, p(&format!("layers.{l}.ffn.b2")));
        let res2 = tape.add(x1, f);
        x = tape.layer_norm(
            res2,
            p(&format!("layers.{l}.ln2.gamma")),
            p(&format!("layers.{l}.ln2.beta")),
        );
    }
    let st = tape.matmul(x, p("st_head.weight"));
    let st_logits = tape.add_row(st, p("st_head.bias"));
    Ok(LogProbLattice::from_logits(tape.value(st_logits).clone())?)
}

/// Replace the translation head with a fresh seeded draw, keeping every
/// other tensor. Models pretrained on the recognition task are adapted
/// this way before translation training.
pub fn reinitialize_st_head(params: &mut ParameterSet, seed: u64) -> Result<(), NnError> {
    let cfg = params.config().clone();
    let mut rng = rng_from_seed(derive_seed(seed, "st_head_reinit"));
    let d = cfg.attention_dim;
    let v = cfg.st_vocab_size;
    let limit = (6.0 / (d + v) as f64).sqrt();
    *params.get_mut("st_head.weight")? =
        Array2::from_shape_fn((d, v), |_| rng.random_range(-limit..limit));
    *params.get_mut("st_head.bias")? = Array2::zeros((1, v));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::greedy_decode;
    use crate::nn::ModelConfig;

    fn features(frames: usize, dim: usize, seed: u64) -> FeatureSequence {
        let mut rng = rng_from_seed(seed);
        FeatureSequence::new(Array2::from_shape_fn((frames, dim), |_| {
            rng.random_range(-1.0..1.0)
        }))
    }

    #[test]
    fn forward_shapes_follow_downsampling() {
        let cfg = ModelConfig::toy(16, 21, Some((3, 11)));
        let params = ParameterSet::init(&cfg).unwrap();
        let out = forward(&params, &features(32, 16, 1), true).unwrap();
        assert_eq!(out.st_lattice.frames(), 8);
        assert_eq!(out.st_lattice.vocab_size(), 21);
        let asr = out.asr_lattice.unwrap();
        assert_eq!(asr.frames(), 8);
        assert_eq!(asr.vocab_size(), 11);
        let acts = out.activations.unwrap();
        assert_eq!(acts.len(), cfg.num_layers + 1);
        for l in 1..=cfg.num_layers + 1 {
            assert_eq!(acts.layer(l).unwrap().dim(), (8, 32));
        }
    }

    #[test]
    fn forward_without_retention_returns_no_activations() {
        let cfg = ModelConfig::toy(16, 21, None);
        let params = ParameterSet::init(&cfg).unwrap();
        let out = forward(&params, &features(16, 16, 2), false).unwrap();
        assert!(out.activations.is_none());
        assert!(out.asr_lattice.is_none());
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let cfg = ModelConfig::toy(16, 21, Some((2, 11)));
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(24, 16, 3);
        let a = forward(&params, &f, false).unwrap();
        let b = forward(&params, &f, false).unwrap();
        assert_eq!(a.st_lattice.values(), b.st_lattice.values());
    }

    #[test]
    fn feature_dim_mismatch_is_rejected() {
        let cfg = ModelConfig::toy(16, 21, None);
        let params = ParameterSet::init(&cfg).unwrap();
        assert!(matches!(
            forward(&params, &features(16, 8, 1), false),
            Err(NnError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn lambda_zero_loss_equals_single_task_loss() {
        let cfg = ModelConfig::toy(16, 21, Some((2, 11)));
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(24, 16, 4);
        let st = LabelSequence::new(vec![3, 5]).unwrap();
        let asr = LabelSequence::new(vec![1, 2]).unwrap();
        let (parts, _) = loss_and_grad(
            &params,
            &f,
            &st,
            Some(&asr),
            LossOptions { lambda: 0.0, dropout_seed: None },
        )
        .unwrap();
        assert_eq!(parts.total, parts.st);
    }

    #[test]
    fn lambda_one_zeroes_st_head_gradients() {
        let cfg = ModelConfig::toy(16, 21, Some((2, 11)));
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(24, 16, 5);
        let st = LabelSequence::new(vec![3, 5]).unwrap();
        let asr = LabelSequence::new(vec![1, 2]).unwrap();
        let (_, grads) = loss_and_grad(
            &params,
            &f,
            &st,
            Some(&asr),
            LossOptions { lambda: 1.0, dropout_seed: None },
        )
        .unwrap();
        assert!(grads.get("st_head.weight").unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.get("st_head.bias").unwrap().iter().all(|&v| v == 0.0));
        // The recognition branch's gradients do flow.
        assert!(grads.get("asr_head.weight").unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn lambda_zero_matches_single_task_gradients_on_shared_parameters() {
        let cfg_mtl = ModelConfig::toy(16, 21, Some((2, 11)));
        let params_mtl = ParameterSet::init(&cfg_mtl).unwrap();
        let cfg_single = ModelConfig::toy(16, 21, None);
        let mut params_single = ParameterSet::init(&cfg_single).unwrap();
        let shared: Vec<String> = params_single.names().cloned().collect();
        for name in &shared {
            *params_single.get_mut(name).unwrap() = params_mtl.get(name).unwrap().clone();
        }
        let f = features(24, 16, 6);
        let st = LabelSequence::new(vec![3, 5, 2]).unwrap();
        let asr = LabelSequence::new(vec![1, 2]).unwrap();
        let (_, g_mtl) = loss_and_grad(
            &params_mtl,
            &f,
            &st,
            Some(&asr),
            LossOptions { lambda: 0.0, dropout_seed: None },
        )
        .unwrap();
        let (_, g_single) = loss_and_grad(
            &params_single,
            &f,
            &st,
            None,
            LossOptions { lambda: 0.0, dropout_seed: None },
        )
        .unwrap();
        for name in &shared {
            let a = g_mtl.get(name).unwrap();
            let b = g_single.get(name).unwrap();
            let diff = (a - b).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{name}: max diff {diff}");
        }
    }

    #[test]
    fn infeasible_target_reports_lengths() {
        let cfg = ModelConfig::toy(16, 21, None);
        let params = ParameterSet::init(&cfg).unwrap();
        // 8 input frames downsample to 2; a 3-token target cannot fit.
        let st = LabelSequence::new(vec![1, 2, 3]).unwrap();
        let err = loss_and_grad(
            &params,
            &features(8, 16, 7),
            &st,
            None,
            LossOptions::default(),
        )
        .unwrap_err();
        match err {
            NnError::InfeasibleTarget { needed, available } => {
                assert_eq!(needed, 3);
                assert_eq!(available, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut cfg = ModelConfig::toy(4, 5, Some((1, 4)));
        cfg.num_layers = 2;
        cfg.attention_dim = 8;
        cfg.num_heads = 2;
        cfg.ffn_dim = 12;
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(10, 4, 8);
        let st = LabelSequence::new(vec![2, 1]).unwrap();
        let asr = LabelSequence::new(vec![3]).unwrap();
        let opts = LossOptions { lambda: 0.4, dropout_seed: None };
        let (_, grads) = loss_and_grad(&params, &f, &st, Some(&asr), opts).unwrap();

        let h = 1e-5;
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let tensor = params.get(&name).unwrap().clone();
            // Spot-check a few entries per tensor to keep the test quick;
            // the acceptance suite sweeps everything.
            let step = (tensor.len() / 3).max(1);
            for idx in (0..tensor.len()).step_by(step) {
                let (r, c) = (idx / tensor.ncols(), idx % tensor.ncols());
                let eval = |delta: f64| {
                    let mut p2 = params.clone();
                    p2.get_mut(&name).unwrap()[(r, c)] += delta;
                    loss_and_grad(&p2, &f, &st, Some(&asr), opts).unwrap().0.total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = grads.get(&name).unwrap()[(r, c)];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((a - fd) / denom).abs() <= 1e-3,
                    "{name}[{r},{c}]: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn activation_gradient_is_local_without_attention_layers() {
        let mut cfg = ModelConfig::toy(16, 5, None);
        cfg.num_layers = 0;
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(16, 16, 9);
        // Only addressable site: the subsampler output feeding the head.
        let g = grad_wrt_activations(&params, &f, 2, 1).unwrap();
        assert_eq!(g.dim(), (4, 32));
        for (row, r) in g.rows().into_iter().enumerate() {
            let norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if row == 2 {
                assert!(norm > 0.0);
            } else {
                assert!(norm == 0.0, "row {row} has non-local gradient {norm}");
            }
        }
    }

    #[test]
    fn activation_gradient_matches_finite_differences() {
        let mut cfg = ModelConfig::toy(4, 5, None);
        cfg.num_layers = 2;
        cfg.attention_dim = 4;
        cfg.num_heads = 1;
        cfg.ffn_dim = 6;
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(8, 4, 10);
        let layer = 2usize;
        let frame = 1usize;
        let g = grad_wrt_activations(&params, &f, frame, layer).unwrap();

        let acts = forward(&params, &f, true).unwrap().activations.unwrap();
        let base = acts.layer(layer).unwrap().clone();
        let emitted = {
            let out = forward(&params, &f, false).unwrap();
            out.st_lattice.argmax_path().ids()[frame]
        };
        let h = 1e-5;
        for r in 0..base.nrows() {
            for c in 0..base.ncols() {
                let eval = |delta: f64| {
                    let mut a = base.clone();
                    a[(r, c)] += delta;
                    let lat = forward_from_layer(&params, &a, layer).unwrap();
                    lat.values()[(frame, emitted)]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let denom = g[(r, c)].abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((g[(r, c)] - fd) / denom).abs() <= 1e-3,
                    "({r},{c}): analytic {} vs fd {fd}",
                    g[(r, c)]
                );
            }
        }
    }

    #[test]
    fn selector_out_of_range_errors() {
        let cfg = ModelConfig::toy(16, 5, None);
        let params = ParameterSet::init(&cfg).unwrap();
        let f = features(16, 16, 11);
        assert!(matches!(
            grad_wrt_activations(&params, &f, 99, 1),
            Err(NnError::SelectorOutOfRange(_))
        ));
        assert!(matches!(
            grad_wrt_activations(&params, &f, 0, 99),
            Err(NnError::SelectorOutOfRange(_))
        ));
    }

    #[test]
    fn non_finite_weights_report_layer() {
        let cfg = ModelConfig::toy(16, 5, None);
        let mut params = ParameterSet::init(&cfg).unwrap();
        params.get_mut("layers.1.ffn.w1").unwrap()[(0, 0)] = f64::NAN;
        let err = forward(&params, &features(16, 16, 12), false).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteActivation { layer: 2 }));
    }

    #[test]
    fn greedy_decode_runs_on_model_output() {
        let cfg = ModelConfig::toy(16, 6, None);
        let params = ParameterSet::init(&cfg).unwrap();
        let out = forward(&params, &features(20, 16, 13), false).unwrap();
        let (seq, path) = greedy_decode(&out.st_lattice);
        assert_eq!(path.len(), out.st_lattice.frames());
        assert!(seq.ids().iter().all(|&id| id != 0 && id < 6));
    }

    #[test]
    fn st_head_reinitialization_touches_only_the_head() {
        let cfg = ModelConfig::toy(16, 6, Some((2, 4)));
        let params = ParameterSet::init(&cfg).unwrap();
        let mut reinit = params.clone();
        reinitialize_st_head(&mut reinit, 99).unwrap();
        assert_ne!(
            params.get("st_head.weight").unwrap(),
            reinit.get("st_head.weight").unwrap()
        );
        assert_eq!(
            params.get("layers.0.attn.wq").unwrap(),
            reinit.get("layers.0.attn.wq").unwrap()
        );
        assert_eq!(
            params.get("asr_head.weight").unwrap(),
            reinit.get("asr_head.weight").unwrap()
        );
    }
}
