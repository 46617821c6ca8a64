//! Training loop: Adam under the noam schedule with global-norm clipping,
//! gradient accumulation, seeded shuffling, checkpointing and checkpoint
//! averaging.

mod log;

pub use log::{StepRecord, TrainingLog};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusManifest;
use crate::ctc::{min_frames, LabelSequence};
use crate::nn::{
    loss_and_grad, save_checkpoint, FeatureSequence, LossOptions, NnError, ParameterSet,
};
use crate::rng::{derive_seed, derive_seed_u64, rng_from_seed};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("no trainable utterances (all {rejected} rejected as infeasible)")]
    EmptyCorpus { rejected: usize },
    #[error("non-finite loss at step {step}; batch ids: {ids:?}")]
    NonFiniteLoss { step: usize, ids: Vec<String> },
    #[error("checkpoint configs differ; cannot average")]
    ConfigMismatch,
    #[error("nothing to average")]
    NoCheckpoints,
    #[error("utterance {id}: {source}")]
    Utterance { id: String, source: NnError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ctc(#[from] crate::ctc::CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_grad_accum")]
    pub grad_accum: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub seed: u64,
    /// Persist a checkpoint every this many steps; 0 disables scheduled
    /// checkpoints (the final state is always kept).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_average_last_k")]
    pub average_last_k: usize,
}

fn default_lr_scale() -> f64 {
    2.5
}

fn default_warmup() -> usize {
    400
}

fn default_grad_clip() -> f64 {
    5.0
}

fn default_grad_accum() -> usize {
    2
}

fn default_lambda() -> f64 {
    0.5
}

fn default_average_last_k() -> usize {
    10
}

impl TrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size: 8,
            lr_scale: default_lr_scale(),
            warmup_steps: default_warmup(),
            grad_clip: default_grad_clip(),
            grad_accum: default_grad_accum(),
            lambda: default_lambda(),
            seed,
            checkpoint_every: 0,
            average_last_k: default_average_last_k(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.grad_accum == 0 || self.warmup_steps == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size, grad_accum and warmup_steps must be positive".into(),
            ));
        }
        if self.lr_scale <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "lr_scale {} must be positive",
                self.lr_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::InvalidConfig(format!(
                "lambda {} outside [0,1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// The noam schedule: `scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn noam_lr(step: usize, d: usize, warmup: usize, scale: f64) -> f64 {
    let step = step as f64;
    let warmup = warmup as f64;
    scale * (d as f64).powf(-0.5) * (step.powf(-0.5)).min(step * warmup.powf(-1.5))
}

/// One feasible training example with encoded targets.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub features: FeatureSequence,
    pub st_target: LabelSequence,
    pub asr_target: Option<LabelSequence>,
}

/// Encode a manifest against a model config, rejecting utterances whose
/// targets cannot fit the downsampled frame count. Rejected ids are
/// returned for logging.
pub fn prepare_items(
    manifest: &CorpusManifest,
    params: &ParameterSet,
) -> Result<(Vec<TrainItem>, Vec<String>), TrainError> {
    let cfg = params.config();
    let multitask = cfg.asr_layer.is_some();
    let mut items = Vec::with_capacity(manifest.utterances.len());
    let mut rejected = Vec::new();
    for utt in &manifest.utterances {
        let st_target = manifest.tgt_vocab.encode(&utt.translation)?;
        let asr_target =
            multitask.then(|| manifest.src_vocab.encode(&utt.transcription)).transpose()?;
        let available = cfg.downsampled_len(utt.features.frames());
        let mut needed = min_frames(&st_target);
        if let Some(asr) = &asr_target {
            needed = needed.max(min_frames(asr));
        }
        if needed > available {
            rejected.push(utt.id.clone());
            continue;
        }
        items.push(TrainItem {
            id: utt.id.clone(),
            features: utt.features.clone(),
            st_target,
            asr_target,
        });
    }
    if items.is_empty() {
        return Err(TrainError::EmptyCorpus { rejected: rejected.len() });
    }
    Ok((items, rejected))
}

/// Scale gradients so the global norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Arithmetic mean of checkpoints with identical configs.
pub fn average_checkpoints(checkpoints: &[ParameterSet]) -> Result<ParameterSet, TrainError> {
    let first = checkpoints.first().ok_or(TrainError::NoCheckpoints)?;
    if checkpoints.iter().any(|c| c.config() != first.config()) {
        return Err(TrainError::ConfigMismatch);
    }
    let mut mean = first.zeros_like();
    let w = 1.0 / checkpoints.len() as f64;
    for ckpt in checkpoints {
        mean.scaled_add(w, ckpt);
    }
    Ok(mean)
}

/// Stateful optimizer: owns the parameters, Adam moments and shuffling
/// state, and can be advanced in chunks for periodic evaluation.
pub struct Trainer {
    params: ParameterSet,
    items: Vec<TrainItem>,
    cfg: TrainConfig,
    adam_m: ParameterSet,
    adam_v: ParameterSet,
    step: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    log: TrainingLog,
    checkpoints: Vec<(usize, ParameterSet)>,
    ckpt_dir: Option<PathBuf>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-9;

impl Trainer {
    pub fn new(
        params: ParameterSet,
        items: Vec<TrainItem>,
        cfg: TrainConfig,
        ckpt_dir: Option<&Path>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if items.is_empty() {
            return Err(TrainError::EmptyCorpus { rejected: 0 });
        }
        if let Some(dir) = ckpt_dir {
            std::fs::create_dir_all(dir)?;
        }
        let adam_m = params.zeros_like();
        let adam_v = params.zeros_like();
        Ok(Self {
            params,
            items,
            cfg,
            adam_m,
            adam_v,
            step: 0,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            log: TrainingLog::default(),
            checkpoints: Vec::new(),
            ckpt_dir: ckpt_dir.map(Path::to_path_buf),
        })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn checkpoints(&self) -> impl Iterator<Item = &ParameterSet> {
        self.checkpoints.iter().map(|(_, p)| p)
    }

    /// Final state plus accumulated log and in-memory checkpoints.
    pub fn finish(self) -> (ParameterSet, TrainingLog, Vec<ParameterSet>) {
        (self.params, self.log, self.checkpoints.into_iter().map(|(_, p)| p).collect())
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor >= self.order.len() {
                let mut rng = rng_from_seed(derive_seed_u64(
                    derive_seed(self.cfg.seed, "order"),
                    self.epoch,
                ));
                self.order = (0..self.items.len()).collect();
                self.order.shuffle(&mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// Advance `n` optimizer steps.
    pub fn run_steps(&mut self, n: usize) -> Result<(), TrainError> {
        let d_model = self.params.config().attention_dim;
        let multitask = self.params.config().asr_layer.is_some();
        for _ in 0..n {
            let started = Instant::now();
            let step = self.step + 1;

            let mut grad_sum = self.params.zeros_like();
            let mut loss_sum = 0.0;
            let mut st_sum = 0.0;
            let mut asr_sum = 0.0;
            let mut count = 0usize;
            let mut batch_ids = Vec::new();
            for _ in 0..self.cfg.grad_accum {
                let batch = self.next_batch(self.cfg.batch_size);
                batch_ids.extend(batch.iter().map(|&i| self.items[i].id.clone()));
                let dropout_base =
                    derive_seed_u64(derive_seed(self.cfg.seed, "dropout"), step as u64);
                let results: Vec<Result<_, TrainError>> = batch
                    .par_iter()
                    .map(|&i| {
                        let item = &self.items[i];
                        let opts = LossOptions {
                            lambda: self.cfg.lambda,
                            dropout_seed: (self.params.config().dropout > 0.0)
                                .then(|| derive_seed(dropout_base, &item.id)),
                        };
                        loss_and_grad(
                            &self.params,
                            &item.features,
                            &item.st_target,
                            item.asr_target.as_ref(),
                            opts,
                        )
                        .map_err(|source| TrainError::Utterance { id: item.id.clone(), source })
                    })
                    .collect();
                for result in results {
                    let (parts, grads) = result?;
                    grad_sum.scaled_add(1.0, &grads);
                    loss_sum += parts.total;
                    st_sum += parts.st;
                    asr_sum += parts.asr.unwrap_or(0.0);
                    count += 1;
                }
            }

            let inv = 1.0 / count as f64;
            grad_sum.scale(inv);
            let loss = loss_sum * inv;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, ids: batch_ids });
            }
            let grad_norm = clip_global_norm(&mut grad_sum, self.cfg.grad_clip);

            let lr = noam_lr(step, d_model, self.cfg.warmup_steps, self.cfg.lr_scale);
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for (name, g) in grad_sum.iter() {
                let m = self.adam_m.get_mut(name)?;
                m.zip_mut_with(g, |m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
                let v = self.adam_v.get_mut(name)?;
                v.zip_mut_with(g, |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
                let theta = self.params.get_mut(name)?;
                ndarray::Zip::from(theta).and(&*m).and(&*v).for_each(|t, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *t -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                });
            }

            self.step = step;
            self.log.records.push(StepRecord {
                step,
                lr,
                loss,
                st_loss: st_sum * inv,
                asr_loss: multitask.then_some(asr_sum * inv),
                grad_norm,
                wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
            });

            if self.cfg.checkpoint_every > 0 && step % self.cfg.checkpoint_every == 0 {
                self.persist_checkpoint(step)?;
            }
        }
        Ok(())
    }

    fn persist_checkpoint(&mut self, step: usize) -> Result<(), TrainError> {
        self.checkpoints.push((step, self.params.clone()));
        if let Some(dir) = &self.ckpt_dir {
            let name = format!("ckpt_{step}.bin");
            save_checkpoint(&self.params, &dir.join(&name))?;
            std::fs::write(dir.join("latest"), &name)?;
        }
        Ok(())
    }
}

/// Run the full configured schedule. Returns the final parameters, the
/// step log, and the scheduled checkpoints (final state appended when no
/// schedule is set).
pub fn train(
    params: ParameterSet,
    items: Vec<TrainItem>,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(ParameterSet, TrainingLog, Vec<ParameterSet>), TrainError> {
    let steps = cfg.steps;
    let mut trainer = Trainer::new(params, items, cfg.clone(), ckpt_dir)?;
    trainer.run_steps(steps)?;
    let (params, log, mut checkpoints) = trainer.finish();
    if checkpoints.is_empty() {
        checkpoints.push(params.clone());
    }
    Ok((params, log, checkpoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, TaskKind, TaskSpec};
    use crate::nn::ModelConfig;

    fn toy_setup(multitask: bool) -> (ParameterSet, Vec<TrainItem>) {
        let spec = TaskSpec::new(TaskKind::Substitute, 6, 6, 3);
        let manifest = generate(&spec, 16, "train").unwrap();
        let asr = multitask.then_some((2usize, manifest.src_vocab.size()));
        let mut cfg = ModelConfig::toy(spec.feat_dim, manifest.tgt_vocab.size(), asr);
        cfg.num_layers = 2;
        cfg.attention_dim = 16;
        cfg.ffn_dim = 24;
        let params = ParameterSet::init(&cfg).unwrap();
        let (items, rejected) = prepare_items(&manifest, &params).unwrap();
        assert!(rejected.is_empty());
        (params, items)
    }

    #[test]
    fn noam_value_at_step_one() {
        let lr = noam_lr(1, 32, 400, 2.5);
        assert!((lr - 5.524271728019903e-5).abs() < 1e-12, "lr = {lr:e}");
    }

    #[test]
    fn noam_is_continuous_at_warmup() {
        let at = noam_lr(400, 32, 400, 2.5);
        let both = 2.5 * (32f64).powf(-0.5) * (400f64).powf(-0.5);
        assert!((at - both).abs() < 1e-15);
    }

    #[test]
    fn noam_rises_then_decays() {
        let before: Vec<f64> = (1..400).map(|s| noam_lr(s, 32, 400, 2.5)).collect();
        assert!(before.windows(2).all(|w| w[1] > w[0]));
        let after: Vec<f64> = (400..800).map(|s| noam_lr(s, 32, 400, 2.5)).collect();
        assert!(after.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_steps_returns_params_unchanged() {
        let (params, items) = toy_setup(false);
        let mut cfg = TrainConfig::new(0, 1);
        cfg.batch_size = 4;
        let (out, log, _) = train(params.clone(), items, &cfg, None).unwrap();
        assert_eq!(out, params);
        assert!(log.records.is_empty());
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (params, items) = toy_setup(true);
        let mut cfg = TrainConfig::new(4, 7);
        cfg.batch_size = 4;
        cfg.grad_accum = 1;
        let (p1, log1, _) = train(params.clone(), items.clone(), &cfg, None).unwrap();
        let (p2, log2, _) = train(params, items, &cfg, None).unwrap();
        assert!(log1.same_modulo_wall_clock(&log2));
        assert_eq!(p1, p2);
    }

    #[test]
    fn accumulation_matches_one_big_batch() {
        let (params, items) = toy_setup(false);
        let mut small = TrainConfig::new(1, 5);
        small.batch_size = 4;
        small.grad_accum = 2;
        let mut big = TrainConfig::new(1, 5);
        big.batch_size = 8;
        big.grad_accum = 1;
        let (p_small, log_small, _) =
            train(params.clone(), items.clone(), &small, None).unwrap();
        let (p_big, log_big, _) = train(params, items, &big, None).unwrap();
        assert_eq!(log_small.records[0].loss, log_big.records[0].loss);
        for (name, a) in p_small.iter() {
            let b = p_big.get(name).unwrap();
            let denom = a.iter().map(|v| v.abs()).fold(1e-30, f64::max);
            let diff = (a - b).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(diff / denom <= 1e-10, "{name}: rel diff {}", diff / denom);
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let (params, items) = toy_setup(false);
        let item = items[0].clone();
        let (_, mut grads) = loss_and_grad(
            &params,
            &item.features,
            &item.st_target,
            None,
            LossOptions { lambda: 0.5, dropout_seed: None },
        )
        .unwrap();
        let pre = clip_global_norm(&mut grads, 0.5);
        assert!(pre > 0.5, "toy gradient should exceed the tiny cap");
        assert!(grads.global_norm() <= 0.5 + 1e-9);
    }

    #[test]
    fn loss_decreases_on_tiny_task() {
        let (params, items) = toy_setup(false);
        let mut cfg = TrainConfig::new(30, 2);
        cfg.batch_size = 8;
        cfg.grad_accum = 1;
        cfg.warmup_steps = 20;
        let (_, log, _) = train(params, items, &cfg, None).unwrap();
        let first = log.records.first().unwrap().loss;
        let last = log.records.last().unwrap().loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn scheduled_checkpoints_are_persisted_with_latest_pointer() {
        let (params, items) = toy_setup(false);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::new(4, 2);
        cfg.batch_size = 2;
        cfg.grad_accum = 1;
        cfg.checkpoint_every = 2;
        let (_, _, ckpts) = train(params, items, &cfg, Some(dir.path())).unwrap();
        assert_eq!(ckpts.len(), 2);
        assert!(dir.path().join("ckpt_2.bin").exists());
        assert!(dir.path().join("ckpt_4.bin").exists());
        let latest = std::fs::read_to_string(dir.path().join("latest")).unwrap();
        assert_eq!(latest, "ckpt_4.bin");
        let loaded = crate::nn::load_checkpoint(&dir.path().join("ckpt_4.bin")).unwrap();
        assert_eq!(loaded.config(), ckpts[1].config());
    }

    #[test]
    fn averaging_identities() {
        let (params, _) = toy_setup(false);
        let avg = average_checkpoints(&[params.clone()]).unwrap();
        assert_eq!(avg, params);
        let avg3 =
            average_checkpoints(&[params.clone(), params.clone(), params.clone()]).unwrap();
        for (name, t) in avg3.iter() {
            let orig = params.get(name).unwrap();
            let diff = (t - orig).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn averaging_two_checkpoints_is_the_midpoint() {
        let (params, _) = toy_setup(false);
        let mut zero = params.clone();
        for (_, t) in zero.iter_mut() {
            t.fill(0.0);
        }
        let mut two = params.clone();
        for (_, t) in two.iter_mut() {
            t.fill(2.0);
        }
        let avg = average_checkpoints(&[zero, two]).unwrap();
        assert!(avg.iter().all(|(_, t)| t.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn averaging_rejects_mismatched_configs() {
        let (a, _) = toy_setup(false);
        let (b, _) = toy_setup(true);
        assert!(matches!(average_checkpoints(&[a, b]), Err(TrainError::ConfigMismatch)));
    }

    #[test]
    fn infeasible_utterances_are_rejected_at_load() {
        let mut spec = TaskSpec::new(TaskKind::Substitute, 6, 6, 3);
        spec.min_len = 6;
        spec.max_len = 10;
        let manifest = generate(&spec, 40, "train").unwrap();
        // Three stride-2 convs leave one downsampled frame per symbol, so
        // targets with adjacent repeats need more frames than exist.
        let mut cfg = ModelConfig::toy(spec.feat_dim, manifest.tgt_vocab.size(), None);
        cfg.conv_layers = 3;
        let params = ParameterSet::init(&cfg).unwrap();
        let (items, rejected) = prepare_items(&manifest, &params).unwrap();
        assert!(!rejected.is_empty(), "expected repeat-bearing utterances to be rejected");
        assert_eq!(items.len() + rejected.len(), 40);
        let has_repeat =
            |u: &crate::corpus::Utterance| u.translation.windows(2).any(|w| w[0] == w[1]);
        for utt in &manifest.utterances {
            assert_eq!(rejected.contains(&utt.id), has_repeat(utt), "utterance {}", utt.id);
        }
    }
}
