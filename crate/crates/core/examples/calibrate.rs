//! Scratch calibration: substitute-task convergence and step timing.
use ctcst_core::corpus::{self, TaskKind, TaskSpec};
use ctcst_core::decode::{decode_manifest, exact_match_rate};
use ctcst_core::nn::{ModelConfig, ParameterSet};
use ctcst_core::train::{average_checkpoints, prepare_items, TrainConfig, Trainer};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr_scale: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2.5);
    let warmup: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(400);
    let n_train: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);

    let dropout: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let mut spec = TaskSpec::new(TaskKind::Substitute, 20, 20, 1234);
    if let Some(ns) = args.get(8) { spec.noise_std = ns.parse().unwrap(); }
    let train_m = corpus::generate(&spec, n_train, "train").unwrap();
    let eval_m = corpus::generate(&spec, 200, "eval").unwrap();
    let mtl: bool = args.get(10).map(|s| s == "mtl").unwrap_or(false);
    let asr = mtl.then_some((3usize, train_m.src_vocab.size()));
    let mut cfg = ModelConfig::toy(spec.feat_dim, train_m.tgt_vocab.size(), asr);
    cfg.dropout = dropout;
    cfg.seed = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(7);
    let mut params = ParameterSet::init(&cfg).unwrap();
    let blank_bias: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    params.get_mut("st_head.bias").unwrap()[(0, 0)] = blank_bias;
    let (items, rejected) = prepare_items(&train_m, &params).unwrap();
    eprintln!("items {} rejected {}", items.len(), rejected.len());

    let tseed: u64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(7);
    let mut tcfg = TrainConfig::new(0, tseed);
    tcfg.batch_size = batch;
    tcfg.grad_accum = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1);
    tcfg.lr_scale = lr_scale;
    tcfg.warmup_steps = warmup;
    let mut trainer = Trainer::new(params, items, tcfg, None).unwrap();

    let t0 = Instant::now();
    let mut snapshots: std::collections::VecDeque<ctcst_core::nn::ParameterSet> =
        std::collections::VecDeque::new();
    for chunk in 0..40 {
        trainer.run_steps(125).unwrap();
        let steps = (chunk + 1) * 125;
        snapshots.push_back(trainer.params().clone());
        if snapshots.len() > 10 {
            snapshots.pop_front();
        }
        let avg = average_checkpoints(snapshots.make_contiguous()).unwrap();
        let decoded = decode_manifest(trainer.params(), &eval_m).unwrap();
        let em = exact_match_rate(&decoded, &eval_m);
        let decoded_avg = decode_manifest(&avg, &eval_m).unwrap();
        let em_avg = exact_match_rate(&decoded_avg, &eval_m);
        let last = trainer.log().records.last().unwrap();
        eprintln!(
            "step {steps:5}  loss {:8.4}  em {em:.3}  em_avg {em_avg:.3}  lr {:.5}  elapsed {:.1}s",
            last.loss, last.lr, t0.elapsed().as_secs_f64()
        );
        let em = em.max(em_avg);
        if em >= 0.95 {
            eprintln!("converged at {steps} steps, {:.1}s", t0.elapsed().as_secs_f64());
            return;
        }
        if steps == 5000 {
            for (d, u) in decoded.iter().zip(&eval_m.utterances) {
                if d.tokens != u.translation {
                    eprintln!("FAIL {}: ref={:?} hyp={:?}", u.id, u.translation, d.tokens);
                }
            }
        }
    }
    eprintln!("did not reach 0.95");
}
