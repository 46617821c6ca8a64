//! Scratch calibration: local_swap reordering criteria.
use ctcst_core::corpus::{self, CorpusManifest, TaskKind, TaskSpec};
use ctcst_core::decode::decode_manifest;
use ctcst_core::metrics::{corpus_bleu, random_permutation_baseline, EvalTriplet};
use ctcst_core::nn::{ModelConfig, ParameterSet};
use ctcst_core::train::{average_checkpoints, prepare_items, TrainConfig, Trainer};
use std::time::Instant;

fn eval_model(params: &ParameterSet, eval_m: &CorpusManifest) -> (f64, f64) {
    let decoded = decode_manifest(params, eval_m).unwrap();
    let hyps: Vec<Vec<String>> = decoded.iter().map(|d| d.tokens.clone()).collect();
    let refs: Vec<Vec<String>> = eval_m.utterances.iter().map(|u| u.translation.clone()).collect();
    let bleu = corpus_bleu(&hyps, &refs).unwrap();
    let triplets: Vec<EvalTriplet> = eval_m
        .utterances
        .iter()
        .zip(&decoded)
        .map(|(u, d)| eval_m.triplet(u, &d.tokens).unwrap())
        .collect();
    let racc = triplets.iter().map(|t| t.reorder_correctness()).sum::<f64>() / triplets.len() as f64;
    (bleu, racc)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1500);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(11);
    let n_train: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(800);

    let mut spec = TaskSpec::new(TaskKind::LocalSwap { swap_prob: 0.3 }, 12, 12, 500 + seed);
    spec.min_len = 4;
    spec.max_len = 9;
    let train_m = corpus::generate(&spec, n_train, "train").unwrap();
    let eval_m = corpus::generate(&spec, 500, "eval").unwrap();

    // random permutation baseline over heldout triplets w/ ground-truth pi
    let trips: Vec<EvalTriplet> = eval_m
        .utterances
        .iter()
        .map(|u| eval_m.triplet(u, &u.translation).unwrap())
        .collect();
    let baseline = random_permutation_baseline(&trips, 99, 50);
    eprintln!("baseline mean R_acc = {baseline:.4}");
    // ceiling: ideal monotone decoder (lexicon map, no swap knowledge)
    let lex = eval_m.lexicon.clone().unwrap();
    let mono_hyps: Vec<Vec<String>> = eval_m.utterances.iter().map(|u| {
        u.source.iter().map(|tok| {
            let sym = eval_m.src_vocab.id_of(tok).unwrap() - 1;
            eval_m.tgt_vocab.token(lex[sym] + 1).unwrap().to_string()
        }).collect()
    }).collect();
    let refs: Vec<Vec<String>> = eval_m.utterances.iter().map(|u| u.translation.clone()).collect();
    let mono_bleu = corpus_bleu(&mono_hyps, &refs).unwrap();
    let mono_racc = eval_m.utterances.iter().zip(&mono_hyps)
        .map(|(u, h)| eval_m.triplet(u, h).unwrap().reorder_correctness())
        .sum::<f64>() / eval_m.utterances.len() as f64;
    eprintln!("monotone-oracle bleu = {mono_bleu:.4}  racc = {mono_racc:.4}");

    let t0 = Instant::now();
    for mtl in [false, true] {
        let asr = mtl.then_some((3usize, train_m.src_vocab.size()));
        let mut cfg = ModelConfig::toy(spec.feat_dim, train_m.tgt_vocab.size(), asr);
        cfg.seed = seed;
        let params = ParameterSet::init(&cfg).unwrap();
        let (items, _rej) = prepare_items(&train_m, &params).unwrap();
        let mut tcfg = TrainConfig::new(0, seed);
        tcfg.batch_size = 16;
        tcfg.grad_accum = 1;
        tcfg.lr_scale = 0.6;
        tcfg.warmup_steps = 600;
        tcfg.lambda = 0.5;
        let mut trainer = Trainer::new(params, items, tcfg, None).unwrap();
        let mut snaps: Vec<ctcst_core::nn::ParameterSet> = Vec::new();
        for chunk in 0..(steps / 100) {
            trainer.run_steps(100).unwrap();
            let step = (chunk + 1) * 100;
            if step + 1000 > steps {
                snaps.push(trainer.params().clone());
            }
            if step % 500 == 0 {
                let (bleu, racc) = eval_model(trainer.params(), &eval_m);
                let (abine, aracc) = if snaps.is_empty() {
                    (bleu, racc)
                } else {
                    let avg = average_checkpoints(&snaps).unwrap();
                    eval_model(&avg, &eval_m)
                };
                eprintln!(
                    "mtl={mtl} step {step:4}  loss {:7.4}  bleu {bleu:.4}  racc {racc:.4}  avg_bleu {abine:.4}  avg_racc {aracc:.4}  {:.0}s",
                    trainer.log().records.last().unwrap().loss,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}
