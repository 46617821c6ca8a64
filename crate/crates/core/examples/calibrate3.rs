//! Scratch calibration: mixed-difficulty bins and the reverse task.
use ctcst_core::corpus::{self, CorpusManifest, TaskKind, TaskSpec};
use ctcst_core::decode::{decode_manifest, exact_match_rate};
use ctcst_core::metrics::{bin_by_difficulty, EvalTriplet};
use ctcst_core::nn::{ModelConfig, ParameterSet};
use ctcst_core::saliency::{reordering_matrix_from_stack, saliency_stack};
use ctcst_core::train::{prepare_items, TrainConfig, Trainer};

fn gen_mixed(seed: u64, n_each: usize, split: &str) -> CorpusManifest {
    let kinds: Vec<(TaskKind, &str)> = vec![
        (TaskKind::Substitute, "sub"),
        (TaskKind::LocalSwap { swap_prob: 0.15 }, "swap15"),
        (TaskKind::LocalSwap { swap_prob: 0.35 }, "swap35"),
        (TaskKind::WindowPermute { window: 4, pattern: vec![3, 0, 1, 2] }, "winperm"),
        (TaskKind::Reverse, "reverse"),
    ];
    let parts: Vec<CorpusManifest> = kinds
        .into_iter()
        .map(|(kind, name)| {
            let mut spec = TaskSpec::new(kind, 12, 12, seed);
            spec.min_len = 4;
            spec.max_len = 9;
            corpus::generate(&spec, n_each, &format!("{split}_{name}")).unwrap()
        })
        .collect();
    CorpusManifest::merge(parts).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("mixed");
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1500);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(21);

    if mode == "mixed" {
        let train_m = gen_mixed(700 + seed, 250, "train");
        let eval_m = gen_mixed(700 + seed, 80, "eval");
        let mut cfg = ModelConfig::toy(16, train_m.tgt_vocab.size(), None);
        cfg.seed = seed;
        let params = ParameterSet::init(&cfg).unwrap();
        let (items, rej) = prepare_items(&train_m, &params).unwrap();
        eprintln!("train {} rejected {}", items.len(), rej.len());
        let mut tcfg = TrainConfig::new(0, seed);
        tcfg.batch_size = 16;
        tcfg.grad_accum = 1;
        tcfg.lr_scale = 0.6;
        tcfg.warmup_steps = 600;
        let mut trainer = Trainer::new(params, items, tcfg, None).unwrap();
        trainer.run_steps(steps).unwrap();
        let decoded = decode_manifest(trainer.params(), &eval_m).unwrap();
        let triplets: Vec<EvalTriplet> = eval_m
            .utterances
            .iter()
            .zip(&decoded)
            .map(|(u, d)| eval_m.triplet(u, &d.tokens).unwrap())
            .collect();
        let bins = bin_by_difficulty(&triplets, 5).unwrap();
        for b in &bins {
            eprintln!(
                "bin {}  r_pi [{:.3},{:.3}]  n {}  bleu {:.4}  racc {:.4}",
                b.index, b.r_pi_min, b.r_pi_max, b.member_ids.len(), b.bleu, b.mean_r_acc
            );
        }
    } else {
        // reverse task for the saliency phenomenon
        let mut spec = TaskSpec::new(TaskKind::Reverse, 10, 10, 77);
        spec.min_len = 3;
        spec.max_len = 6;
        let train_m = corpus::generate(&spec, 600, "train").unwrap();
        let eval_m = corpus::generate(&spec, 20, "eval").unwrap();
        let asr = Some((3usize, train_m.src_vocab.size()));
        let mut cfg = ModelConfig::toy(16, train_m.tgt_vocab.size(), asr);
        cfg.seed = seed;
        let params = ParameterSet::init(&cfg).unwrap();
        let (items, _rej) = prepare_items(&train_m, &params).unwrap();
        let mut tcfg = TrainConfig::new(0, seed);
        tcfg.batch_size = 16;
        tcfg.grad_accum = 1;
        tcfg.lr_scale = 0.6;
        tcfg.warmup_steps = 600;
        let mut trainer = Trainer::new(params, items, tcfg, None).unwrap();
        trainer.run_steps(steps).unwrap();
        let decoded = decode_manifest(trainer.params(), &eval_m).unwrap();
        eprintln!("reverse exact match: {:.3}", exact_match_rate(&decoded, &eval_m));
        let mut moved = 0;
        let mut total = 0;
        for utt in &eval_m.utterances {
            let stack = saliency_stack(trainer.params(), &utt.features).unwrap();
            for occ in 0..stack.token_map.len() {
                let m = reordering_matrix_from_stack(&stack, occ).unwrap();
                let argmax_of = |col: usize| {
                    let mut best = 0;
                    for t in 0..m.values.nrows() {
                        if m.values[(t, col)] > m.values[(best, col)] {
                            best = t;
                        }
                    }
                    best
                };
                let first = argmax_of(0);
                let last = argmax_of(m.values.ncols() - 1);
                total += 1;
                if first != last {
                    moved += 1;
                }
            }
        }
        eprintln!("tokens with argmax row moving across layers: {moved}/{total}");
    }
}
