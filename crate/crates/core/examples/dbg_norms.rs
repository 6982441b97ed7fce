// Compare parameter scales between a random init and a pretrained
// checkpoint, and watch the fine-tune training CER for both.

use mssl::config::{CorpusConfig, ExperimentConfig};
use mssl::finetune::{self, InitSource};
use mssl::metrics::TokenKind;
use mssl::rng::Prng;
use mssl::studies;
use std::path::PathBuf;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let out = PathBuf::from("/tmp/calibrate");
    std::fs::create_dir_all(&out).unwrap();
    let mut cfg = ExperimentConfig::toy(seed, &out);
    let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() };
    s.train_utts = 12;
    s.test_utts = 8;
    s.unlabeled_utts = 32;
    cfg.pretrain.steps = 600;
    cfg.finetune.steps = 600;

    let data = studies::prepare(&cfg).unwrap();
    let pre = studies::run_pretraining(&cfg, &data.unlabeled).unwrap();
    let ckpt = out.join(format!("dbg-{seed}.mssl"));
    finetune::save_pretrained(&pre.model, &pre.codebook, &ckpt).unwrap();

    let random = mssl::model::AcousticModel::new(&cfg.encoder, &mut Prng::new(seed)).unwrap();
    let mut named_r = Vec::new();
    random.params(&mut named_r);
    let mut named_p = Vec::new();
    pre.model.params(&mut named_p);
    println!("{:40} {:>12} {:>12}", "tensor", "random-rms", "pretrain-rms");
    for ((name, tr), (_, tp)) in named_r.iter().zip(named_p.iter()) {
        let rms = |t: &mssl::tensor::Tensor| {
            (t.values().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt()
        };
        if name.contains("kernels") || name.contains(".w") || name.contains("gamma") || name.contains("embed") {
            println!("{:40} {:>12.4} {:>12.4}", name, rms(tr), rms(tp));
        }
    }

    let transcripts: Vec<String> = data.train.iter().map(|u| u.transcript.clone()).collect();
    let inv = studies::build_inventory(cfg.unit_kind, &transcripts).unwrap();
    let utts = studies::make_train_utts(&inv, &data.train).unwrap();
    for (name, init) in [
        ("selfsup", InitSource::Checkpoint(&ckpt)),
        ("random", InitSource::Random),
    ] {
        let asr = finetune::init_for_finetune(&cfg.encoder, &cfg.finetune, &inv, init, cfg.seed)
            .unwrap();
        // Track TRAIN CER to see whether the model fits at all.
        let run = studies::finetune_tracked(
            asr,
            &utts,
            &cfg.finetune,
            &data.train,
            TokenKind::Char,
            0.0,
            50,
            false,
        )
        .unwrap();
        println!(
            "{name}: train-CER trajectory {:?}",
            run.trajectory.iter().map(|(s, r)| (*s, *r as i64)).collect::<Vec<_>>()
        );
        let losses: Vec<f64> = run.log.iter().step_by(100).map(|r| r.loss).collect();
        println!("{name}: loss every 100 steps {losses:?}");
    }
}
