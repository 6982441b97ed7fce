// Calibration harness for the toy training recipes: prints training CER
// trajectories for the overfit and pretraining-benefit settings.

use mssl::config::{CorpusConfig, ExperimentConfig};
use mssl::finetune::{self, InitSource};
use mssl::metrics::TokenKind;
use mssl::studies;
use std::path::PathBuf;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "overfit".into());
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let out = PathBuf::from("/tmp/calibrate");
    std::fs::create_dir_all(&out).unwrap();
    let mut cfg = ExperimentConfig::toy(seed, &out);

    match mode.as_str() {
        "overfit" => {
            let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() };
            s.train_utts = 16;
            s.test_utts = 0;
            s.unlabeled_utts = 0;
            cfg.finetune.steps = 2000;
            let data = studies::prepare(&cfg).unwrap();
            let transcripts: Vec<String> =
                data.train.iter().map(|u| u.transcript.clone()).collect();
            let inv = studies::build_inventory(cfg.unit_kind, &transcripts).unwrap();
            let utts = studies::make_train_utts(&inv, &data.train).unwrap();
            let asr = finetune::init_for_finetune(
                &cfg.encoder,
                &cfg.finetune,
                &inv,
                InitSource::Random,
                cfg.seed,
            )
            .unwrap();
            let t0 = std::time::Instant::now();
            let run = studies::finetune_tracked(
                asr,
                &utts,
                &cfg.finetune,
                &data.train,
                TokenKind::Char,
                0.0,
                50,
                true,
            )
            .unwrap();
            println!(
                "seed {seed}: overfit reached 0% at step {:?} (final {:.2}%), {:.1}s",
                run.first_step_reaching,
                run.final_rate,
                t0.elapsed().as_secs_f64()
            );
        }
        "benefit" => {
            let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() };
            s.train_utts = 12;
            s.test_utts = 8;
            s.unlabeled_utts = 32;
            cfg.pretrain.steps = std::env::var("PRE_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(400);
            cfg.pretrain.objective.mask.span = std::env::var("SPAN").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
            cfg.pretrain.objective.mask.start_prob = std::env::var("MASK_P").ok().and_then(|v| v.parse().ok()).unwrap_or(0.065);
            if let Ok(t) = std::env::var("FIXED_TAU") { cfg.pretrain.objective.fixed_temperature = t.parse().ok(); }
            if let Ok(a) = std::env::var("ALPHA") { cfg.pretrain.objective.diversity_weight = a.parse().unwrap(); }
            if let Ok(f) = std::env::var("FREEZE") { cfg.finetune.freeze_encoder = f == "1"; }
            if std::env::var("NO_WORDS").map(|v| v == "1").unwrap_or(false) { let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() }; s.word_len = None; }
            if std::env::var("RICH").map(|v| v == "1").unwrap_or(false) {
                let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() };
                s.units = vec![(330.0, 0.6), (523.0, 0.6), (784.0, 0.6), (1175.0, 0.6), (1760.0, 0.6), (2637.0, 0.6)];
            }
            if let Ok(n) = std::env::var("TRAIN_UTTS") { let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() }; s.train_utts = n.parse().unwrap(); }
            if let Ok(n) = std::env::var("UPU") { let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() }; s.units_per_utt = n.parse().unwrap(); }
            if let Ok(n) = std::env::var("UNLAB") { let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() }; s.unlabeled_utts = n.parse().unwrap(); }
            cfg.finetune.steps = std::env::var("FT_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(1500);
            if let Ok(p) = std::env::var("FT_PEAK") { cfg.finetune.lr.peak = p.parse().unwrap(); }
            let data = studies::prepare(&cfg).unwrap();
            let transcripts: Vec<String> =
                data.train.iter().map(|u| u.transcript.clone()).collect();
            let inv = studies::build_inventory(cfg.unit_kind, &transcripts).unwrap();
            let utts = studies::make_train_utts(&inv, &data.train).unwrap();

            let t0 = std::time::Instant::now();
            let pre = studies::run_pretraining(&cfg, &data.unlabeled).unwrap();
            let ckpt = out.join(format!("pre-{seed}.mssl"));
            finetune::save_pretrained(&pre.model, &pre.codebook, &ckpt).unwrap();
            println!(
                "seed {seed}: pretrain {} steps in {:.1}s, last loss {:.4}, ppl {:?}",
                cfg.pretrain.steps,
                t0.elapsed().as_secs_f64(),
                pre.log.last().unwrap().2.total,
                pre.log.last().unwrap().2.codebook_ppl
            );
            let purity_random = {
                let mut rng = mssl::rng::Prng::new(cfg.seed + 999);
                let m = mssl::model::AcousticModel::new(&cfg.encoder, &mut rng).unwrap();
                let cb = mssl::quantizer::Codebook::new(
                    cfg.encoder.latent_dim(),
                    cfg.quantizer.quantized_dim,
                    cfg.quantizer.groups,
                    cfg.quantizer.entries_per_group,
                    &mut rng,
                )
                .unwrap();
                studies::purity_probe(&m, &cb, &data.test).unwrap()
            };
            let purity_pre = studies::purity_probe(&pre.model, &pre.codebook, &data.test).unwrap();
            println!("purity: random {purity_random:.3} pretrained {purity_pre:.3}");

            let enc_only = std::env::var("ENC_ONLY").map(|v| v == "1").unwrap_or(false);
            for (name, init) in [
                ("selfsup", if enc_only { InitSource::EncoderOnly(&ckpt) } else { InitSource::Checkpoint(&ckpt) }),
                ("random", InitSource::Random),
            ] {
                let asr = finetune::init_for_finetune(
                    &cfg.encoder,
                    &cfg.finetune,
                    &inv,
                    init,
                    cfg.seed,
                )
                .unwrap();
                let t1 = std::time::Instant::now();
                let run = studies::finetune_tracked(
                    asr,
                    &utts,
                    &cfg.finetune,
                    &data.test,
                    TokenKind::Char,
                    20.0,
                    25,
                    std::env::var("STOP_EARLY").map(|v| v == "1").unwrap_or(true),
                )
                .unwrap();
                println!(
                    "seed {seed}: {name} reached <=20% CER at step {:?} (final {:.2}%), {:.1}s",
                    run.first_step_reaching,
                    run.final_rate,
                    t1.elapsed().as_secs_f64()
                );
                println!("  trajectory: {:?}", run.trajectory);
            }
        }
        other => panic!("unknown mode {other}"),
    }
}
