// Print decoded hypotheses against references after fine-tuning, to see
// the actual error pattern on held-out utterances.

use mssl::config::{CorpusConfig, ExperimentConfig};
use mssl::ctc::greedy_decode;
use mssl::finetune::{self, InitSource};
use mssl::metrics::TokenKind;
use mssl::studies;
use mssl::units::decode_units;
use std::path::PathBuf;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let out = PathBuf::from("/tmp/calibrate");
    std::fs::create_dir_all(&out).unwrap();
    let mut cfg = ExperimentConfig::toy(seed, &out);
    let CorpusConfig::Synthetic(s) = &mut cfg.corpus else { unreachable!() };
    s.units = vec![
        (330.0, 0.6),
        (523.0, 0.6),
        (784.0, 0.6),
        (1175.0, 0.6),
        (1760.0, 0.6),
        (2637.0, 0.6),
    ];
    s.word_len = None;
    s.units_per_utt = 5;
    s.train_utts = 24;
    s.test_utts = 8;
    s.unlabeled_utts = 48;
    cfg.pretrain.steps = std::env::var("PRE_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(800);
    cfg.finetune.steps = 1200;
    if std::env::var("PROBE").map(|v| v == "1").unwrap_or(false) {
        cfg.finetune.freeze_context = true;
    }
    let use_random = std::env::var("RANDOM_INIT").map(|v| v == "1").unwrap_or(false);

    let data = studies::prepare(&cfg).unwrap();
    let pre = studies::run_pretraining(&cfg, &data.unlabeled).unwrap();
    let ckpt = out.join(format!("dbgdec-{seed}.mssl"));
    finetune::save_pretrained(&pre.model, &pre.codebook, &ckpt).unwrap();

    let transcripts: Vec<String> = data.train.iter().map(|u| u.transcript.clone()).collect();
    let inv = studies::build_inventory(cfg.unit_kind, &transcripts).unwrap();
    let utts = studies::make_train_utts(&inv, &data.train).unwrap();
    let init = if use_random { InitSource::Random } else { InitSource::Checkpoint(&ckpt) };
    let asr = finetune::init_for_finetune(&cfg.encoder, &cfg.finetune, &inv, init, cfg.seed)
        .unwrap();
    let run = studies::finetune_tracked(
        asr,
        &utts,
        &cfg.finetune,
        &data.test,
        TokenKind::Char,
        0.0,
        200,
        false,
    )
    .unwrap();
    println!("held-out trajectory: {:?}", run.trajectory);
    println!(
        "train CER at end: {:.2}",
        studies::greedy_error_rate(&run.asr, &data.train, TokenKind::Char).unwrap()
    );
    for u in data.test.iter() {
        let lp = run.asr.ctc_log_probs(&u.samples).unwrap();
        let hyp = decode_units(&run.asr.inventory, &greedy_decode(&lp)).unwrap();
        println!("{}: ref {:?} hyp {:?}", u.utt_id, u.transcript, hyp);
        // Frame labels vs argmax path for the first utterance.
        if u.utt_id.ends_with("0000") {
            let labels = u.frame_labels.as_ref().unwrap();
            let path: Vec<usize> = (0..lp.rows())
                .map(|t| {
                    let row = lp.row(t);
                    (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
                })
                .collect();
            println!("  frame labels: {labels:?}");
            println!("  argmax path:  {path:?}");
        }
    }
}
