//! Experiment orchestration: corpus preparation, pretraining and
//! fine-tuning runs, decoding and scoring, and the four toy studies the
//! CLI exposes (units, decoder-depth, pretrain-source, purity).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audio::{self, resample_8k_to_16k, SynthSpec};
use crate::beam::{prefix_beam_search, DecodeConfig, Fusion, NBestEntry};
use crate::config::{CorpusConfig, DecodeRunConfig, ExperimentConfig};
use crate::ctc::greedy_decode;
use crate::finetune::{
    self, finetune_step, AsrModel, Branch, FinetuneConfig, FinetuneError, InitSource, LossRow,
    TrainUtt,
};
use crate::lm::{self, NGramModel};
use crate::metrics::{code_purity, normalize, EvalReport, MetricsError, ResultTable, TokenKind};
use crate::model::{frame_geometry, AcousticModel};
use crate::optim::{Adam, AdamConfig};
use crate::pretrain::{pretrain_step, PretrainError, PretrainLoss};
use crate::quantizer::{self, Codebook, QuantizeMode};
use crate::rng::Prng;
use crate::units::{
    build_char_inventory, build_letter_inventory, build_phone_inventory, decode_units,
    encode_text, train_bpe, UnitInventory, UnitKind, UnitsError,
};
use crate::util::parallel_map_ordered;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Lm(#[from] lm::LmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, StudyError>;

fn io_err(path: &Path, source: std::io::Error) -> StudyError {
    StudyError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ----- corpus preparation --------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LabeledUtt {
    pub utt_id: String,
    pub samples: Vec<f64>,
    pub transcript: String,
    /// Ground-truth unit per encoder frame, when the corpus is synthetic.
    pub frame_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<LabeledUtt>,
    pub test: Vec<LabeledUtt>,
    pub unlabeled: Vec<(String, Vec<f64>)>,
}

fn synth_split(
    base: &crate::config::SyntheticCorpusConfig,
    seed: u64,
    split: &str,
    n: usize,
    stride: usize,
    rf: usize,
) -> Result<Vec<LabeledUtt>> {
    let spec = SynthSpec {
        units: base.units.clone(),
        duration_ms: base.duration_ms,
        noise: base.noise,
        seed,
        word_len: base.word_len,
        allow_repeats: base.allow_repeats,
    };
    let utts = audio::synth_corpus(&spec, n, base.units_per_utt)?;
    Ok(utts
        .into_iter()
        .enumerate()
        .map(|(i, u)| LabeledUtt {
            utt_id: format!("{split}-{i:04}"),
            frame_labels: Some(u.frame_labels(stride, rf)),
            samples: u.waveform.samples,
            transcript: u.transcript,
        })
        .collect())
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (stride, rf) = frame_geometry(&cfg.encoder);
    match &cfg.corpus {
        CorpusConfig::Synthetic(s) => {
            let train = synth_split(s, cfg.seed, "train", s.train_utts, stride, rf)?;
            let test = synth_split(s, cfg.seed + 1, "test", s.test_utts, stride, rf)?;
            let unlabeled = synth_split(s, cfg.seed + 2, "unlab", s.unlabeled_utts, stride, rf)?
                .into_iter()
                .map(|u| (u.utt_id, u.samples))
                .collect();
            Ok(PreparedData {
                train,
                test,
                unlabeled,
            })
        }
        CorpusConfig::Manifests(m) => {
            let load = |path: &Path| -> Result<Vec<LabeledUtt>> {
                let entries = audio::load_manifest(path)?;
                let mut out = Vec::with_capacity(entries.len());
                for e in entries {
                    let wave = audio::read_wav(&e.audio_path)?;
                    let wave = if wave.sample_rate == 8000 {
                        resample_8k_to_16k(&wave)?
                    } else {
                        wave
                    };
                    out.push(LabeledUtt {
                        utt_id: e.utt_id,
                        samples: wave.samples,
                        transcript: e.transcript,
                        frame_labels: None,
                    });
                }
                Ok(out)
            };
            let train = load(&m.train)?;
            let test = load(&m.test)?;
            let unlabeled = match &m.unlabeled {
                Some(p) => load(p)?,
                None => train.clone(),
            }
            .into_iter()
            .map(|u| (u.utt_id, u.samples))
            .collect();
            Ok(PreparedData {
                train,
                test,
                unlabeled,
            })
        }
    }
}

pub fn build_inventory(kind: UnitKind, transcripts: &[String]) -> Result<UnitInventory> {
    Ok(match kind {
        UnitKind::Char => build_char_inventory(transcripts)?,
        UnitKind::Letter => build_letter_inventory(transcripts)?,
        UnitKind::Subword => {
            // Small default budget for toy corpora.
            let mut alphabet = std::collections::BTreeSet::new();
            for t in transcripts {
                alphabet.extend(normalize(t).chars());
            }
            let target = (alphabet.len() * 2 + 16).max(16);
            train_bpe(transcripts, target)?.1
        }
        UnitKind::Phone => {
            let symbols: Vec<String> = transcripts
                .iter()
                .flat_map(|t| t.split_whitespace().map(str::to_string))
                .collect();
            build_phone_inventory(&symbols)?
        }
    })
}

pub fn make_train_utts(inventory: &UnitInventory, utts: &[LabeledUtt]) -> Result<Vec<TrainUtt>> {
    let mut out = Vec::with_capacity(utts.len());
    for u in utts {
        out.push(TrainUtt {
            utt_id: u.utt_id.clone(),
            samples: u.samples.clone(),
            target: encode_text(inventory, &u.transcript)?,
        });
    }
    Ok(out)
}

/// Train the decoding LM on the training transcripts: word tokens for
/// letter systems, unit symbols otherwise.
pub fn train_lm(
    inventory: &UnitInventory,
    transcripts: &[String],
    order: usize,
) -> Result<NGramModel> {
    let sentences: Vec<Vec<String>> = match inventory.kind {
        UnitKind::Letter => transcripts
            .iter()
            .map(|t| normalize(t).split_whitespace().map(str::to_string).collect())
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(transcripts.len());
            for t in transcripts {
                let ids = encode_text(inventory, t)?;
                out.push(
                    ids.iter()
                        .map(|&id| inventory.symbol(id).expect("id in inventory").to_string())
                        .collect(),
                );
            }
            out
        }
    };
    Ok(lm::train(&sentences, order)?)
}

pub fn fusion_for<'a>(inventory: &'a UnitInventory, model: Option<&'a NGramModel>) -> Fusion<'a> {
    match model {
        None => Fusion::None,
        Some(lm) => match inventory.kind {
            UnitKind::Letter => Fusion::WordLm { lm, inventory },
            _ => Fusion::UnitLm { lm, inventory },
        },
    }
}

// ----- pretraining loop -----------------------------------------------------------

pub struct PretrainRun {
    pub model: AcousticModel,
    pub codebook: Codebook,
    pub log: Vec<(usize, f64, PretrainLoss)>,
}

pub fn run_pretraining(cfg: &ExperimentConfig, unlabeled: &[(String, Vec<f64>)]) -> Result<PretrainRun> {
    let mut rng = Prng::new(cfg.seed);
    let mut model =
        AcousticModel::new(&cfg.encoder, &mut rng).map_err(FinetuneError::Model)?;
    let mut codebook = Codebook::new(
        cfg.encoder.latent_dim(),
        cfg.quantizer.quantized_dim,
        cfg.quantizer.groups,
        cfg.quantizer.entries_per_group,
        &mut rng,
    )
    .map_err(PretrainError::Quantizer)?;
    let mut opt = Adam::new(AdamConfig::default());
    let mut log = Vec::with_capacity(cfg.pretrain.steps);
    let b = cfg.pretrain.batch_size.min(unlabeled.len()).max(1);
    for step in 0..cfg.pretrain.steps {
        let batch: Vec<(String, Vec<f64>)> = (0..b)
            .map(|i| unlabeled[(step * b + i) % unlabeled.len()].clone())
            .collect();
        let loss = pretrain_step(
            &mut model,
            &mut codebook,
            &batch,
            &cfg.pretrain.objective,
            &mut opt,
            step,
            cfg.seed,
        )?;
        log.push((step, cfg.pretrain.objective.lr.lr(step + 1), loss));
    }
    Ok(PretrainRun {
        model,
        codebook,
        log,
    })
}

pub fn pretrain_log_csv(log: &[(usize, f64, PretrainLoss)]) -> String {
    let mut out = String::from(PretrainLoss::csv_header());
    out.push('\n');
    for (step, lr, loss) in log {
        out.push_str(&loss.csv_row(*step, *lr));
        out.push('\n');
    }
    out
}

// ----- decoding and scoring ---------------------------------------------------------

pub fn decode_utt(
    asr: &AsrModel,
    lm: Option<&NGramModel>,
    dcfg: &DecodeConfig,
    samples: &[f64],
) -> Result<Vec<NBestEntry>> {
    let lp = asr.ctc_log_probs(samples)?;
    Ok(prefix_beam_search(&lp, fusion_for(&asr.inventory, lm), dcfg))
}

/// Decode a set in parallel (bounded by MSSL_THREADS), results in input
/// order.
pub fn decode_set(
    asr: &AsrModel,
    lm: Option<&NGramModel>,
    dcfg: &DecodeConfig,
    utts: &[LabeledUtt],
) -> Result<Vec<(String, Vec<NBestEntry>)>> {
    let items: Vec<(String, Vec<f64>)> = utts
        .iter()
        .map(|u| (u.utt_id.clone(), u.samples.clone()))
        .collect();
    let results = parallel_map_ordered(items, |(utt_id, samples)| {
        decode_utt(asr, lm, dcfg, samples).map(|n| (utt_id.clone(), n))
    });
    results.into_iter().collect()
}

pub fn hypothesis_text(inventory: &UnitInventory, entry: &NBestEntry) -> Result<String> {
    Ok(decode_units(inventory, &entry.prefix)?)
}

/// Corpus error rate of beam decoding against the reference transcripts.
pub fn corpus_error_rate(
    asr: &AsrModel,
    lm: Option<&NGramModel>,
    dcfg: &DecodeConfig,
    utts: &[LabeledUtt],
    kind: TokenKind,
) -> Result<f64> {
    let decoded = decode_set(asr, lm, dcfg, utts)?;
    let mut pairs = Vec::with_capacity(utts.len());
    for (u, (utt_id, nbest)) in utts.iter().zip(&decoded) {
        let text = hypothesis_text(&asr.inventory, &nbest[0])?;
        pairs.push((utt_id.clone(), u.transcript.clone(), text));
    }
    Ok(EvalReport::score(kind, &pairs)?.error_rate())
}

/// Greedy-decode error rate, the cheap progress metric used inside
/// training loops.
pub fn greedy_error_rate(asr: &AsrModel, utts: &[LabeledUtt], kind: TokenKind) -> Result<f64> {
    let items: Vec<LabeledUtt> = utts.to_vec();
    let decoded = parallel_map_ordered(items, |u| -> Result<(String, String, String)> {
        let lp = asr.ctc_log_probs(&u.samples)?;
        let ids = greedy_decode(&lp);
        Ok((
            u.utt_id.clone(),
            u.transcript.clone(),
            decode_units(&asr.inventory, &ids)?,
        ))
    });
    let pairs: Vec<(String, String, String)> = decoded.into_iter().collect::<Result<_>>()?;
    Ok(EvalReport::score(kind, &pairs)?.error_rate())
}

/// Attention-decoder error rate (beam 4, length-normalized).
pub fn attn_error_rate(asr: &AsrModel, utts: &[LabeledUtt], kind: TokenKind) -> Result<f64> {
    let items: Vec<LabeledUtt> = utts.to_vec();
    let decoded = parallel_map_ordered(items, |u| -> Result<(String, String, String)> {
        let ids = asr.attn_decode(&u.samples, 4)?;
        Ok((
            u.utt_id.clone(),
            u.transcript.clone(),
            decode_units(&asr.inventory, &ids)?,
        ))
    });
    let pairs: Vec<(String, String, String)> = decoded.into_iter().collect::<Result<_>>()?;
    Ok(EvalReport::score(kind, &pairs)?.error_rate())
}

// ----- n-best files --------------------------------------------------------------------

/// `utt_id<TAB>rank<TAB>acoustic_logp<TAB>lm_logp<TAB>fused<TAB>text`
pub fn write_nbest(
    path: &Path,
    inventory: &UnitInventory,
    decoded: &[(String, Vec<NBestEntry>)],
) -> Result<()> {
    let mut out = String::new();
    for (utt_id, entries) in decoded {
        for (rank, e) in entries.iter().enumerate() {
            let text = hypothesis_text(inventory, e)?;
            let _ = writeln!(
                out,
                "{utt_id}\t{rank}\t{:.6}\t{:.6}\t{:.6}\t{text}",
                e.acoustic_logp, e.lm_logp, e.fused
            );
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Top hypothesis per utterance from an n-best file.
pub fn read_nbest_top(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(6, '\t').collect();
        if fields.len() != 6 {
            return Err(StudyError::Other(format!(
                "{} line {}: expected 6 tab-separated fields",
                path.display(),
                i + 1
            )));
        }
        if fields[1] == "0" {
            out.push((fields[0].to_string(), fields[5].to_string()));
        }
    }
    Ok(out)
}

// ----- training helpers ----------------------------------------------------------------

/// Fine-tune while checking an error rate periodically; returns the model,
/// the loss log, and the first step at which the metric dipped to the
/// threshold (if it ever did).
pub struct TrackedRun {
    pub asr: AsrModel,
    pub log: Vec<LossRow>,
    pub first_step_reaching: Option<usize>,
    pub final_rate: f64,
    /// (step, error rate) at every evaluation point.
    pub trajectory: Vec<(usize, f64)>,
}

#[allow(clippy::too_many_arguments)]
pub fn finetune_tracked(
    mut asr: AsrModel,
    data: &[TrainUtt],
    cfg: &FinetuneConfig,
    eval_set: &[LabeledUtt],
    kind: TokenKind,
    threshold_pct: f64,
    eval_every: usize,
    stop_when_reached: bool,
) -> Result<TrackedRun> {
    let mut opt = Adam::new(AdamConfig::default());
    let mut log = Vec::new();
    let mut first = None;
    let mut rate = f64::INFINITY;
    let mut trajectory = Vec::new();
    for step in 0..cfg.steps {
        let batch: Vec<&TrainUtt> = (0..cfg.batch_size.min(data.len()))
            .map(|i| &data[(step * cfg.batch_size + i) % data.len()])
            .collect();
        let (loss, skipped) = finetune_step(&mut asr, &batch, cfg, &mut opt, step)?;
        log.push(LossRow {
            step,
            lr: cfg.lr.lr(step + 1),
            loss,
            skipped_utts: skipped,
        });
        if (step + 1) % eval_every == 0 || step + 1 == cfg.steps {
            rate = greedy_error_rate(&asr, eval_set, kind)?;
            trajectory.push((step + 1, rate));
            if first.is_none() && rate <= threshold_pct {
                first = Some(step + 1);
                if stop_when_reached {
                    break;
                }
            }
        }
    }
    Ok(TrackedRun {
        asr,
        log,
        first_step_reaching: first,
        final_rate: rate,
        trajectory,
    })
}

/// Composite code purity of the quantizer against synthetic frame labels.
/// Codes are taken without Gumbel noise at the terminal temperature.
pub fn purity_probe(
    model: &AcousticModel,
    codebook: &Codebook,
    utts: &[LabeledUtt],
) -> Result<f64> {
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    for u in utts {
        let Some(frame_labels) = &u.frame_labels else {
            return Err(StudyError::Other(format!(
                "utterance {} has no frame labels (not synthetic)",
                u.utt_id
            )));
        };
        let (z, _) = model.encode(&u.samples, 16000).map_err(FinetuneError::Model)?;
        let (targets, _) = quantizer::quantize(
            codebook,
            &z.frames,
            0.5,
            QuantizeMode::Hard,
            None,
        )
        .map_err(PretrainError::Quantizer)?;
        let t = z.len().min(frame_labels.len());
        for i in 0..t {
            codes.push(targets.composite_code(i, codebook.entries_per_group));
            labels.push(frame_labels[i]);
        }
    }
    Ok(code_purity(&codes, &labels)?)
}

// ----- study drivers -------------------------------------------------------------------

pub struct StudyOutput {
    pub dir: PathBuf,
    pub table: ResultTable,
}

pub fn study_dir(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let dir = cfg.out_dir.join(format!("{name}-{stamp}"));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    // Copy the resolved config in for provenance.
    let cfg_path = dir.join("config.json");
    std::fs::write(
        &cfg_path,
        serde_json::to_string_pretty(cfg).expect("config json"),
    )
    .map_err(|e| io_err(&cfg_path, e))?;
    Ok(dir)
}

fn write_report(dir: &Path, table: &ResultTable) -> Result<()> {
    let md = dir.join("report.md");
    std::fs::write(&md, table.to_markdown()).map_err(|e| io_err(&md, e))?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, table.to_csv()).map_err(|e| io_err(&csv, e))?;
    Ok(())
}

fn transcripts(utts: &[LabeledUtt]) -> Vec<String> {
    utts.iter().map(|u| u.transcript.clone()).collect()
}

fn decode_cfg(d: &DecodeRunConfig, lm_weight: f64) -> DecodeConfig {
    DecodeConfig {
        beam_width: d.beam_width,
        lm_weight,
        insertion_bonus: if lm_weight == 0.0 { 0.0 } else { d.insertion_bonus },
        n_best: d.n_best,
    }
}

/// Modeling-unit comparison: {char, letter} x {no LM, with LM}.
pub fn study_units(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let dir = study_dir(cfg, "units")?;
    let data = prepare(cfg)?;
    let pre = run_pretraining(cfg, &data.unlabeled)?;
    let ckpt = dir.join("pretrained.mssl");
    finetune::save_pretrained(&pre.model, &pre.codebook, &ckpt)?;

    let mut table = ResultTable::new(
        "CER (%) by modeling unit and decoding LM",
        &["no LM", "with LM"],
        &["char (ctc)", "letter (ctc)"],
    );
    for (row, kind) in [(0usize, UnitKind::Char), (1, UnitKind::Letter)] {
        let inventory = build_inventory(kind, &transcripts(&data.train))?;
        let train_utts = make_train_utts(&inventory, &data.train)?;
        let mut asr = finetune::init_for_finetune(
            &cfg.encoder,
            &cfg.finetune,
            &inventory,
            InitSource::Checkpoint(&ckpt),
            cfg.seed,
        )?;
        let log = finetune::finetune(&mut asr, &train_utts, &cfg.finetune)?;
        let log_path = dir.join(format!("finetune-{kind:?}.csv"));
        std::fs::write(&log_path, finetune::loss_log_csv(&log)).map_err(|e| io_err(&log_path, e))?;
        let model = train_lm(&inventory, &transcripts(&data.train), cfg.decode.lm_order)?;
        let no_lm = corpus_error_rate(
            &asr,
            None,
            &decode_cfg(&cfg.decode, 0.0),
            &data.test,
            TokenKind::Char,
        )?;
        let with_lm = corpus_error_rate(
            &asr,
            Some(&model),
            &decode_cfg(&cfg.decode, cfg.decode.lm_weight),
            &data.test,
            TokenKind::Char,
        )?;
        table.set(row, 0, no_lm);
        table.set(row, 1, with_lm);
    }
    write_report(&dir, &table)?;
    Ok(StudyOutput { dir, table })
}

/// Head comparison: CTC projection vs 1- and 4-layer attention decoders.
pub fn study_decoder_depth(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let dir = study_dir(cfg, "decoder-depth")?;
    let data = prepare(cfg)?;
    let pre = run_pretraining(cfg, &data.unlabeled)?;
    let ckpt = dir.join("pretrained.mssl");
    finetune::save_pretrained(&pre.model, &pre.codebook, &ckpt)?;

    let inventory = build_inventory(cfg.unit_kind, &transcripts(&data.train))?;
    let train_utts = make_train_utts(&inventory, &data.train)?;
    let mut table = ResultTable::new(
        "CER (%) by additional module",
        &["CER"],
        &[
            "1 projection layer (ctc)",
            "1 decoder layer (ce)",
            "4 decoder layers (ce)",
        ],
    );
    let arms = [
        (0usize, Branch::Ctc, 1usize),
        (1, Branch::AttnDecoder, 1),
        (2, Branch::AttnDecoder, 4),
    ];
    for (row, branch, layers) in arms {
        let mut fcfg = cfg.finetune.clone();
        fcfg.branch = branch;
        fcfg.decoder.layers = layers;
        let mut asr = finetune::init_for_finetune(
            &cfg.encoder,
            &fcfg,
            &inventory,
            InitSource::Checkpoint(&ckpt),
            cfg.seed,
        )?;
        let log = finetune::finetune(&mut asr, &train_utts, &fcfg)?;
        let log_path = dir.join(format!("finetune-row{row}.csv"));
        std::fs::write(&log_path, finetune::loss_log_csv(&log)).map_err(|e| io_err(&log_path, e))?;
        let cer = match branch {
            Branch::Ctc => corpus_error_rate(
                &asr,
                None,
                &decode_cfg(&cfg.decode, 0.0),
                &data.test,
                TokenKind::Char,
            )?,
            Branch::AttnDecoder => attn_error_rate(&asr, &data.test, TokenKind::Char)?,
        };
        table.set(row, 0, cer);
    }
    write_report(&dir, &table)?;
    Ok(StudyOutput { dir, table })
}

/// Shift transcripts into a disjoint alphabet for the task-A corpus.
fn shift_letters(text: &str, offset: u8) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_lowercase() {
                (c as u8 + offset) as char
            } else {
                c
            }
        })
        .collect()
}

/// Initialization comparison: random vs supervised task-A vs
/// self-supervised.
pub fn study_pretrain_source(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let dir = study_dir(cfg, "pretrain-source")?;
    let data = prepare(cfg)?;
    let inventory = build_inventory(cfg.unit_kind, &transcripts(&data.train))?;
    let train_utts = make_train_utts(&inventory, &data.train)?;

    // Task A: a second synthetic language with shifted tones and a
    // disjoint letter alphabet, labeled, for the supervised arm.
    let task_a_ckpt = dir.join("supervised-task-a.mssl");
    {
        let CorpusConfig::Synthetic(s) = &cfg.corpus else {
            return Err(StudyError::Other(
                "pretrain-source study needs a synthetic corpus".into(),
            ));
        };
        let mut spec = SynthSpec {
            units: s.units.iter().map(|&(f, a)| (f * 1.21, a)).collect(),
            duration_ms: s.duration_ms,
            noise: s.noise,
            seed: cfg.seed + 100,
            word_len: s.word_len,
            allow_repeats: s.allow_repeats,
        };
        spec.units.truncate(4); // shifted tones stay under Nyquist
        let (stride, rf) = frame_geometry(&cfg.encoder);
        let utts = audio::synth_corpus(&spec, s.train_utts, s.units_per_utt)?;
        let task_a: Vec<LabeledUtt> = utts
            .into_iter()
            .enumerate()
            .map(|(i, u)| LabeledUtt {
                utt_id: format!("taska-{i:04}"),
                frame_labels: Some(u.frame_labels(stride, rf)),
                samples: u.waveform.samples,
                transcript: shift_letters(&u.transcript, 22),
            })
            .collect();
        let inv_a = build_inventory(cfg.unit_kind, &transcripts(&task_a))?;
        let utts_a = make_train_utts(&inv_a, &task_a)?;
        let (model_a, _) = finetune::supervised_pretrain(
            &cfg.encoder,
            &utts_a,
            inv_a,
            &cfg.finetune,
            cfg.seed + 100,
        )?;
        finetune::save_asr(&model_a, &task_a_ckpt)?;
    }

    // Self-supervised arm.
    let pre = run_pretraining(cfg, &data.unlabeled)?;
    let ssl_ckpt = dir.join("pretrained.mssl");
    finetune::save_pretrained(&pre.model, &pre.codebook, &ssl_ckpt)?;

    let mut table = ResultTable::new(
        "CER (%) by pretraining source",
        &["CER"],
        &["w/o pre-train", "supervised (task A)", "self-supervised"],
    );
    let arms: [(usize, InitSource); 3] = [
        (0, InitSource::Random),
        (1, InitSource::Checkpoint(&task_a_ckpt)),
        (2, InitSource::Checkpoint(&ssl_ckpt)),
    ];
    for (row, init) in arms {
        let mut asr = finetune::init_for_finetune(
            &cfg.encoder,
            &cfg.finetune,
            &inventory,
            init,
            cfg.seed,
        )?;
        let log = finetune::finetune(&mut asr, &train_utts, &cfg.finetune)?;
        let log_path = dir.join(format!("finetune-row{row}.csv"));
        std::fs::write(&log_path, finetune::loss_log_csv(&log)).map_err(|e| io_err(&log_path, e))?;
        let cer = corpus_error_rate(
            &asr,
            None,
            &decode_cfg(&cfg.decode, 0.0),
            &data.test,
            TokenKind::Char,
        )?;
        table.set(row, 0, cer);
    }
    write_report(&dir, &table)?;
    Ok(StudyOutput { dir, table })
}

/// Code purity of the pretrained quantizer vs a random-initialized one on
/// identical frames.
pub fn study_purity(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let dir = study_dir(cfg, "purity")?;
    let data = prepare(cfg)?;

    let mut rng = Prng::new(cfg.seed + 999);
    let random_model =
        AcousticModel::new(&cfg.encoder, &mut rng).map_err(FinetuneError::Model)?;
    let random_codebook = Codebook::new(
        cfg.encoder.latent_dim(),
        cfg.quantizer.quantized_dim,
        cfg.quantizer.groups,
        cfg.quantizer.entries_per_group,
        &mut rng,
    )
    .map_err(PretrainError::Quantizer)?;
    let random_purity = purity_probe(&random_model, &random_codebook, &data.test)?;

    let pre = run_pretraining(cfg, &data.unlabeled)?;
    let log_path = dir.join("pretrain.csv");
    std::fs::write(&log_path, pretrain_log_csv(&pre.log)).map_err(|e| io_err(&log_path, e))?;
    let pretrained_purity = purity_probe(&pre.model, &pre.codebook, &data.test)?;

    let mut table = ResultTable::new(
        "Composite code purity against synthetic frame labels",
        &["purity"],
        &["random init", "pretrained"],
    );
    table.set(0, 0, random_purity);
    table.set(1, 0, pretrained_purity);
    write_report(&dir, &table)?;
    Ok(StudyOutput { dir, table })
}

pub const STUDY_NAMES: [&str; 4] = ["units", "decoder-depth", "pretrain-source", "purity"];

pub fn run_study(name: &str, cfg: &ExperimentConfig) -> Result<StudyOutput> {
    match name {
        "units" => study_units(cfg),
        "decoder-depth" => study_decoder_depth(cfg),
        "pretrain-source" => study_pretrain_source(cfg),
        "purity" => study_purity(cfg),
        _ => Err(StudyError::Other(format!(
            "unknown study {name:?}; valid names: {}",
            STUDY_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::toy(11, dir);
        let CorpusConfig::Synthetic(s) = &mut cfg.corpus else {
            unreachable!()
        };
        s.train_utts = 3;
        s.test_utts = 2;
        s.unlabeled_utts = 3;
        s.units_per_utt = 3;
        cfg
    }

    #[test]
    fn prepared_corpus_is_deterministic_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let a = prepare(&cfg).unwrap();
        let b = prepare(&cfg).unwrap();
        assert_eq!(a.train.len(), 3);
        assert_eq!(a.test.len(), 2);
        assert_eq!(a.unlabeled.len(), 3);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.samples, y.samples);
            assert_eq!(x.transcript, y.transcript);
        }
        // Train and test draws differ.
        assert_ne!(a.train[0].samples, a.test[0].samples);
    }

    #[test]
    fn nbest_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inv = build_char_inventory(&["ab".to_string()]).unwrap();
        let decoded = vec![(
            "u1".to_string(),
            vec![
                NBestEntry {
                    prefix: vec![1, 2],
                    acoustic_logp: -1.5,
                    lm_logp: -0.5,
                    scored_tokens: 2,
                    fused: -2.25,
                },
                NBestEntry {
                    prefix: vec![2],
                    acoustic_logp: -2.0,
                    lm_logp: -0.1,
                    scored_tokens: 1,
                    fused: -2.15,
                },
            ],
        )];
        let path = dir.path().join("nbest.tsv");
        write_nbest(&path, &inv, &decoded).unwrap();
        let top = read_nbest_top(&path).unwrap();
        assert_eq!(top, vec![("u1".to_string(), "ab".to_string())]);
    }

    #[test]
    fn unknown_study_name_lists_valid_ones() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        match run_study("bogus", &cfg) {
            Err(StudyError::Other(msg)) => {
                for name in STUDY_NAMES {
                    assert!(msg.contains(name), "{msg}");
                }
            }
            other => panic!("expected error, got {:?}", other.map(|o| o.dir)),
        }
    }

    #[test]
    fn lm_tokens_follow_unit_kind() {
        let transcripts = vec!["ab ba".to_string(), "ab".to_string()];
        let char_inv = build_char_inventory(&transcripts).unwrap();
        let char_lm = train_lm(&char_inv, &transcripts, 2).unwrap();
        // Unit tokens: single characters (plus space).
        assert!(char_lm.contains("a"));
        assert!(!char_lm.contains("ab"));
        let letter_inv = build_letter_inventory(&transcripts).unwrap();
        let word_lm = train_lm(&letter_inv, &transcripts, 2).unwrap();
        assert!(word_lm.contains("ab"));
        assert!(word_lm.contains("ba"));
    }

    #[test]
    fn study_dir_contains_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let out = study_dir(&cfg, "probe").unwrap();
        let copied = out.join("config.json");
        let text = std::fs::read_to_string(copied).unwrap();
        let parsed: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, cfg);
    }
}
