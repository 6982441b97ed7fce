//! Command-line entry points: pretrain, finetune, decode, evaluate, study.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mssl::beam::DecodeConfig;
use mssl::config::ExperimentConfig;
use mssl::finetune::{self, Branch, FinetuneError, InitSource};
use mssl::lm;
use mssl::metrics::{
    relative_improvement, round1, EvalReport, ResultTable, TokenKind, REFERENCE_IMPROVEMENT_PAIRS,
};
use mssl::pretrain::PretrainError;
use mssl::studies::{self, StudyError};

#[derive(Parser)]
#[command(name = "mssl", version, about = "Self-supervised speech pipeline at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Self-supervised pretraining; writes a checkpoint and a training CSV.
    Pretrain(PretrainArgs),
    /// Fine-tune a recognizer head on labeled data.
    Finetune(FinetuneArgs),
    /// Beam-decode a manifest with an optional ARPA LM.
    Decode(DecodeArgs),
    /// Score an n-best file against reference transcripts.
    Evaluate(EvaluateArgs),
    /// Run one of the toy studies end to end.
    Study(StudyArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: PathBuf,
    /// `random` or a checkpoint path (pretrained or supervised).
    #[arg(long, default_value = "random")]
    init: String,
    #[arg(long, value_enum)]
    branch: Option<BranchArg>,
    #[arg(long)]
    decoder_layers: Option<usize>,
    #[arg(long)]
    freeze_encoder: Option<bool>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Ctc,
    Attn,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// ARPA file path or `none`.
    #[arg(long, default_value = "none")]
    lm: String,
    #[arg(long, default_value_t = 1.5)]
    lm_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    bonus: f64,
    #[arg(long, default_value_t = 16)]
    beam: usize,
    #[arg(long, default_value_t = 1)]
    n_best: usize,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "table1_check")]
    nbest: Option<PathBuf>,
    #[arg(long, required_unless_present = "table1_check")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Cer)]
    metric: MetricArg,
    #[arg(long, required_unless_present = "table1_check")]
    out: Option<PathBuf>,
    /// Baseline error rate (%); adds a relative-improvement column.
    #[arg(long)]
    baseline: Option<f64>,
    /// Recompute the built-in relative-improvement reference pairs.
    #[arg(long)]
    table1_check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Wer,
    Cer,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    name: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

fn classify_study(e: StudyError) -> CliError {
    match &e {
        StudyError::Pretrain(PretrainError::NonFiniteLoss { .. })
        | StudyError::Finetune(FinetuneError::NonFiniteLoss { .. }) => {
            CliError::Numerical(e.to_string())
        }
        _ => CliError::Usage(e.to_string()),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Usage(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, args.seed)?;
    ensure_parent(&args.out)?;
    let data = studies::prepare(&cfg).map_err(classify_study)?;
    let run = match studies::run_pretraining(&cfg, &data.unlabeled) {
        Ok(run) => run,
        Err(e) => {
            let err = classify_study(e);
            if let CliError::Numerical(msg) = &err {
                let diag = args.out.with_extension("diagnostics.txt");
                let _ = std::fs::write(&diag, msg);
                eprintln!("numerical failure; diagnostics at {}", diag.display());
            }
            return Err(err);
        }
    };
    finetune::save_pretrained(&run.model, &run.codebook, &args.out)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let csv = args.out.with_extension("csv");
    std::fs::write(&csv, studies::pretrain_log_csv(&run.log))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("checkpoint: {}", args.out.display());
    println!("training log: {}", csv.display());
    Ok(())
}

fn run_finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, args.seed)?;
    let mut fcfg = cfg.finetune.clone();
    if let Some(branch) = args.branch {
        fcfg.branch = match branch {
            BranchArg::Ctc => Branch::Ctc,
            BranchArg::Attn => Branch::AttnDecoder,
        };
    }
    if let Some(layers) = args.decoder_layers {
        fcfg.decoder.layers = layers;
    }
    if let Some(freeze) = args.freeze_encoder {
        fcfg.freeze_encoder = freeze;
    }
    ensure_parent(&args.out)?;
    let data = studies::prepare(&cfg).map_err(classify_study)?;
    let transcripts: Vec<String> = data.train.iter().map(|u| u.transcript.clone()).collect();
    let inventory =
        studies::build_inventory(cfg.unit_kind, &transcripts).map_err(classify_study)?;
    let train_utts = studies::make_train_utts(&inventory, &data.train).map_err(classify_study)?;
    let init = if args.init == "random" {
        InitSource::Random
    } else {
        InitSource::Checkpoint(Path::new(&args.init))
    };
    let mut asr = finetune::init_for_finetune(&cfg.encoder, &fcfg, &inventory, init, cfg.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let log = finetune::finetune(&mut asr, &train_utts, &fcfg).map_err(|e| match e {
        FinetuneError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    finetune::save_asr(&asr, &args.out).map_err(|e| CliError::Usage(e.to_string()))?;
    let csv = args.out.with_extension("csv");
    std::fs::write(&csv, finetune::loss_log_csv(&log))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("model: {}", args.out.display());
    println!("loss log: {}", csv.display());
    Ok(())
}

fn run_decode(args: DecodeArgs) -> Result<(), CliError> {
    let asr = finetune::load_asr(&args.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let lm_model = if args.lm == "none" {
        None
    } else {
        Some(lm::read_arpa(Path::new(&args.lm)).map_err(|e| CliError::Usage(e.to_string()))?)
    };
    let entries =
        mssl::audio::load_manifest(&args.manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    let utts: Vec<studies::LabeledUtt> = entries
        .iter()
        .map(|e| -> Result<studies::LabeledUtt, CliError> {
            let wave = mssl::audio::read_wav(&e.audio_path)
                .map_err(|err| CliError::Usage(err.to_string()))?;
            let wave = if wave.sample_rate == 8000 {
                mssl::audio::resample_8k_to_16k(&wave)
                    .map_err(|err| CliError::Usage(err.to_string()))?
            } else {
                wave
            };
            Ok(studies::LabeledUtt {
                utt_id: e.utt_id.clone(),
                samples: wave.samples,
                transcript: e.transcript.clone(),
                frame_labels: None,
            })
        })
        .collect::<Result<_, _>>()?;
    let dcfg = DecodeConfig {
        beam_width: args.beam,
        lm_weight: args.lm_weight,
        insertion_bonus: args.bonus,
        n_best: args.n_best,
    };
    ensure_parent(&args.out)?;
    let decoded =
        studies::decode_set(&asr, lm_model.as_ref(), &dcfg, &utts).map_err(classify_study)?;
    studies::write_nbest(&args.out, &asr.inventory, &decoded).map_err(classify_study)?;
    println!("nbest: {}", args.out.display());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    if args.table1_check {
        let mut failures = 0;
        for (tag, baseline, improved, published) in REFERENCE_IMPROVEMENT_PAIRS {
            let computed = relative_improvement(baseline, improved);
            let ok = (computed - published).abs() <= 0.1;
            println!(
                "{tag}: {baseline:.2} -> {improved:.2}: relative improvement {:.1}% (reference {published:.1}%) {}",
                round1(computed),
                if ok { "ok" } else { "MISMATCH" }
            );
            if !ok {
                failures += 1;
            }
        }
        if failures > 0 {
            return Err(CliError::Usage(format!(
                "{failures} reference pairs mismatched"
            )));
        }
        return Ok(());
    }
    let nbest = args.nbest.expect("clap enforces presence");
    let manifest = args.manifest.expect("clap enforces presence");
    let out_dir = args.out.expect("clap enforces presence");
    let top = studies::read_nbest_top(&nbest).map_err(classify_study)?;
    let refs =
        mssl::audio::load_manifest(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    let kind = match args.metric {
        MetricArg::Wer => TokenKind::Word,
        MetricArg::Cer => TokenKind::Char,
    };
    let mut pairs = Vec::new();
    for entry in &refs {
        let hyp = top
            .iter()
            .find(|(id, _)| *id == entry.utt_id)
            .map(|(_, text)| text.clone())
            .unwrap_or_default();
        pairs.push((entry.utt_id.clone(), entry.transcript.clone(), hyp));
    }
    let report = EvalReport::score(kind, &pairs).map_err(|e| CliError::Usage(e.to_string()))?;
    let rate = report.error_rate();
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Usage(e.to_string()))?;

    let metric_name = match args.metric {
        MetricArg::Wer => "WER",
        MetricArg::Cer => "CER",
    };
    let mut md = format!("# Evaluation\n\n{metric_name}: {rate:.2}%\n");
    let mut table = ResultTable::new("evaluation", &[metric_name], &["result"]);
    table.set(0, 0, rate);
    if let Some(baseline) = args.baseline {
        let imp = relative_improvement(baseline, rate);
        md.push_str(&format!(
            "\nBaseline: {baseline:.2}%\nRelative improvement: {:.1}%\n",
            round1(imp)
        ));
        let mut with_imp = ResultTable::new(
            "evaluation",
            &[metric_name, "relative_improvement"],
            &["result"],
        );
        with_imp.set(0, 0, rate);
        with_imp.set(0, 1, round1(imp));
        table = with_imp;
    }
    std::fs::write(out_dir.join("report.md"), md).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(out_dir.join("report.csv"), table.to_csv())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut errors_tsv = String::from("utt_id\tsubstitutions\tinsertions\tdeletions\tref_tokens\n");
    for u in &report.utts {
        errors_tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            u.utt_id, u.counts.substitutions, u.counts.insertions, u.counts.deletions, u.ref_tokens
        ));
    }
    std::fs::write(out_dir.join("errors.tsv"), errors_tsv)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{metric_name}: {rate:.2}%");
    println!("report: {}", out_dir.join("report.md").display());
    Ok(())
}

fn run_study_cmd(args: StudyArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, args.seed)?;
    let out = studies::run_study(&args.name, &cfg).map_err(classify_study)?;
    println!("{}", out.table.to_markdown());
    println!("artifacts: {}", out.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print cleanly; real usage errors exit 1.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Pretrain(args) => run_pretrain(args),
        Command::Finetune(args) => run_finetune(args),
        Command::Decode(args) => run_decode(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Study(args) => run_study_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
