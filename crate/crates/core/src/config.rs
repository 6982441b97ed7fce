//! Experiment configuration: one strict JSON document wiring corpus,
//! units, model, pretraining, fine-tuning, and decoding together.
//! Unknown keys are rejected everywhere so config drift fails loudly
//! before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finetune::FinetuneConfig;
use crate::model::EncoderConfig;
use crate::pretrain::PretrainConfig;
use crate::units::UnitKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} does not validate: {message}")]
    Invalid { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub unit_kind: UnitKind,
    pub encoder: EncoderConfig,
    pub quantizer: QuantizerConfig,
    pub pretrain: PretrainRunConfig,
    pub finetune: FinetuneConfig,
    pub decode: DecodeRunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub enum CorpusConfig {
    #[serde(rename = "synthetic")]
    Synthetic(SyntheticCorpusConfig),
    #[serde(rename = "manifests")]
    Manifests(ManifestCorpusConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    /// (frequency Hz, amplitude) per synthetic phone.
    pub units: Vec<(f64, f64)>,
    pub duration_ms: (f64, f64),
    pub noise: f64,
    /// Units per transcript word; None writes one long word.
    pub word_len: Option<(usize, usize)>,
    #[serde(default)]
    pub allow_repeats: bool,
    pub units_per_utt: usize,
    pub train_utts: usize,
    pub test_utts: usize,
    pub unlabeled_utts: usize,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            units: vec![(392.0, 0.6), (659.0, 0.6), (1047.0, 0.6), (1568.0, 0.6)],
            duration_ms: (140.0, 220.0),
            noise: 0.01,
            word_len: Some((1, 3)),
            allow_repeats: false,
            units_per_utt: 4,
            train_utts: 16,
            test_utts: 8,
            unlabeled_utts: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestCorpusConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Optional unlabeled manifest for pretraining; falls back to train.
    pub unlabeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    pub groups: usize,
    pub entries_per_group: usize,
    pub quantized_dim: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            groups: 2,
            entries_per_group: 16,
            quantized_dim: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PretrainRunConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub objective: PretrainConfig,
}

impl Default for PretrainRunConfig {
    fn default() -> Self {
        // The published schedule (8k warmup to 4e-5, 42k hold) is scaled
        // down to desk size: same shape, toy step counts.
        let mut objective = PretrainConfig::default();
        objective.lr = crate::optim::LrSchedule {
            warmup_steps: 50,
            peak: 2e-3,
            hold_steps: 100_000,
            decay: 0.99999,
        };
        // Short spans keep masked tones predictable from their context,
        // and noiseless argmax selection keeps targets stable within the
        // few hundred steps a desk run affords.
        objective.mask = crate::pretrain::MaskSpec {
            start_prob: 0.15,
            span: 3,
        };
        objective.fixed_temperature = Some(0.5);
        objective.gumbel_noise = false;
        PretrainRunConfig {
            steps: 300,
            batch_size: 8,
            objective,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecodeRunConfig {
    pub beam_width: usize,
    pub lm_weight: f64,
    pub insertion_bonus: f64,
    pub n_best: usize,
    pub lm_order: usize,
}

impl Default for DecodeRunConfig {
    fn default() -> Self {
        DecodeRunConfig {
            beam_width: 16,
            lm_weight: 1.5,
            insertion_bonus: 0.5,
            n_best: 1,
            lm_order: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        cfg.validate()
            .map_err(|message| ConfigError::Invalid {
                path: path.display().to_string(),
                message,
            })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.encoder.validate().map_err(|e| e.to_string())?;
        if let CorpusConfig::Synthetic(s) = &self.corpus {
            if s.units.len() < 2 {
                return Err("synthetic corpus needs at least 2 units".into());
            }
            if s.train_utts == 0 || s.units_per_utt == 0 {
                return Err("synthetic corpus needs train utterances and units per utterance".into());
            }
        }
        if self.quantizer.groups == 0
            || self.quantizer.entries_per_group < 2
            || self.quantizer.quantized_dim % self.quantizer.groups != 0
        {
            return Err(format!(
                "bad quantizer config {:?}",
                self.quantizer
            ));
        }
        if self.quantizer.quantized_dim != self.encoder.model_dim {
            return Err(format!(
                "quantized_dim {} must equal model_dim {} so contrastive cosines are defined",
                self.quantizer.quantized_dim, self.encoder.model_dim
            ));
        }
        if self.decode.beam_width == 0 || self.decode.n_best > self.decode.beam_width {
            return Err("need beam_width >= 1 and n_best <= beam_width".into());
        }
        if self.decode.lm_weight < 0.0 {
            return Err("lm_weight must be >= 0".into());
        }
        if self.decode.lm_order == 0 {
            return Err("lm_order must be >= 1".into());
        }
        if self.finetune.batch_size == 0 || self.pretrain.batch_size == 0 {
            return Err("batch sizes must be >= 1".into());
        }
        Ok(())
    }

    /// A small, fast configuration used as the starting point for the
    /// toy experiments.
    pub fn toy(seed: u64, out_dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            out_dir: out_dir.to_path_buf(),
            corpus: CorpusConfig::Synthetic(SyntheticCorpusConfig::default()),
            unit_kind: UnitKind::Char,
            encoder: EncoderConfig::default(),
            quantizer: QuantizerConfig::default(),
            pretrain: PretrainRunConfig::default(),
            finetune: FinetuneConfig::default(),
            decode: DecodeRunConfig::default(),
        }
    }
}
