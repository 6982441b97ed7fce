//! Fine-tuning driver for both task heads: CTC over the context frames,
//! or teacher-forced cross-entropy through the attention decoder. The
//! initialization source is configurable so random, supervised-converged,
//! and self-supervised starts all run through the same path.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, CONFIG_ENTRY};
use crate::ctc::{self, CtcError};
use crate::model::{
    assign_params, collect_params, AcousticModel, AttnDecoder, AttnDecoderConfig, CtcHead,
    EncoderConfig, ModelError,
};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::quantizer::Codebook;
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::units::{InventorySpec, UnitInventory};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint {path} has no embedded config entry")]
    NoConfig { path: String },
    #[error("checkpoint {path} config does not parse: {message}")]
    BadConfig { path: String, message: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("transcript for {utt_id} encodes to an empty target")]
    EmptyTarget { utt_id: String },
}

pub type Result<T> = std::result::Result<T, FinetuneError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Ctc,
    AttnDecoder,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub branch: Branch,
    pub decoder: AttnDecoderConfig,
    pub freeze_encoder: bool,
    /// Freeze the context network too, leaving only the head trainable
    /// (linear probing).
    #[serde(default)]
    pub freeze_context: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            branch: Branch::Ctc,
            decoder: AttnDecoderConfig::default(),
            freeze_encoder: true,
            freeze_context: false,
            steps: 2000,
            batch_size: 4,
            lr: LrSchedule {
                warmup_steps: 100,
                peak: 4e-3,
                hold_steps: 10_000,
                decay: 0.99999,
            },
        }
    }
}

/// A trained recognizer: backbone, one head, and its unit inventory.
#[derive(Debug, Clone)]
pub struct AsrModel {
    pub model: AcousticModel,
    pub head: AsrHead,
    pub inventory: UnitInventory,
}

#[derive(Debug, Clone)]
pub enum AsrHead {
    Ctc(CtcHead),
    Attn(AttnDecoder),
}

impl AsrModel {
    pub fn new_random(
        cfg: &EncoderConfig,
        fcfg: &FinetuneConfig,
        inventory: UnitInventory,
        rng: &mut Prng,
    ) -> Result<AsrModel> {
        let model = AcousticModel::new(cfg, rng)?;
        let head = new_head(cfg, fcfg, &inventory, rng)?;
        Ok(AsrModel {
            model,
            head,
            inventory,
        })
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.model.params(out);
        match &self.head {
            AsrHead::Ctc(h) => h.params(out),
            AsrHead::Attn(d) => d.params(out),
        }
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.model.params_mut(out);
        match &mut self.head {
            AsrHead::Ctc(h) => h.params_mut(out),
            AsrHead::Attn(d) => d.params_mut(out),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut named = Vec::new();
        self.params(&mut named);
        named.iter().map(|(_, t)| t.len()).sum()
    }

    /// Per-frame CTC log-probabilities for a 16 kHz waveform.
    pub fn ctc_log_probs(&self, samples: &[f64]) -> Result<Tensor> {
        let AsrHead::Ctc(head) = &self.head else {
            return Err(FinetuneError::Model(ModelError::BadConfig(
                "model has no CTC head".into(),
            )));
        };
        let (z, _) = self.model.encode(samples, 16000)?;
        let (c, _) = self.model.contextualize(&z.frames, None)?;
        let (lp, _) = head.forward(&c.frames);
        Ok(lp)
    }

    /// Attention-decoder transcription (beam 4, length-normalized).
    pub fn attn_decode(&self, samples: &[f64], beam_width: usize) -> Result<Vec<usize>> {
        let AsrHead::Attn(dec) = &self.head else {
            return Err(FinetuneError::Model(ModelError::BadConfig(
                "model has no attention decoder".into(),
            )));
        };
        let (z, _) = self.model.encode(samples, 16000)?;
        let (c, _) = self.model.contextualize(&z.frames, None)?;
        Ok(dec.beam_decode(&c.frames, beam_width)?)
    }
}

fn new_head(
    cfg: &EncoderConfig,
    fcfg: &FinetuneConfig,
    inventory: &UnitInventory,
    rng: &mut Prng,
) -> Result<AsrHead> {
    Ok(match fcfg.branch {
        Branch::Ctc => AsrHead::Ctc(CtcHead::new(cfg.model_dim, inventory.unit_count(), rng)),
        Branch::AttnDecoder => AsrHead::Attn(AttnDecoder::new(
            &fcfg.decoder,
            cfg.model_dim,
            cfg.attention_heads,
            cfg.ff_dim,
            inventory.unit_count(),
            rng,
        )?),
    })
}

// ----- training -------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainUtt {
    pub utt_id: String,
    pub samples: Vec<f64>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LossRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub skipped_utts: usize,
}

pub fn loss_log_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,lr,loss,skipped_utts\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{:.6},{}", r.step, r.lr, r.loss, r.skipped_utts);
    }
    out
}

/// Mean teacher-forced cross-entropy and its log-prob gradient.
pub fn cross_entropy(log_probs: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let n = targets.len();
    assert_eq!(log_probs.rows(), n);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(log_probs.dims());
    let v = log_probs.cols();
    for (i, &t) in targets.iter().enumerate() {
        loss -= log_probs.at2(i, t) / n as f64;
        grad.values_mut()[i * v + t] = -1.0 / n as f64;
    }
    (loss, grad)
}

/// One fine-tuning step over a batch; returns (mean loss, skipped count).
pub fn finetune_step(
    asr: &mut AsrModel,
    batch: &[&TrainUtt],
    cfg: &FinetuneConfig,
    opt: &mut Adam,
    step: usize,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut pending: Vec<Box<dyn FnOnce(&mut AsrModel, f64)>> = Vec::new();

    for utt in batch {
        if utt.target.is_empty() {
            return Err(FinetuneError::EmptyTarget {
                utt_id: utt.utt_id.clone(),
            });
        }
        let (z, enc_cache) = match asr.model.encode(&utt.samples, 16000) {
            Ok(ok) => ok,
            Err(ModelError::InputTooShort { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (c, ctx_cache) = asr.model.contextualize(&z.frames, None)?;
        match &asr.head {
            AsrHead::Ctc(head) => {
                let (lp, head_cache) = head.forward(&c.frames);
                match ctc::ctc_loss(&lp, &utt.target) {
                    Ok((loss, dlp)) => {
                        total += loss;
                        used += 1;
                        pending.push(Box::new(move |asr: &mut AsrModel, scale: f64| {
                            let mut dlp = dlp;
                            for v in dlp.values_mut() {
                                *v *= scale;
                            }
                            let AsrHead::Ctc(head) = &mut asr.head else { unreachable!() };
                            let dc = head.backward(&head_cache, &dlp);
                            let dz = asr.model.contextualize_backward(&ctx_cache, &dc);
                            asr.model.encode_backward(&enc_cache, &dz);
                        }));
                    }
                    Err(CtcError::Infeasible { .. }) => {
                        skipped += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            AsrHead::Attn(dec) => {
                // Teacher forcing: inputs [BOS, y..], targets [y.., EOS].
                let mut inputs = Vec::with_capacity(utt.target.len() + 1);
                inputs.push(dec.bos());
                let mut targets = Vec::with_capacity(utt.target.len() + 1);
                for &u in &utt.target {
                    inputs.push(dec.unit_to_token(u));
                    targets.push(dec.unit_to_token(u));
                }
                targets.push(dec.eos());
                if inputs.len() > dec.max_len {
                    skipped += 1;
                    continue;
                }
                let (lp, dec_cache) = dec.forward(&inputs, &c.frames)?;
                let (loss, dlp) = cross_entropy(&lp, &targets);
                total += loss;
                used += 1;
                pending.push(Box::new(move |asr: &mut AsrModel, scale: f64| {
                    let mut dlp = dlp;
                    for v in dlp.values_mut() {
                        *v *= scale;
                    }
                    let AsrHead::Attn(dec) = &mut asr.head else { unreachable!() };
                    let dmem = dec.backward(&dec_cache, &dlp);
                    let dz = asr.model.contextualize_backward(&ctx_cache, &dmem);
                    asr.model.encode_backward(&enc_cache, &dz);
                }));
            }
        }
    }

    if used == 0 {
        return Ok((f64::NAN, skipped));
    }
    let mean = total / used as f64;
    if !mean.is_finite() {
        return Err(FinetuneError::NonFiniteLoss { step });
    }
    let scale = 1.0 / used as f64;
    for run in pending {
        run(asr, scale);
    }

    let lr = cfg.lr.lr(step + 1);
    let freeze_enc = cfg.freeze_encoder;
    let freeze_ctx = cfg.freeze_context;
    let mut params = Vec::new();
    asr.params_mut(&mut params);
    opt.step(lr, &mut params, &move |name: &str| {
        !((freeze_enc && name.starts_with("encoder."))
            || (freeze_ctx && name.starts_with("ctx.")))
    });
    Ok((mean, skipped))
}

/// Full fine-tuning loop over a fixed utterance list with deterministic
/// round-robin batches.
pub fn finetune(
    asr: &mut AsrModel,
    data: &[TrainUtt],
    cfg: &FinetuneConfig,
) -> Result<Vec<LossRow>> {
    let mut opt = Adam::new(AdamConfig::default());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&TrainUtt> = (0..cfg.batch_size.min(data.len()))
            .map(|i| &data[(step * cfg.batch_size + i) % data.len()])
            .collect();
        let (loss, skipped) = finetune_step(asr, &batch, cfg, &mut opt, step)?;
        log.push(LossRow {
            step,
            lr: cfg.lr.lr(step + 1),
            loss,
            skipped_utts: skipped,
        });
    }
    Ok(log)
}

/// CTC training from random init on labeled data, used as the supervised
/// pretraining arm. The returned model's checkpoint loads into `finetune`
/// with the head re-initialized whenever the inventory changes.
pub fn supervised_pretrain(
    enc_cfg: &EncoderConfig,
    data: &[TrainUtt],
    inventory: UnitInventory,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(AsrModel, Vec<LossRow>)> {
    let mut rng = Prng::new(seed);
    let mut asr = AsrModel::new_random(enc_cfg, cfg, inventory, &mut rng)?;
    let log = finetune(&mut asr, data, cfg)?;
    Ok((asr, log))
}

// ----- checkpoints --------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct AsrMeta {
    kind: String,
    encoder: EncoderConfig,
    branch: Branch,
    decoder: Option<AttnDecoderConfig>,
    inventory: InventorySpec,
}

pub fn save_asr(asr: &AsrModel, path: &Path) -> Result<()> {
    let meta = AsrMeta {
        kind: "asr".to_string(),
        encoder: asr.model.cfg.clone(),
        branch: match asr.head {
            AsrHead::Ctc(_) => Branch::Ctc,
            AsrHead::Attn(_) => Branch::AttnDecoder,
        },
        decoder: match &asr.head {
            AsrHead::Attn(d) => Some(AttnDecoderConfig {
                layers: d.layers.len(),
                max_len: d.max_len,
            }),
            AsrHead::Ctc(_) => None,
        },
        inventory: InventorySpec::from(&asr.inventory),
    };
    let mut named = Vec::new();
    asr.params(&mut named);
    let mut entries = collect_params(&named);
    entries.insert(
        0,
        (
            CONFIG_ENTRY.to_string(),
            checkpoint::string_to_tensor(&serde_json::to_string(&meta).expect("meta json")),
        ),
    );
    checkpoint::save(path, &entries)?;
    Ok(())
}

pub fn load_asr(path: &Path) -> Result<AsrModel> {
    let entries = checkpoint::load(path)?;
    let meta_tensor = checkpoint::find(&entries, CONFIG_ENTRY).ok_or(FinetuneError::NoConfig {
        path: path.display().to_string(),
    })?;
    let meta_text = checkpoint::tensor_to_string(meta_tensor).ok_or(FinetuneError::NoConfig {
        path: path.display().to_string(),
    })?;
    let meta: AsrMeta = serde_json::from_str(&meta_text).map_err(|e| FinetuneError::BadConfig {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut rng = Prng::new(0);
    let fcfg = FinetuneConfig {
        branch: meta.branch,
        decoder: meta.decoder.clone().unwrap_or_default(),
        ..FinetuneConfig::default()
    };
    let inventory = meta.inventory.build();
    let mut asr = AsrModel::new_random(&meta.encoder, &fcfg, inventory, &mut rng)?;
    let mut target = Vec::new();
    asr.params_mut(&mut target);
    assign_params(&mut target, &entries)?;
    Ok(asr)
}

/// Initialization sources for fine-tuning.
pub enum InitSource<'a> {
    Random,
    /// Any checkpoint holding `encoder.*` and `ctx.*` tensors: a pretrain
    /// checkpoint or a converged supervised model.
    Checkpoint(&'a Path),
    /// Load only the conv feature encoder, leaving the context network
    /// fresh. At desk scale the contrastive objective supervises masked
    /// positions only, so the encoder transfers much better than the
    /// context net does.
    EncoderOnly(&'a Path),
}

/// Build a model for fine-tuning: backbone from the init source, head
/// fresh unless the checkpoint carries a matching head for the same
/// inventory.
pub fn init_for_finetune(
    enc_cfg: &EncoderConfig,
    fcfg: &FinetuneConfig,
    inventory: &UnitInventory,
    init: InitSource,
    seed: u64,
) -> Result<AsrModel> {
    let mut rng = Prng::new(seed);
    let mut asr = AsrModel::new_random(enc_cfg, fcfg, inventory.clone(), &mut rng)?;
    if let InitSource::EncoderOnly(path) = init {
        let entries = checkpoint::load(path)?;
        let mut backbone = Vec::new();
        asr.model.params_mut(&mut backbone);
        let mut encoder_only: Vec<(String, &mut Tensor)> = backbone
            .into_iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .collect();
        assign_params(&mut encoder_only, &entries)?;
        return Ok(asr);
    }
    if let InitSource::Checkpoint(path) = init {
        let entries = checkpoint::load(path)?;
        // Backbone tensors must all be present.
        let mut backbone = Vec::new();
        asr.model.params_mut(&mut backbone);
        assign_params(&mut backbone, &entries)?;
        // Head tensors load only when the checkpoint inventory and branch
        // match; otherwise the fresh head stands (transfer re-init).
        if let Some(meta_tensor) = checkpoint::find(&entries, CONFIG_ENTRY) {
            if let Some(text) = checkpoint::tensor_to_string(meta_tensor) {
                if let Ok(meta) = serde_json::from_str::<AsrMeta>(&text) {
                    let same_inventory = meta.inventory == InventorySpec::from(inventory);
                    let same_branch = meta.branch == fcfg.branch;
                    if same_inventory && same_branch {
                        let mut head_params = Vec::new();
                        match &mut asr.head {
                            AsrHead::Ctc(h) => h.params_mut(&mut head_params),
                            AsrHead::Attn(d) => d.params_mut(&mut head_params),
                        }
                        assign_params(&mut head_params, &entries)?;
                    }
                }
            }
        }
    }
    Ok(asr)
}

/// Meta for self-supervised checkpoints (backbone + quantizer).
#[derive(Debug, Serialize, Deserialize)]
struct PretrainMeta {
    kind: String,
    encoder: EncoderConfig,
    groups: usize,
    entries_per_group: usize,
    quantized_dim: usize,
}

pub fn save_pretrained(
    model: &AcousticModel,
    codebook: &Codebook,
    path: &Path,
) -> Result<()> {
    let meta = PretrainMeta {
        kind: "pretrain".to_string(),
        encoder: model.cfg.clone(),
        groups: codebook.groups,
        entries_per_group: codebook.entries_per_group,
        quantized_dim: codebook.quantized_dim(),
    };
    let mut named = Vec::new();
    model.params(&mut named);
    codebook.params("quantizer", &mut named);
    let mut entries = collect_params(&named);
    entries.insert(
        0,
        (
            CONFIG_ENTRY.to_string(),
            checkpoint::string_to_tensor(&serde_json::to_string(&meta).expect("meta json")),
        ),
    );
    checkpoint::save(path, &entries)?;
    Ok(())
}

pub fn load_pretrained(path: &Path) -> Result<(AcousticModel, Codebook)> {
    let entries = checkpoint::load(path)?;
    let meta_tensor = checkpoint::find(&entries, CONFIG_ENTRY).ok_or(FinetuneError::NoConfig {
        path: path.display().to_string(),
    })?;
    let text = checkpoint::tensor_to_string(meta_tensor).ok_or(FinetuneError::NoConfig {
        path: path.display().to_string(),
    })?;
    let meta: PretrainMeta = serde_json::from_str(&text).map_err(|e| FinetuneError::BadConfig {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut rng = Prng::new(0);
    let mut model = AcousticModel::new(&meta.encoder, &mut rng)?;
    let mut codebook = Codebook::new(
        meta.encoder.latent_dim(),
        meta.quantized_dim,
        meta.groups,
        meta.entries_per_group,
        &mut rng,
    )
    .map_err(|e| FinetuneError::BadConfig {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut target = Vec::new();
    model.params_mut(&mut target);
    codebook.params_mut("quantizer", &mut target);
    assign_params(&mut target, &entries)?;
    Ok((model, codebook))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::build_char_inventory;

    fn toy_enc_cfg() -> EncoderConfig {
        EncoderConfig {
            conv_layers: vec![(8, 4, 3), (8, 3, 2)],
            context_layers: 1,
            model_dim: 16,
            attention_heads: 4,
            ff_dim: 24,
            pos_kernel: 5,
        }
    }

    fn toy_inventory() -> UnitInventory {
        build_char_inventory(&["abcd".to_string()]).unwrap()
    }

    fn toy_fcfg(branch: Branch) -> FinetuneConfig {
        FinetuneConfig {
            branch,
            decoder: AttnDecoderConfig {
                layers: 1,
                max_len: 12,
            },
            freeze_encoder: true,
            steps: 3,
            batch_size: 2,
            lr: LrSchedule {
                warmup_steps: 2,
                peak: 1e-3,
                hold_steps: 100,
                decay: 0.9999,
            },
        }
    }

    fn toy_data(rng: &mut Prng) -> Vec<TrainUtt> {
        (0..4)
            .map(|i| TrainUtt {
                utt_id: format!("u{i}"),
                samples: (0..60).map(|_| rng.normal() * 0.2).collect(),
                target: vec![1 + i % 4, 1 + (i + 1) % 4],
            })
            .collect()
    }

    #[test]
    fn uniform_ce_is_log_vocab() {
        // V+2 = 6 classes, uniform rows.
        let lp = Tensor::filled(&[4, 6], -(6.0f64).ln());
        let (loss, _) = cross_entropy(&lp, &[0, 1, 2, 3]);
        assert!((loss - (6.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn initial_ce_is_near_uniform() {
        // Small head init keeps the first teacher-forced loss within 5%
        // of ln(V+2).
        let mut rng = Prng::new(541);
        let cfg = toy_enc_cfg();
        let fcfg = toy_fcfg(Branch::AttnDecoder);
        let asr = AsrModel::new_random(&cfg, &fcfg, toy_inventory(), &mut rng).unwrap();
        let AsrHead::Attn(dec) = &asr.head else { unreachable!() };
        let wave: Vec<f64> = (0..60).map(|_| rng.normal() * 0.2).collect();
        let (z, _) = asr.model.encode(&wave, 16000).unwrap();
        let (c, _) = asr.model.contextualize(&z.frames, None).unwrap();
        let inputs = vec![dec.bos(), 0, 1];
        let targets = vec![0usize, 1, dec.eos()];
        let (lp, _) = dec.forward(&inputs, &c.frames).unwrap();
        let (loss, _) = cross_entropy(&lp, &targets);
        let uniform = (6.0f64).ln();
        assert!(
            (loss - uniform).abs() / uniform < 0.05,
            "init CE {loss} vs ln(V+2) {uniform}"
        );
    }

    #[test]
    fn frozen_encoder_tensors_do_not_move() {
        let mut rng = Prng::new(547);
        let cfg = toy_enc_cfg();
        let fcfg = toy_fcfg(Branch::Ctc);
        let mut asr = AsrModel::new_random(&cfg, &fcfg, toy_inventory(), &mut rng).unwrap();
        let before: Vec<Tensor> = {
            let mut named = Vec::new();
            asr.params(&mut named);
            named
                .iter()
                .filter(|(n, _)| n.starts_with("encoder."))
                .map(|(_, t)| (*t).clone())
                .collect()
        };
        let data = toy_data(&mut rng);
        finetune(&mut asr, &data, &fcfg).unwrap();
        let mut named = Vec::new();
        asr.params(&mut named);
        let after: Vec<&Tensor> = named
            .iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .map(|(_, t)| *t)
            .collect();
        for (b, a) in before.iter().zip(after) {
            assert_eq!(b.values(), a.values());
        }
        // And the context net did move.
        let ctx_moved = {
            let mut fresh = AsrModel::new_random(&cfg, &fcfg, toy_inventory(), &mut Prng::new(547))
                .unwrap();
            let mut n1 = Vec::new();
            fresh.params_mut(&mut n1);
            let mut n2 = Vec::new();
            asr.params(&mut n2);
            n1.iter()
                .zip(n2.iter())
                .any(|((name, t1), (_, t2))| name.starts_with("ctx.") && t1.values() != t2.values())
        };
        assert!(ctx_moved);
    }

    #[test]
    fn unfrozen_encoder_moves() {
        let mut rng = Prng::new(557);
        let cfg = toy_enc_cfg();
        let mut fcfg = toy_fcfg(Branch::Ctc);
        fcfg.freeze_encoder = false;
        let mut asr = AsrModel::new_random(&cfg, &fcfg, toy_inventory(), &mut rng).unwrap();
        let before: Vec<f64> = asr.model.encoder.layers[0].kernels.values().to_vec();
        let data = toy_data(&mut rng);
        finetune(&mut asr, &data, &fcfg).unwrap();
        assert_ne!(before, asr.model.encoder.layers[0].kernels.values());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut rng = Prng::new(563);
            let cfg = toy_enc_cfg();
            let fcfg = toy_fcfg(Branch::Ctc);
            let mut asr = AsrModel::new_random(&cfg, &fcfg, toy_inventory(), &mut rng).unwrap();
            let data = toy_data(&mut rng);
            let log = finetune(&mut asr, &data, &fcfg).unwrap();
            log.iter().map(|r| r.loss).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn param_counts_order_by_head_size() {
        let mut rng = Prng::new(569);
        let cfg = toy_enc_cfg();
        let inv = toy_inventory();
        let ctc = AsrModel::new_random(&cfg, &toy_fcfg(Branch::Ctc), inv.clone(), &mut rng).unwrap();
        let mut one = toy_fcfg(Branch::AttnDecoder);
        one.decoder.layers = 1;
        let attn1 = AsrModel::new_random(&cfg, &one, inv.clone(), &mut rng).unwrap();
        let mut four = toy_fcfg(Branch::AttnDecoder);
        four.decoder.layers = 4;
        let attn4 = AsrModel::new_random(&cfg, &four, inv, &mut rng).unwrap();
        assert!(ctc.param_count() < attn1.param_count());
        assert!(attn1.param_count() < attn4.param_count());
    }

    #[test]
    fn checkpoint_round_trip_and_transfer_reinit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mssl");
        let mut rng = Prng::new(571);
        let cfg = toy_enc_cfg();
        let fcfg = toy_fcfg(Branch::Ctc);
        let asr = AsrModel::new_random(&cfg, &fcfg, toy_inventory(), &mut rng).unwrap();
        save_asr(&asr, &path).unwrap();

        // Same inventory: head tensors load too.
        let same =
            init_for_finetune(&cfg, &fcfg, &toy_inventory(), InitSource::Checkpoint(&path), 99)
                .unwrap();
        let (AsrHead::Ctc(h0), AsrHead::Ctc(h1)) = (&asr.head, &same.head) else {
            unreachable!()
        };
        assert_eq!(h0.proj.w.values(), h1.proj.w.values());

        // Disjoint inventory: backbone loads, head re-initializes.
        let other_inv = build_char_inventory(&["wxyz".to_string()]).unwrap();
        let moved =
            init_for_finetune(&cfg, &fcfg, &other_inv, InitSource::Checkpoint(&path), 99).unwrap();
        assert_eq!(
            asr.model.encoder.layers[0].kernels.values(),
            moved.model.encoder.layers[0].kernels.values()
        );
        let AsrHead::Ctc(h2) = &moved.head else { unreachable!() };
        assert_ne!(h0.proj.w.values(), h2.proj.w.values());
    }

    #[test]
    fn loaded_asr_model_matches_saved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("asr.mssl");
        let mut rng = Prng::new(577);
        let asr = AsrModel::new_random(
            &toy_enc_cfg(),
            &toy_fcfg(Branch::Ctc),
            toy_inventory(),
            &mut rng,
        )
        .unwrap();
        save_asr(&asr, &path).unwrap();
        let back = load_asr(&path).unwrap();
        let wave: Vec<f64> = (0..60).map(|i| (i as f64 * 0.1).sin() * 0.2).collect();
        let a = asr.ctc_log_probs(&wave).unwrap();
        let b = back.ctc_log_probs(&wave).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(back.inventory, asr.inventory);
    }
}
