//! Self-supervised criterion: span masking of the latent frames,
//! contrastive classification of each masked frame's quantized target
//! against distractors drawn from the other masked positions, and a
//! diversity term keeping the codebook alive.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{AcousticModel, ModelError};
use crate::optim::{Adam, LrSchedule};
use crate::quantizer::{
    self, codebook_perplexity, diversity_loss, Codebook, QuantizeMode, QuantizerError,
};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("cannot mask {span} frames out of {frames}")]
    TooShortToMask { frames: usize, span: usize },
    #[error("mask start probability must be in (0,1), got {0}")]
    BadMaskProb(f64),
    #[error("no masked positions to contrast")]
    NoMaskedPositions,
    #[error("non-finite loss at step {step}: contrastive={contrastive}, diversity={diversity}")]
    NonFiniteLoss {
        step: usize,
        contrastive: f64,
        diversity: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
}

pub type Result<T> = std::result::Result<T, PretrainError>;

/// Span masking: each frame starts a span of `span` frames with
/// probability `start_prob`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub start_prob: f64,
    pub span: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            start_prob: 0.065,
            span: 10,
        }
    }
}

/// Sorted masked frame indices; at least one span is always masked.
pub fn sample_mask(frames: usize, spec: &MaskSpec, rng: &mut Prng) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&spec.start_prob) || spec.start_prob == 0.0 {
        return Err(PretrainError::BadMaskProb(spec.start_prob));
    }
    if frames < spec.span || spec.span == 0 {
        return Err(PretrainError::TooShortToMask {
            frames,
            span: spec.span,
        });
    }
    let mut masked = vec![false; frames];
    for start in 0..frames {
        if rng.uniform() < spec.start_prob {
            for slot in masked.iter_mut().skip(start).take(spec.span) {
                *slot = true;
            }
        }
    }
    if !masked.iter().any(|&m| m) {
        let start = rng.below(frames - spec.span + 1);
        for slot in masked.iter_mut().skip(start).take(spec.span) {
            *slot = true;
        }
    }
    Ok(masked
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect())
}

/// Distractor indices per anchor, drawn from the other masked positions:
/// without replacement when enough exist, with replacement otherwise.
pub fn sample_distractors(anchors: usize, k: usize, rng: &mut Prng) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(anchors);
    for i in 0..anchors {
        let candidates: Vec<usize> = (0..anchors).filter(|&j| j != i).collect();
        if candidates.is_empty() {
            out.push(Vec::new());
            continue;
        }
        let set = if candidates.len() >= k {
            rng.sample_distinct(candidates.len(), k)
                .into_iter()
                .map(|j| candidates[j])
                .collect()
        } else {
            (0..k).map(|_| candidates[rng.below(candidates.len())]).collect()
        };
        out.push(set);
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb), na, nb)
}

/// InfoNCE over cosine similarities: mean over anchors i of
/// -log( exp(cos(c_i, q_i)/kappa) / sum_{j in {i} u D_i} exp(cos(c_i, q_j)/kappa) ).
///
/// `q` may have more rows than `c` (extra candidate rows); anchor i is
/// always scored against q_i as its positive. Returns (loss, dc, dq).
pub fn contrastive_loss(
    c: &Tensor,
    q: &Tensor,
    distractors: &[Vec<usize>],
    kappa: f64,
) -> Result<(f64, Tensor, Tensor)> {
    let anchors = c.dims()[0];
    if anchors == 0 {
        return Err(PretrainError::NoMaskedPositions);
    }
    assert!(kappa > 0.0, "kappa must be positive");
    assert!(q.dims()[0] >= anchors, "q must cover every anchor");
    let mut loss = 0.0;
    let mut dc = Tensor::zeros(c.dims());
    let mut dq = Tensor::zeros(q.dims());
    let inv_n = 1.0 / anchors as f64;

    for i in 0..anchors {
        // Candidate list: positive first, then distractors.
        let mut cand = Vec::with_capacity(1 + distractors[i].len());
        cand.push(i);
        cand.extend_from_slice(&distractors[i]);
        let ci = c.row(i);

        let mut sims = Vec::with_capacity(cand.len());
        let mut norms = Vec::with_capacity(cand.len());
        for &j in &cand {
            let (s, na, nb) = cosine(ci, q.row(j));
            sims.push(s / kappa);
            norms.push((na, nb));
        }
        let mx = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = sims.iter().map(|s| (s - mx).exp()).sum();
        let log_z = mx + z.ln();
        loss += (log_z - sims[0]) * inv_n;

        // d loss / d sim_k = (softmax_k - [k == 0]) / (kappa * anchors).
        for (k, &j) in cand.iter().enumerate() {
            let p = (sims[k] - log_z).exp();
            let dsim = (p - if k == 0 { 1.0 } else { 0.0 }) * inv_n / kappa;
            if dsim == 0.0 {
                continue;
            }
            let (na, nb) = norms[k];
            let qj = q.row(j);
            let cos = sims[k] * kappa;
            // d cos / d a = b/(|a||b|) - cos * a/|a|^2, symmetric in b.
            for d in 0..ci.len() {
                dc.values_mut()[i * ci.len() + d] +=
                    dsim * (qj[d] / (na * nb) - cos * ci[d] / (na * na));
                dq.values_mut()[j * ci.len() + d] +=
                    dsim * (ci[d] / (na * nb) - cos * qj[d] / (nb * nb));
            }
        }
    }
    Ok((loss, dc, dq))
}

// ----- the full pretraining step ------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub mask: MaskSpec,
    /// K distractors per masked position.
    pub distractors: usize,
    /// Contrastive temperature kappa.
    pub kappa: f64,
    /// Weight alpha of the diversity term.
    pub diversity_weight: f64,
    pub lr: LrSchedule,
    /// Fixed Gumbel temperature; None follows the anneal schedule.
    pub fixed_temperature: Option<f64>,
    /// Draw Gumbel noise for code selection. Desk-scale runs may turn
    /// this off so targets stabilize within a few hundred steps.
    pub gumbel_noise: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask: MaskSpec::default(),
            distractors: 20,
            kappa: 0.1,
            diversity_weight: 0.1,
            lr: LrSchedule::default(),
            fixed_temperature: None,
            gumbel_noise: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainLoss {
    pub contrastive: f64,
    pub diversity: f64,
    pub total: f64,
    pub codebook_ppl: Vec<f64>,
}

impl PretrainLoss {
    pub fn csv_header() -> &'static str {
        "step,lr,contrastive,diversity,total,codebook_ppl"
    }

    pub fn csv_row(&self, step: usize, lr: f64) -> String {
        let mut ppl = String::new();
        for (i, p) in self.codebook_ppl.iter().enumerate() {
            if i > 0 {
                ppl.push(';');
            }
            let _ = write!(ppl, "{p:.4}");
        }
        format!(
            "{step},{lr:e},{:.6},{:.6},{:.6},{ppl}",
            self.contrastive, self.diversity, self.total
        )
    }
}

/// One optimization step over a batch of raw waveforms. Gradients are
/// reduced in batch order, so the result is reproducible whatever the
/// thread count elsewhere.
pub fn pretrain_step(
    model: &mut AcousticModel,
    codebook: &mut Codebook,
    batch: &[(String, Vec<f64>)],
    cfg: &PretrainConfig,
    opt: &mut Adam,
    step: usize,
    seed: u64,
) -> Result<PretrainLoss> {
    assert!(!batch.is_empty(), "empty batch");
    let temperature = cfg
        .fixed_temperature
        .unwrap_or_else(|| quantizer::anneal_temperature(step));
    let scale = 1.0 / batch.len() as f64;
    let mut contrastive_total = 0.0;
    let mut diversity_total = 0.0;
    let mut all_probs: Vec<Tensor> = Vec::new();

    for (utt_id, samples) in batch {
        let mut rng = Prng::derive(seed.wrapping_add(step as u64), utt_id);
        let (z, enc_cache) = model.encode(samples, 16000)?;
        let t = z.len();
        let mask = sample_mask(t, &cfg.mask, &mut rng)?;
        let (ctx, ctx_cache) = model.contextualize(&z.frames, Some(&mask))?;

        let d_z = z.frames.dims()[1];
        let mut z_masked = Tensor::zeros(&[mask.len(), d_z]);
        for (row, &fi) in mask.iter().enumerate() {
            z_masked.row_mut(row).copy_from_slice(z.frames.row(fi));
        }
        let noise_rng = cfg.gumbel_noise.then_some(&mut rng);
        let (targets, q_cache) = quantizer::quantize(
            codebook,
            &z_masked,
            temperature,
            QuantizeMode::Hard,
            noise_rng,
        )?;

        let d = ctx.frames.dims()[1];
        let mut c_masked = Tensor::zeros(&[mask.len(), d]);
        for (row, &fi) in mask.iter().enumerate() {
            c_masked.row_mut(row).copy_from_slice(ctx.frames.row(fi));
        }

        let sets = sample_distractors(mask.len(), cfg.distractors, &mut rng);
        let (closs, dc_masked, dq) =
            contrastive_loss(&c_masked, &targets.vectors, &sets, cfg.kappa)?;
        let (dloss, dprobs) =
            diversity_loss(&targets.probs, codebook.groups, codebook.entries_per_group);
        contrastive_total += closs * scale;
        diversity_total += dloss * scale;
        all_probs.push(targets.probs.clone());

        // Backward, scaled by the batch mean.
        let mut d_ctx = Tensor::zeros(ctx.frames.dims());
        for (row, &fi) in mask.iter().enumerate() {
            for (dst, g) in d_ctx.row_mut(fi).iter_mut().zip(dc_masked.row(row)) {
                *dst = g * scale;
            }
        }
        let dz_ctx = model.contextualize_backward(&ctx_cache, &d_ctx);

        let mut dq_scaled = dq;
        for v in dq_scaled.values_mut() {
            *v *= scale;
        }
        let mut dprobs_scaled = dprobs;
        for v in dprobs_scaled.values_mut() {
            *v *= cfg.diversity_weight * scale;
        }
        let dz_masked =
            quantizer::quantize_backward(codebook, &targets, &q_cache, &dq_scaled, Some(&dprobs_scaled));

        let mut dz = dz_ctx;
        for (row, &fi) in mask.iter().enumerate() {
            for (dst, g) in dz.row_mut(fi).iter_mut().zip(dz_masked.row(row)) {
                *dst += g;
            }
        }
        model.encode_backward(&enc_cache, &dz);
    }

    let total = contrastive_total + cfg.diversity_weight * diversity_total;
    if !total.is_finite() {
        return Err(PretrainError::NonFiniteLoss {
            step,
            contrastive: contrastive_total,
            diversity: diversity_total,
        });
    }

    // Codebook usage over the whole batch.
    let rows: usize = all_probs.iter().map(|p| p.dims()[0]).sum();
    let width = codebook.groups * codebook.entries_per_group;
    let mut stacked = Tensor::zeros(&[rows, width]);
    let mut at = 0;
    for p in &all_probs {
        for r in 0..p.dims()[0] {
            stacked.row_mut(at).copy_from_slice(p.row(r));
            at += 1;
        }
    }
    let ppl = codebook_perplexity(&stacked, codebook.groups, codebook.entries_per_group);

    let lr = cfg.lr.lr(step + 1);
    let mut params = Vec::new();
    model.params_mut(&mut params);
    codebook.params_mut("quantizer", &mut params);
    opt.step(lr, &mut params, &(|_| true));

    Ok(PretrainLoss {
        contrastive: contrastive_total,
        diversity: diversity_total,
        total,
        codebook_ppl: ppl,
    })
}
