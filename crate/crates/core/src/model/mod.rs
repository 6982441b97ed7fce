//! The acoustic network: conv feature encoder (waveform to latent frames),
//! self-attention context network (frames to contextual vectors), and the
//! two task heads — a CTC projection and a label-synchronous attention
//! decoder.

mod decoder;
mod encoder;
pub mod layers;

pub use decoder::{AttnDecoder, AttnDecoderConfig, DecoderCache};
pub use encoder::{ConvEncoder, ConvEncoderCache};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Prng;
use crate::tensor::{self, log_softmax, log_softmax_backward, Tensor};

use layers::{Linear, LinearCache, LnCache, PosConv, PosConvCache};
use layers::{BlockCache, LayerNormAffine, TransformerBlock};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("waveform of {got} samples is shorter than the receptive field ({min})")]
    InputTooShort { got: usize, min: usize },
    #[error("mask index {index} out of range for {frames} frames")]
    MaskOutOfRange { index: usize, frames: usize },
    #[error("decoder prefix of {len} tokens reaches the maximum output length {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint tensor {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// (out_channels, kernel_width, stride) per conv layer.
    pub conv_layers: Vec<(usize, usize, usize)>,
    pub context_layers: usize,
    pub model_dim: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    /// Width of the convolutional positional embedding; 0 disables it.
    pub pos_kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // Seven conv layers composing stride 320 and receptive field 400
        // samples: 20 ms hop, 25 ms window at 16 kHz.
        EncoderConfig {
            conv_layers: vec![
                (16, 10, 5),
                (16, 3, 2),
                (16, 3, 2),
                (16, 3, 2),
                (16, 3, 2),
                (16, 2, 2),
                (16, 2, 2),
            ],
            context_layers: 2,
            model_dim: 32,
            attention_heads: 4,
            ff_dim: 64,
            pos_kernel: 9,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_layers.is_empty() {
            return Err(ModelError::BadConfig("needs at least one conv layer".into()));
        }
        for &(c, w, s) in &self.conv_layers {
            if c == 0 || w == 0 || s == 0 {
                return Err(ModelError::BadConfig(format!(
                    "conv layer ({c},{w},{s}) has a zero field"
                )));
            }
        }
        if self.model_dim == 0 || self.attention_heads == 0 {
            return Err(ModelError::BadConfig("model_dim and heads must be positive".into()));
        }
        if self.model_dim % self.attention_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.attention_heads
            )));
        }
        if self.pos_kernel != 0 && self.pos_kernel % 2 == 0 {
            return Err(ModelError::BadConfig("pos_kernel must be odd or 0".into()));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.conv_layers.last().map(|&(c, _, _)| c).unwrap_or(1)
    }
}

/// Composed (stride, receptive field) in input samples:
/// stride = prod(s_i), rf = 1 + sum_i (w_i - 1) * prod_{j<i} s_j.
pub fn frame_geometry(cfg: &EncoderConfig) -> (usize, usize) {
    let mut stride = 1usize;
    let mut rf = 1usize;
    for &(_, width, s) in &cfg.conv_layers {
        rf += (width - 1) * stride;
        stride *= s;
    }
    (stride, rf)
}

/// Frames produced for a waveform of `n` samples, None when too short.
pub fn frame_count(cfg: &EncoderConfig, n: usize) -> Option<usize> {
    let (stride, rf) = frame_geometry(cfg);
    if n < rf {
        None
    } else {
        Some((n - rf) / stride + 1)
    }
}

/// Latent frames with their geometry metadata.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Tensor,
    pub stride_samples: usize,
    pub receptive_field_samples: usize,
    pub sample_rate: u32,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Context-network output, same frame count as its source.
#[derive(Debug, Clone)]
pub struct ContextSequence {
    pub frames: Tensor,
}

// ----- acoustic model ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub cfg: EncoderConfig,
    pub encoder: ConvEncoder,
    pub proj: Linear,
    pub mask_embed: Tensor,
    pub pos_conv: Option<PosConv>,
    pub blocks: Vec<TransformerBlock>,
    pub final_ln: LayerNormAffine,
}

pub struct ContextCache {
    proj: LinearCache,
    masked: Vec<usize>,
    pos: Option<PosConvCache>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
}

impl AcousticModel {
    pub fn new(cfg: &EncoderConfig, rng: &mut Prng) -> Result<AcousticModel> {
        cfg.validate()?;
        let encoder = ConvEncoder::new(&cfg.conv_layers, rng);
        let d = cfg.model_dim;
        let proj = Linear::new(cfg.latent_dim(), d, rng);
        let mask_embed = Tensor::rand_uniform(&[d], 0.1, rng);
        let pos_conv = if cfg.pos_kernel > 0 {
            Some(PosConv::new(d, cfg.pos_kernel, rng))
        } else {
            None
        };
        let blocks = (0..cfg.context_layers)
            .map(|_| TransformerBlock::new(d, cfg.attention_heads, cfg.ff_dim, rng))
            .collect();
        Ok(AcousticModel {
            cfg: cfg.clone(),
            encoder,
            proj,
            mask_embed,
            pos_conv,
            blocks,
            final_ln: LayerNormAffine::new(d),
        })
    }

    /// Waveform to latent frames Z.
    pub fn encode(&self, samples: &[f64], sample_rate: u32) -> Result<(FrameSequence, ConvEncoderCache)> {
        let (stride, rf) = frame_geometry(&self.cfg);
        if samples.len() < rf {
            return Err(ModelError::InputTooShort {
                got: samples.len(),
                min: rf,
            });
        }
        let (frames, cache) = self.encoder.forward(samples);
        Ok((
            FrameSequence {
                frames,
                stride_samples: stride,
                receptive_field_samples: rf,
                sample_rate,
            },
            cache,
        ))
    }

    pub fn encode_backward(&mut self, cache: &ConvEncoderCache, d_frames: &Tensor) -> Vec<f64> {
        self.encoder.backward(cache, d_frames)
    }

    /// Latent frames to contextual vectors C. Masked positions have their
    /// projected vectors replaced by the learned mask embedding before any
    /// attention runs.
    pub fn contextualize(
        &self,
        z: &Tensor,
        mask: Option<&[usize]>,
    ) -> Result<(ContextSequence, ContextCache)> {
        let t = z.dims()[0];
        let d = self.cfg.model_dim;
        let (mut h, proj_cache) = self.proj.forward(z);
        let mut masked: Vec<usize> = Vec::new();
        if let Some(mask) = mask {
            for &i in mask {
                if i >= t {
                    return Err(ModelError::MaskOutOfRange { index: i, frames: t });
                }
            }
            masked = mask.to_vec();
            masked.sort_unstable();
            masked.dedup();
            for &i in &masked {
                h.row_mut(i).copy_from_slice(self.mask_embed.values());
            }
        }
        let (mut x, pos_cache) = match &self.pos_conv {
            Some(pc) => {
                let (p, c) = pc.forward(&h);
                (tensor::add(&h, &p).expect("pos add"), Some(c))
            }
            None => (h.clone(), None),
        };
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(&x);
            block_caches.push(c);
            x = y;
        }
        let (out, final_cache) = self.final_ln.forward(&x);
        debug_assert_eq!(out.dims(), &[t, d]);
        Ok((
            ContextSequence { frames: out },
            ContextCache {
                proj: proj_cache,
                masked,
                pos: pos_cache,
                blocks: block_caches,
                final_ln: final_cache,
            },
        ))
    }

    /// Backward through the context network; returns dZ. Gradients at
    /// masked positions flow into the mask embedding instead of Z.
    pub fn contextualize_backward(&mut self, cache: &ContextCache, d_out: &Tensor) -> Tensor {
        let mut dx = self.final_ln.backward(&cache.final_ln, d_out);
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            dx = block.backward(bc, &dx);
        }
        let mut dh = match (&mut self.pos_conv, &cache.pos) {
            (Some(pc), Some(pcache)) => {
                let d_through_conv = pc.backward(pcache, &dx);
                tensor::add(&dx, &d_through_conv).expect("pos grad")
            }
            _ => dx,
        };
        if !cache.masked.is_empty() {
            let d = self.cfg.model_dim;
            let mut dm = Tensor::zeros(&[d]);
            for &i in &cache.masked {
                for (slot, g) in dm.values_mut().iter_mut().zip(dh.row(i)) {
                    *slot += g;
                }
                dh.row_mut(i).fill(0.0);
            }
            self.mask_embed.accumulate_grad(&dm);
        }
        self.proj.backward(&cache.proj, &dh)
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.encoder.params("encoder", out);
        self.proj.params("ctx.proj", out);
        out.push(("ctx.mask_embed".to_string(), &self.mask_embed));
        if let Some(pc) = &self.pos_conv {
            pc.params("ctx.pos", out);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("ctx.block{i}"), out);
        }
        self.final_ln.params("ctx.final_ln", out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.encoder.params_mut("encoder", out);
        self.proj.params_mut("ctx.proj", out);
        out.push(("ctx.mask_embed".to_string(), &mut self.mask_embed));
        if let Some(pc) = &mut self.pos_conv {
            pc.params_mut("ctx.pos", out);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("ctx.block{i}"), out);
        }
        self.final_ln.params_mut("ctx.final_ln", out);
    }
}

// ----- CTC head -------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CtcHead {
    pub proj: Linear,
}

pub struct CtcHeadCache {
    proj: LinearCache,
    log_probs: Tensor,
}

impl CtcHead {
    /// `inventory_size` is V, the non-blank unit count; the head projects
    /// to V+1 with column 0 as blank.
    pub fn new(model_dim: usize, inventory_size: usize, rng: &mut Prng) -> CtcHead {
        CtcHead {
            proj: Linear::new_head(model_dim, inventory_size + 1, rng),
        }
    }

    pub fn vocab_with_blank(&self) -> usize {
        self.proj.out_dim()
    }

    /// Per-frame log-probabilities over blank + units, rows sum to one.
    pub fn forward(&self, c: &Tensor) -> (Tensor, CtcHeadCache) {
        let (logits, proj) = self.proj.forward(c);
        let log_probs = log_softmax(&logits, 1).expect("ctc head log_softmax");
        (
            log_probs.clone(),
            CtcHeadCache { proj, log_probs },
        )
    }

    pub fn backward(&mut self, cache: &CtcHeadCache, d_log_probs: &Tensor) -> Tensor {
        let d_logits = log_softmax_backward(&cache.log_probs, d_log_probs, 1);
        self.proj.backward(&cache.proj, &d_logits)
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.proj.params("ctc_head", out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.proj.params_mut("ctc_head", out);
    }
}

// ----- checkpoint plumbing -----------------------------------------------------------

pub fn collect_params(params: &[(String, &Tensor)]) -> Vec<(String, Tensor)> {
    params.iter().map(|(n, t)| (n.clone(), (*t).clone())).collect()
}

/// Assign stored tensors into the model by name; unknown names in the
/// checkpoint are ignored so bundles can carry extra sections.
pub fn assign_params(
    params: &mut [(String, &mut Tensor)],
    entries: &[(String, Tensor)],
) -> Result<()> {
    for (name, tensor) in params.iter_mut() {
        let found = entries
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
        if found.1.dims() != tensor.dims() {
            return Err(ModelError::ShapeMismatch {
                name: name.clone(),
                got: found.1.dims().to_vec(),
                expected: tensor.dims().to_vec(),
            });
        }
        **tensor = found.1.clone();
    }
    Ok(())
}

pub fn zero_grads(params: &mut [(String, &mut Tensor)]) {
    for (_, t) in params.iter_mut() {
        t.zero_grad();
    }
}

pub fn param_count(params: &[(String, &Tensor)]) -> usize {
    params.iter().map(|(_, t)| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn default_geometry_is_20ms_stride_25ms_window() {
        let cfg = EncoderConfig::default();
        assert_eq!(frame_geometry(&cfg), (320, 400));
    }

    #[test]
    fn trivial_geometries() {
        let single = EncoderConfig {
            conv_layers: vec![(4, 1, 1)],
            ..EncoderConfig::default()
        };
        assert_eq!(frame_geometry(&single), (1, 1));
        let two = EncoderConfig {
            conv_layers: vec![(4, 3, 2), (4, 3, 2)],
            ..EncoderConfig::default()
        };
        assert_eq!(frame_geometry(&two), (4, 7));
    }

    fn toy_cfg() -> EncoderConfig {
        EncoderConfig {
            conv_layers: vec![(6, 4, 3), (8, 3, 2)],
            context_layers: 2,
            model_dim: 16,
            attention_heads: 4,
            ff_dim: 24,
            pos_kernel: 5,
        }
    }

    /// Perturbation oracle: which frames may depend on a given sample
    /// follows directly from (stride, rf).
    #[test]
    fn geometry_matches_empirical_dependence() {
        let mut rng = Prng::new(331);
        for trial in 0..50 {
            let n_layers = 1 + rng.below(3);
            // Width >= stride keeps the receptive field gap-free, which is
            // what (stride, rf) alone can predict and what real encoder
            // stacks look like. Channels >= 3 because layer norm over two
            // channels collapses each frame to a sign.
            let conv_layers: Vec<(usize, usize, usize)> = (0..n_layers)
                .map(|_| {
                    let stride = 1 + rng.below(3);
                    (3 + rng.below(3), stride + rng.below(3), stride)
                })
                .collect();
            let cfg = EncoderConfig {
                conv_layers,
                context_layers: 0,
                model_dim: 8,
                attention_heads: 2,
                ff_dim: 8,
                pos_kernel: 0,
            };
            let (stride, rf) = frame_geometry(&cfg);
            let n = rf + stride * (2 + rng.below(4));
            let model = AcousticModel::new(&cfg, &mut rng).unwrap();
            let wave: Vec<f64> = (0..n).map(|_| rng.normal() * 0.5).collect();
            let (z, _) = model.encode(&wave, 16000).unwrap();
            let t = z.len();
            assert_eq!(t, (n - rf) / stride + 1, "trial {trial}");
            let hit = rng.below(n);
            let mut wave2 = wave.clone();
            wave2[hit] += 0.25;
            let (z2, _) = model.encode(&wave2, 16000).unwrap();
            for frame in 0..t {
                let window = frame * stride..frame * stride + rf;
                let changed = z.frames.row(frame) != z2.frames.row(frame);
                assert_eq!(
                    changed,
                    window.contains(&hit),
                    "trial {trial}: frame {frame}, sample {hit}"
                );
            }
        }
    }

    #[test]
    fn one_second_default_audio_gives_49_frames() {
        let mut rng = Prng::new(337);
        let cfg = EncoderConfig::default();
        let model = AcousticModel::new(&cfg, &mut rng).unwrap();
        let wave: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.01).sin() * 0.3).collect();
        let (z, _) = model.encode(&wave, 16000).unwrap();
        assert_eq!(z.len(), 49);
    }

    #[test]
    fn receptive_field_input_gives_one_frame() {
        let mut rng = Prng::new(347);
        let cfg = toy_cfg();
        let (_, rf) = frame_geometry(&cfg);
        let model = AcousticModel::new(&cfg, &mut rng).unwrap();
        let wave = vec![0.1; rf];
        let (z, _) = model.encode(&wave, 16000).unwrap();
        assert_eq!(z.len(), 1);
        assert!(matches!(
            model.encode(&wave[..rf - 1], 16000),
            Err(ModelError::InputTooShort { .. })
        ));
    }

    #[test]
    fn zero_signal_is_finite_through_the_whole_stack() {
        let mut rng = Prng::new(349);
        let model = AcousticModel::new(&toy_cfg(), &mut rng).unwrap();
        let wave = vec![0.0; 60];
        let (z, _) = model.encode(&wave, 16000).unwrap();
        let (c, _) = model.contextualize(&z.frames, None).unwrap();
        assert!(c.frames.all_finite());
    }

    #[test]
    fn all_positions_masked_is_finite() {
        let mut rng = Prng::new(353);
        let model = AcousticModel::new(&toy_cfg(), &mut rng).unwrap();
        let z = Tensor::randn(&[6, 8], 1.0, &mut rng);
        let mask: Vec<usize> = (0..6).collect();
        let (c, _) = model.contextualize(&z, Some(&mask)).unwrap();
        assert!(c.frames.all_finite());
    }

    #[test]
    fn mask_out_of_range_is_rejected() {
        let mut rng = Prng::new(359);
        let model = AcousticModel::new(&toy_cfg(), &mut rng).unwrap();
        let z = Tensor::randn(&[4, 8], 1.0, &mut rng);
        assert!(matches!(
            model.contextualize(&z, Some(&[4])),
            Err(ModelError::MaskOutOfRange { index: 4, frames: 4 })
        ));
    }

    #[test]
    fn unmasked_frames_enter_attention_unchanged() {
        // Masking a position must not touch what other positions feed in:
        // with zero attention output (wv = 0) and no pos conv, outputs at
        // unmasked positions match the unmasked run exactly.
        let mut rng = Prng::new(361);
        let mut cfg = toy_cfg();
        cfg.pos_kernel = 0;
        cfg.context_layers = 1;
        let mut model = AcousticModel::new(&cfg, &mut rng).unwrap();
        model.blocks[0].attn.wv.w = Tensor::zeros(&[16, 16]);
        model.blocks[0].attn.wv.b = Tensor::zeros(&[16]);
        model.blocks[0].attn.wo.b = Tensor::zeros(&[16]);
        let z = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let (plain, _) = model.contextualize(&z, None).unwrap();
        let (masked, _) = model.contextualize(&z, Some(&[2])).unwrap();
        for t in [0usize, 1, 3, 4] {
            assert_eq!(plain.frames.row(t), masked.frames.row(t), "frame {t}");
        }
    }

    #[test]
    fn no_positional_embedding_makes_context_permutation_equivariant() {
        let mut rng = Prng::new(367);
        let mut cfg = toy_cfg();
        cfg.pos_kernel = 0;
        let model = AcousticModel::new(&cfg, &mut rng).unwrap();
        let z = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let (c, _) = model.contextualize(&z, None).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let mut z_perm = Tensor::zeros(&[5, 8]);
        for (to, &from) in perm.iter().enumerate() {
            z_perm.row_mut(to).copy_from_slice(z.row(from));
        }
        let (c_perm, _) = model.contextualize(&z_perm, None).unwrap();
        for (to, &from) in perm.iter().enumerate() {
            for d in 0..16 {
                assert!(
                    (c_perm.frames.at2(to, d) - c.frames.at2(from, d)).abs() < 1e-12,
                    "row {to} <- {from}"
                );
            }
        }
    }

    #[test]
    fn ctc_head_uniform_at_zero_weights() {
        let mut rng = Prng::new(373);
        let mut head = CtcHead::new(16, 4, &mut rng);
        head.proj.w = Tensor::zeros(&[5, 16]);
        head.proj.b = Tensor::zeros(&[5]);
        let c = Tensor::randn(&[3, 16], 1.0, &mut rng);
        let (lp, _) = head.forward(&c);
        let expect = -(5.0f64).ln();
        for v in lp.values() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ctc_head_rows_normalize() {
        let mut rng = Prng::new(379);
        let head = CtcHead::new(16, 6, &mut rng);
        let c = Tensor::randn(&[4, 16], 1.0, &mut rng);
        let (lp, _) = head.forward(&c);
        for t in 0..4 {
            let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() <= 1e-12, "row {t} sums to {s}");
        }
    }

    #[test]
    fn ctc_head_gradient_matches_finite_differences() {
        let mut rng = Prng::new(383);
        let head = CtcHead::new(8, 3, &mut rng);
        let c = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let dir: Vec<f64> = (0..4 * 4).map(|_| rng.normal()).collect();
        let (_, cache) = head.forward(&c);
        let dlp = Tensor::from_values(&[4, 4], dir.clone()).unwrap();
        let mut head_b = head.clone();
        let dc = head_b.backward(&cache, &dlp);
        let err = grad_check(
            &mut |t: &Tensor| {
                let (lp, _) = head.forward(t);
                lp.values().iter().zip(&dir).map(|(a, b)| a * b).sum()
            },
            &c,
            &dc,
            1e-6,
        );
        assert!(err <= 1e-5, "ctc head dc err {err}");
    }

    #[test]
    fn context_gradient_matches_finite_differences() {
        let mut rng = Prng::new(389);
        let model = AcousticModel::new(&toy_cfg(), &mut rng).unwrap();
        let z = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let dir: Vec<f64> = (0..4 * 16).map(|_| rng.normal()).collect();
        let (_, cache) = model.contextualize(&z, Some(&[1])).unwrap();
        let d_out = Tensor::from_values(&[4, 16], dir.clone()).unwrap();
        let mut model_b = model.clone();
        let dz = model_b.contextualize_backward(&cache, &d_out);
        let err = grad_check(
            &mut |t: &Tensor| {
                let (c, _) = model.contextualize(t, Some(&[1])).unwrap();
                c.frames.values().iter().zip(&dir).map(|(a, b)| a * b).sum()
            },
            &z,
            &dz,
            1e-6,
        );
        assert!(err <= 1e-5, "context dz err {err}");
        // Masked position takes no z gradient; it flows to the embedding.
        for v in dz.row(1) {
            assert_eq!(*v, 0.0);
        }
        assert!(model_b
            .mask_embed
            .grad()
            .unwrap()
            .iter()
            .any(|g| g.abs() > 0.0));
    }

    #[test]
    fn checkpoint_params_round_trip() {
        let mut rng = Prng::new(397);
        let model = AcousticModel::new(&toy_cfg(), &mut rng).unwrap();
        let mut named = Vec::new();
        model.params(&mut named);
        let stored = collect_params(&named);
        let mut fresh = AcousticModel::new(&toy_cfg(), &mut Prng::new(9999)).unwrap();
        let mut target = Vec::new();
        fresh.params_mut(&mut target);
        assign_params(&mut target, &stored).unwrap();
        let mut after = Vec::new();
        fresh.params(&mut after);
        for ((n1, t1), (n2, t2)) in named.iter().zip(after.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.values(), t2.values());
        }
    }
}
