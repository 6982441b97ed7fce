//! Label-synchronous attention decoder: causal self-attention over the
//! token prefix, cross-attention into the context sequence, and a
//! projection to V+2 outputs.
//!
//! Decoder token space drops the CTC blank and shifts unit ids down by
//! one: unit id u maps to u-1, BOS is V, EOS is V+1.

use crate::rng::Prng;
use crate::tensor::{self, log_softmax, log_softmax_backward, Tensor};

use super::layers::{
    AttnCache, FeedForward, FfCache, LayerNormAffine, Linear, LinearCache, LnCache,
    MultiHeadAttention,
};
use super::{ModelError, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttnDecoderConfig {
    pub layers: usize,
    pub max_len: usize,
}

impl Default for AttnDecoderConfig {
    fn default() -> Self {
        AttnDecoderConfig {
            layers: 1,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    ln1: LayerNormAffine,
    self_attn: MultiHeadAttention,
    ln2: LayerNormAffine,
    cross_attn: MultiHeadAttention,
    ln3: LayerNormAffine,
    ff: FeedForward,
}

struct DecoderLayerCache {
    ln1: LnCache,
    self_attn: AttnCache,
    ln2: LnCache,
    cross_attn: AttnCache,
    ln3: LnCache,
    ff: FfCache,
}

#[derive(Debug, Clone)]
pub struct AttnDecoder {
    pub unit_count: usize,
    pub max_len: usize,
    /// [V+2, d] token embeddings.
    pub embed: Tensor,
    /// [max_len, d] learned positions.
    pub pos: Tensor,
    pub layers: Vec<DecoderLayer>,
    pub final_ln: LayerNormAffine,
    pub out: Linear,
}

pub struct DecoderCache {
    tokens: Vec<usize>,
    layers: Vec<DecoderLayerCache>,
    final_ln: LnCache,
    out: LinearCache,
    log_probs: Tensor,
}

impl AttnDecoder {
    pub fn bos(&self) -> usize {
        self.unit_count
    }

    pub fn eos(&self) -> usize {
        self.unit_count + 1
    }

    pub fn vocab(&self) -> usize {
        self.unit_count + 2
    }

    pub fn new(
        cfg: &AttnDecoderConfig,
        model_dim: usize,
        heads: usize,
        ff_dim: usize,
        unit_count: usize,
        rng: &mut Prng,
    ) -> Result<AttnDecoder> {
        if cfg.layers == 0 {
            return Err(ModelError::BadConfig("decoder needs at least one layer".into()));
        }
        let layers = (0..cfg.layers)
            .map(|_| DecoderLayer {
                ln1: LayerNormAffine::new(model_dim),
                self_attn: MultiHeadAttention::new(model_dim, heads, rng),
                ln2: LayerNormAffine::new(model_dim),
                cross_attn: MultiHeadAttention::new(model_dim, heads, rng),
                ln3: LayerNormAffine::new(model_dim),
                ff: FeedForward::new(model_dim, ff_dim, rng),
            })
            .collect();
        Ok(AttnDecoder {
            unit_count,
            max_len: cfg.max_len,
            embed: Tensor::rand_uniform(&[unit_count + 2, model_dim], 0.1, rng),
            pos: Tensor::rand_uniform(&[cfg.max_len, model_dim], 0.1, rng),
            layers,
            final_ln: LayerNormAffine::new(model_dim),
            out: Linear::new_head(model_dim, unit_count + 2, rng),
        })
    }

    /// Map an inventory unit id (1..=V) into decoder token space.
    pub fn unit_to_token(&self, unit: usize) -> usize {
        debug_assert!(unit >= 1 && unit <= self.unit_count);
        unit - 1
    }

    pub fn token_to_unit(&self, token: usize) -> Option<usize> {
        if token < self.unit_count {
            Some(token + 1)
        } else {
            None
        }
    }

    /// Teacher-forced pass over decoder tokens; one log-prob row per input
    /// position.
    pub fn forward(&self, tokens: &[usize], memory: &Tensor) -> Result<(Tensor, DecoderCache)> {
        if tokens.is_empty() || tokens.len() > self.max_len {
            return Err(ModelError::PrefixTooLong {
                len: tokens.len(),
                max: self.max_len,
            });
        }
        let d = self.embed.dims()[1];
        let n = tokens.len();
        let mut x = Tensor::zeros(&[n, d]);
        for (i, &tok) in tokens.iter().enumerate() {
            for j in 0..d {
                x.values_mut()[i * d + j] = self.embed.at2(tok, j) + self.pos.at2(i, j);
            }
        }
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (n1, ln1) = layer.ln1.forward(&x);
            let (sa, self_attn) = layer.self_attn.forward(&n1, &n1, true);
            let a = tensor::add(&x, &sa).expect("residual");
            let (n2, ln2) = layer.ln2.forward(&a);
            let (ca, cross_attn) = layer.cross_attn.forward(&n2, memory, false);
            let b = tensor::add(&a, &ca).expect("residual");
            let (n3, ln3) = layer.ln3.forward(&b);
            let (f, ff) = layer.ff.forward(&n3);
            x = tensor::add(&b, &f).expect("residual");
            layer_caches.push(DecoderLayerCache {
                ln1,
                self_attn,
                ln2,
                cross_attn,
                ln3,
                ff,
            });
        }
        let (nf, final_ln) = self.final_ln.forward(&x);
        let (logits, out_cache) = self.out.forward(&nf);
        let log_probs = log_softmax(&logits, 1).expect("decoder log_softmax");
        Ok((
            log_probs.clone(),
            DecoderCache {
                tokens: tokens.to_vec(),
                layers: layer_caches,
                final_ln,
                out: out_cache,
                log_probs,
            },
        ))
    }

    /// Backward through the decoder; returns the gradient for the context
    /// memory and accumulates parameter gradients.
    pub fn backward(&mut self, cache: &DecoderCache, d_log_probs: &Tensor) -> Tensor {
        let d_logits = log_softmax_backward(&cache.log_probs, d_log_probs, 1);
        let d_nf = self.out.backward(&cache.out, &d_logits);
        let mut dx = self.final_ln.backward(&cache.final_ln, &d_nf);
        let mut d_memory: Option<Tensor> = None;
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()).rev() {
            let df = layer.ff.backward(&lc.ff, &dx);
            let dn3 = layer.ln3.backward(&lc.ln3, &df);
            let db = tensor::add(&dx, &dn3).expect("residual grad");
            let (dq, dmem) = layer.cross_attn.backward(&lc.cross_attn, &db);
            d_memory = Some(match d_memory {
                Some(acc) => tensor::add(&acc, &dmem).expect("memory grad"),
                None => dmem,
            });
            let dn2 = layer.ln2.backward(&lc.ln2, &dq);
            let da = tensor::add(&db, &dn2).expect("residual grad");
            let (dq_s, dkv_s) = layer.self_attn.backward(&lc.self_attn, &da);
            let dn1 = tensor::add(&dq_s, &dkv_s).expect("self-attn grad");
            let dx_ln = layer.ln1.backward(&lc.ln1, &dn1);
            dx = tensor::add(&da, &dx_ln).expect("layer grad");
        }
        // Embedding and positional rows.
        let d = self.embed.dims()[1];
        let mut d_embed = Tensor::zeros(self.embed.dims());
        let mut d_pos = Tensor::zeros(self.pos.dims());
        for (i, &tok) in cache.tokens.iter().enumerate() {
            for j in 0..d {
                let g = dx.at2(i, j);
                d_embed.values_mut()[tok * d + j] += g;
                d_pos.values_mut()[i * d + j] += g;
            }
        }
        self.embed.accumulate_grad(&d_embed);
        self.pos.accumulate_grad(&d_pos);
        d_memory.expect("decoder has at least one layer")
    }

    /// Log-probability row for the next token after `prefix` (inventory
    /// unit ids), reading the context sequence through cross-attention.
    pub fn step(&self, prefix: &[usize], memory: &Tensor) -> Result<Vec<f64>> {
        let mut tokens = Vec::with_capacity(prefix.len() + 1);
        tokens.push(self.bos());
        for &u in prefix {
            tokens.push(self.unit_to_token(u));
        }
        let (lp, _) = self.forward(&tokens, memory)?;
        Ok(lp.row(lp.rows() - 1).to_vec())
    }

    /// Incremental decoding with cached keys/values per layer.
    pub fn begin_incremental(&self, memory: &Tensor) -> IncrementalState {
        IncrementalState {
            memory: memory.clone(),
            step: 0,
            self_k: vec![None; self.layers.len()],
            self_v: vec![None; self.layers.len()],
        }
    }

    /// Feed one decoder token, returning the next-token log-prob row.
    pub fn step_incremental(&self, state: &mut IncrementalState, token: usize) -> Result<Vec<f64>> {
        if state.step >= self.max_len {
            return Err(ModelError::PrefixTooLong {
                len: state.step + 1,
                max: self.max_len,
            });
        }
        let d = self.embed.dims()[1];
        let mut x = Tensor::zeros(&[1, d]);
        for j in 0..d {
            x.values_mut()[j] = self.embed.at2(token, j) + self.pos.at2(state.step, j);
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let (n1, _) = layer.ln1.forward(&x);
            let (k_new, _) = layer.self_attn.wk.forward(&n1);
            let (v_new, _) = layer.self_attn.wv.forward(&n1);
            let k_all = append_row(&state.self_k[li], &k_new);
            let v_all = append_row(&state.self_v[li], &v_new);
            let sa = attend_one(&layer.self_attn, &n1, &k_all, &v_all);
            state.self_k[li] = Some(k_all);
            state.self_v[li] = Some(v_all);
            let a = tensor::add(&x, &sa).expect("residual");
            let (n2, _) = layer.ln2.forward(&a);
            let (ca, _) = layer.cross_attn.forward(&n2, &state.memory, false);
            let b = tensor::add(&a, &ca).expect("residual");
            let (n3, _) = layer.ln3.forward(&b);
            let (f, _) = layer.ff.forward(&n3);
            x = tensor::add(&b, &f).expect("residual");
        }
        let (nf, _) = self.final_ln.forward(&x);
        let (logits, _) = self.out.forward(&nf);
        let lp = log_softmax(&logits, 1).expect("decoder log_softmax");
        state.step += 1;
        Ok(lp.row(0).to_vec())
    }

    /// Beam search over output sequences with length-normalized scores.
    /// Returns inventory unit ids.
    pub fn beam_decode(&self, memory: &Tensor, beam_width: usize) -> Result<Vec<usize>> {
        #[derive(Clone)]
        struct Cand {
            tokens: Vec<usize>,
            logp: f64,
            done: bool,
        }
        let mut beam = vec![Cand {
            tokens: vec![self.bos()],
            logp: 0.0,
            done: false,
        }];
        for _ in 1..self.max_len {
            if beam.iter().all(|c| c.done) {
                break;
            }
            let mut next = Vec::new();
            for cand in &beam {
                if cand.done {
                    next.push(cand.clone());
                    continue;
                }
                let (lp, _) = self.forward(&cand.tokens, memory)?;
                let row = lp.row(lp.rows() - 1);
                for tok in 0..self.vocab() {
                    if tok == self.bos() {
                        continue;
                    }
                    let mut tokens = cand.tokens.clone();
                    let done = tok == self.eos();
                    if !done {
                        tokens.push(tok);
                    }
                    next.push(Cand {
                        tokens,
                        logp: cand.logp + row[tok],
                        done,
                    });
                }
            }
            next.sort_by(|a, b| {
                let sa = a.logp / (a.tokens.len() as f64);
                let sb = b.logp / (b.tokens.len() as f64);
                sb.partial_cmp(&sa).unwrap().then_with(|| a.tokens.cmp(&b.tokens))
            });
            next.truncate(beam_width);
            beam = next;
        }
        let best = beam
            .into_iter()
            .max_by(|a, b| {
                let sa = a.logp / (a.tokens.len() as f64);
                let sb = b.logp / (b.tokens.len() as f64);
                sa.partial_cmp(&sb).unwrap().then_with(|| b.tokens.cmp(&a.tokens))
            })
            .unwrap();
        Ok(best
            .tokens
            .into_iter()
            .skip(1) // BOS
            .filter_map(|t| self.token_to_unit(t))
            .collect())
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        out.push(("decoder.embed".to_string(), &self.embed));
        out.push(("decoder.pos".to_string(), &self.pos));
        for (i, l) in self.layers.iter().enumerate() {
            l.ln1.params(&format!("decoder.layer{i}.ln1"), out);
            l.self_attn.params(&format!("decoder.layer{i}.self_attn"), out);
            l.ln2.params(&format!("decoder.layer{i}.ln2"), out);
            l.cross_attn.params(&format!("decoder.layer{i}.cross_attn"), out);
            l.ln3.params(&format!("decoder.layer{i}.ln3"), out);
            l.ff.params(&format!("decoder.layer{i}.ff"), out);
        }
        self.final_ln.params("decoder.final_ln", out);
        self.out.params("decoder.out", out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push(("decoder.embed".to_string(), &mut self.embed));
        out.push(("decoder.pos".to_string(), &mut self.pos));
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.ln1.params_mut(&format!("decoder.layer{i}.ln1"), out);
            l.self_attn.params_mut(&format!("decoder.layer{i}.self_attn"), out);
            l.ln2.params_mut(&format!("decoder.layer{i}.ln2"), out);
            l.cross_attn.params_mut(&format!("decoder.layer{i}.cross_attn"), out);
            l.ln3.params_mut(&format!("decoder.layer{i}.ln3"), out);
            l.ff.params_mut(&format!("decoder.layer{i}.ff"), out);
        }
        self.final_ln.params_mut("decoder.final_ln", out);
        self.out.params_mut("decoder.out", out);
    }
}


pub struct IncrementalState {
    memory: Tensor,
    step: usize,
    self_k: Vec<Option<Tensor>>,
    self_v: Vec<Option<Tensor>>,
}

fn append_row(acc: &Option<Tensor>, row: &Tensor) -> Tensor {
    match acc {
        None => row.clone(),
        Some(prev) => {
            let (t, d) = (prev.dims()[0], prev.dims()[1]);
            let mut out = Tensor::zeros(&[t + 1, d]);
            out.values_mut()[..t * d].copy_from_slice(prev.values());
            out.values_mut()[t * d..].copy_from_slice(row.values());
            out
        }
    }
}

/// One-query attention over explicit keys/values (already projected).
fn attend_one(attn: &MultiHeadAttention, q_in: &Tensor, k_all: &Tensor, v_all: &Tensor) -> Tensor {
    let d = q_in.dims()[1];
    let heads = attn.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, _) = attn.wq.forward(q_in);
    let tk = k_all.dims()[0];
    let mut concat = Tensor::zeros(&[1, d]);
    for h in 0..heads {
        let qh = &q.row(0)[h * dh..(h + 1) * dh];
        let mut scores = vec![0.0f64; tk];
        for (j, s) in scores.iter_mut().enumerate() {
            let kh = &k_all.row(j)[h * dh..(h + 1) * dh];
            *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - mx).exp();
            z += *s;
        }
        for s in scores.iter_mut() {
            *s /= z;
        }
        let dst = &mut concat.row_mut(0)[h * dh..(h + 1) * dh];
        for (j, &p) in scores.iter().enumerate() {
            let vh = &v_all.row(j)[h * dh..(h + 1) * dh];
            for (d_slot, v) in dst.iter_mut().zip(vh) {
                *d_slot += p * v;
            }
        }
    }
    let (out, _) = attn.wo.forward(&concat);
    out
}
