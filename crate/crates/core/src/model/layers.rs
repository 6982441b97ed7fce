//! Network layers with explicit forward caches and hand-written backward
//! passes. Backward methods accumulate parameter gradients into each
//! tensor's grad buffer and return the gradient with respect to the input.

use crate::rng::Prng;
use crate::tensor::{
    self, conv1d, conv1d_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul,
    matmul_backward, softmax, softmax_backward, LayerNormCache, Tensor,
};

const MASKED_SCORE: f64 = -1e30;

// ----- linear ---------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    /// [out, in]
    pub w: Tensor,
    /// [out]
    pub b: Tensor,
}

pub struct LinearCache {
    x: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Prng) -> Linear {
        let scale = 1.0 / (in_dim as f64).sqrt();
        Linear {
            w: Tensor::rand_uniform(&[out_dim, in_dim], scale, rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    /// Small-weight init for heads that should start near-uniform.
    pub fn new_head(in_dim: usize, out_dim: usize, rng: &mut Prng) -> Linear {
        Linear {
            w: Tensor::rand_uniform(&[out_dim, in_dim], 0.01, rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.dims()[0]
    }

    /// y = x w^T + b, rows are positions.
    pub fn forward(&self, x: &Tensor) -> (Tensor, LinearCache) {
        let (t, _in_dim) = (x.dims()[0], x.dims()[1]);
        let out_dim = self.out_dim();
        let mut y = matmul(x, &self.w.transposed()).expect("linear shapes");
        for ti in 0..t {
            let row = y.row_mut(ti);
            for o in 0..out_dim {
                row[o] += self.b.values()[o];
            }
        }
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Tensor) -> Tensor {
        // y = x @ w^T: dx = dy @ w, dw = dy^T @ x, db = column sums of dy.
        let dx = matmul(dy, &self.w).expect("linear backward shapes");
        let dw = matmul(&dy.transposed(), &cache.x).expect("linear backward shapes");
        self.w.accumulate_grad(&dw);
        let (t, out_dim) = (dy.dims()[0], dy.dims()[1]);
        let mut db = Tensor::zeros(&[out_dim]);
        for ti in 0..t {
            let row = dy.row(ti);
            for o in 0..out_dim {
                db.values_mut()[o] += row[o];
            }
        }
        self.b.accumulate_grad(&db);
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

// ----- layer norm with affine ------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNormAffine {
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub struct LnCache {
    normalized: Tensor,
    ln: LayerNormCache,
}

impl LayerNormAffine {
    pub fn new(dim: usize) -> LayerNormAffine {
        LayerNormAffine {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
        }
    }

    /// Normalize each row (last axis) then scale and shift.
    pub fn forward(&self, x: &Tensor) -> (Tensor, LnCache) {
        let (normalized, ln) = layer_norm(x, x.rank() - 1).expect("layer_norm axis");
        let mut y = normalized.clone();
        let d = self.gamma.len();
        for (i, v) in y.values_mut().iter_mut().enumerate() {
            *v = *v * self.gamma.values()[i % d] + self.beta.values()[i % d];
        }
        (y, LnCache { normalized, ln })
    }

    pub fn backward(&mut self, cache: &LnCache, dy: &Tensor) -> Tensor {
        let d = self.gamma.len();
        let mut dgamma = Tensor::zeros(&[d]);
        let mut dbeta = Tensor::zeros(&[d]);
        let mut dnorm = Tensor::zeros(dy.dims());
        for (i, &g) in dy.values().iter().enumerate() {
            let j = i % d;
            dgamma.values_mut()[j] += g * cache.normalized.values()[i];
            dbeta.values_mut()[j] += g;
            dnorm.values_mut()[i] = g * self.gamma.values()[j];
        }
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
        layer_norm_backward(&cache.normalized, &cache.ln, &dnorm, dy.rank() - 1)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

// ----- multi-head attention -----------------------------------------------------

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct AttnCache {
    q_cache: LinearCache,
    kv_cache_k: LinearCache,
    kv_cache_v: LinearCache,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head attention weights, each [Tq, Tk].
    probs: Vec<Tensor>,
    o_cache: LinearCache,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut Prng) -> MultiHeadAttention {
        assert!(dim % heads == 0, "model dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
        }
    }

    fn head_slice(x: &Tensor, head: usize, dh: usize) -> Tensor {
        let (t, _d) = (x.dims()[0], x.dims()[1]);
        let mut out = Tensor::zeros(&[t, dh]);
        for ti in 0..t {
            let src = &x.row(ti)[head * dh..(head + 1) * dh];
            out.row_mut(ti).copy_from_slice(src);
        }
        out
    }

    fn head_unslice(full: &mut Tensor, part: &Tensor, head: usize, dh: usize) {
        for ti in 0..part.dims()[0] {
            let dst = &mut full.row_mut(ti)[head * dh..(head + 1) * dh];
            for (d, s) in dst.iter_mut().zip(part.row(ti)) {
                *d += s;
            }
        }
    }

    /// Scaled dot-product attention of `q_in` over `kv_in`; `causal` masks
    /// future positions (self-attention only).
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, causal: bool) -> (Tensor, AttnCache) {
        let d = q_in.dims()[1];
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (q, q_cache) = self.wq.forward(q_in);
        let (k, kv_cache_k) = self.wk.forward(kv_in);
        let (v, kv_cache_v) = self.wv.forward(kv_in);
        let (tq, tk) = (q.dims()[0], k.dims()[0]);
        let mut concat = Tensor::zeros(&[tq, d]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = Self::head_slice(&q, h, dh);
            let kh = Self::head_slice(&k, h, dh);
            let vh = Self::head_slice(&v, h, dh);
            let mut scores = matmul(&qh, &kh.transposed()).expect("attn scores");
            for val in scores.values_mut().iter_mut() {
                *val *= scale;
            }
            if causal {
                for i in 0..tq {
                    for j in (i + 1)..tk {
                        scores.values_mut()[i * tk + j] = MASKED_SCORE;
                    }
                }
            }
            let p = softmax(&scores, 1).expect("attn softmax");
            let ctx = matmul(&p, &vh).expect("attn context");
            Self::head_unslice(&mut concat, &ctx, h, dh);
            probs.push(p);
        }
        let (out, o_cache) = self.wo.forward(&concat);
        (
            out,
            AttnCache {
                q_cache,
                kv_cache_k,
                kv_cache_v,
                q,
                k,
                v,
                probs,
                o_cache,
            },
        )
    }

    /// Returns (d_q_in, d_kv_in).
    pub fn backward(&mut self, cache: &AttnCache, dout: &Tensor) -> (Tensor, Tensor) {
        let d = dout.dims()[1];
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dconcat = self.wo.backward(&cache.o_cache, dout);
        let mut dq = Tensor::zeros(cache.q.dims());
        let mut dk = Tensor::zeros(cache.k.dims());
        let mut dv = Tensor::zeros(cache.v.dims());
        for h in 0..self.heads {
            let dctx = Self::head_slice(&dconcat, h, dh);
            let p = &cache.probs[h];
            let vh = Self::head_slice(&cache.v, h, dh);
            let (dp, dvh) = matmul_backward(p, &vh, &dctx);
            let mut dscores = softmax_backward(p, &dp, 1);
            for val in dscores.values_mut().iter_mut() {
                *val *= scale;
            }
            let qh = Self::head_slice(&cache.q, h, dh);
            let kh = Self::head_slice(&cache.k, h, dh);
            let (dqh, dkh_t) = matmul_backward(&qh, &kh.transposed(), &dscores);
            Self::head_unslice(&mut dq, &dqh, h, dh);
            Self::head_unslice(&mut dk, &dkh_t.transposed(), h, dh);
            Self::head_unslice(&mut dv, &dvh, h, dh);
        }
        let dq_in = self.wq.backward(&cache.q_cache, &dq);
        let dk_in = self.wk.backward(&cache.kv_cache_k, &dk);
        let dv_in = self.wv.backward(&cache.kv_cache_v, &dv);
        let dkv_in = tensor::add(&dk_in, &dv_in).expect("kv grads");
        (dq_in, dkv_in)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.wq.params(&format!("{prefix}.wq"), out);
        self.wk.params(&format!("{prefix}.wk"), out);
        self.wv.params(&format!("{prefix}.wv"), out);
        self.wo.params(&format!("{prefix}.wo"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.wq.params_mut(&format!("{prefix}.wq"), out);
        self.wk.params_mut(&format!("{prefix}.wk"), out);
        self.wv.params_mut(&format!("{prefix}.wv"), out);
        self.wo.params_mut(&format!("{prefix}.wo"), out);
    }
}

// ----- feed-forward --------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

pub struct FfCache {
    c1: LinearCache,
    h: Tensor,
    c2: LinearCache,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut Prng) -> FeedForward {
        FeedForward {
            w1: Linear::new(dim, hidden, rng),
            w2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, FfCache) {
        let (h, c1) = self.w1.forward(x);
        let g = gelu(&h);
        let (y, c2) = self.w2.forward(&g);
        (y, FfCache { c1, h, c2 })
    }

    pub fn backward(&mut self, cache: &FfCache, dy: &Tensor) -> Tensor {
        let dg = self.w2.backward(&cache.c2, dy);
        let dh = gelu_backward(&cache.h, &dg);
        self.w1.backward(&cache.c1, &dh)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.w1.params(&format!("{prefix}.w1"), out);
        self.w2.params(&format!("{prefix}.w2"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.w1.params_mut(&format!("{prefix}.w1"), out);
        self.w2.params_mut(&format!("{prefix}.w2"), out);
    }
}

// ----- transformer block (pre-LN) ---------------------------------------------------

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNormAffine,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNormAffine,
    pub ff: FeedForward,
}

pub struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ff: FfCache,
}

impl TransformerBlock {
    pub fn new(dim: usize, heads: usize, ff_dim: usize, rng: &mut Prng) -> TransformerBlock {
        TransformerBlock {
            ln1: LayerNormAffine::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNormAffine::new(dim),
            ff: FeedForward::new(dim, ff_dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, BlockCache) {
        let (n1, ln1) = self.ln1.forward(x);
        let (att, attn) = self.attn.forward(&n1, &n1, false);
        let a = tensor::add(x, &att).expect("residual");
        let (n2, ln2) = self.ln2.forward(&a);
        let (f, ff) = self.ff.forward(&n2);
        let y = tensor::add(&a, &f).expect("residual");
        (
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                ff,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> Tensor {
        let df = self.ff.backward(&cache.ff, dy);
        let dn2 = self.ln2.backward(&cache.ln2, &df);
        let da = tensor::add(dy, &dn2).expect("residual grad");
        let (dq, dkv) = self.attn.backward(&cache.attn, &da);
        let dn1 = tensor::add(&dq, &dkv).expect("attn input grad");
        let dx_ln = self.ln1.backward(&cache.ln1, &dn1);
        tensor::add(&da, &dx_ln).expect("block grad")
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.ln1.params(&format!("{prefix}.ln1"), out);
        self.attn.params(&format!("{prefix}.attn"), out);
        self.ln2.params(&format!("{prefix}.ln2"), out);
        self.ff.params(&format!("{prefix}.ff"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.ln1.params_mut(&format!("{prefix}.ln1"), out);
        self.attn.params_mut(&format!("{prefix}.attn"), out);
        self.ln2.params_mut(&format!("{prefix}.ln2"), out);
        self.ff.params_mut(&format!("{prefix}.ff"), out);
    }
}

// ----- convolutional positional embedding ----------------------------------------------

#[derive(Debug, Clone)]
pub struct PosConv {
    /// [d, d, kernel], kernel odd so padding keeps T fixed.
    pub kernels: Tensor,
}

pub struct PosConvCache {
    padded: Tensor,
}

impl PosConv {
    pub fn new(dim: usize, kernel: usize, rng: &mut Prng) -> PosConv {
        assert!(kernel % 2 == 1, "positional kernel must be odd");
        let scale = 1.0 / ((dim * kernel) as f64).sqrt();
        PosConv {
            kernels: Tensor::rand_uniform(&[dim, dim, kernel], scale, rng),
        }
    }

    fn kernel_width(&self) -> usize {
        self.kernels.dims()[2]
    }

    /// Same-padded conv over time; input and output are [T, d].
    pub fn forward(&self, x: &Tensor) -> (Tensor, PosConvCache) {
        let (t, d) = (x.dims()[0], x.dims()[1]);
        let w = self.kernel_width();
        let pad = (w - 1) / 2;
        let mut padded = Tensor::zeros(&[d, t + 2 * pad]);
        for ti in 0..t {
            for di in 0..d {
                padded.values_mut()[di * (t + 2 * pad) + ti + pad] = x.at2(ti, di);
            }
        }
        let out_cm = conv1d(&padded, &self.kernels, 1, 1).expect("posconv");
        (out_cm.transposed(), PosConvCache { padded })
    }

    pub fn backward(&mut self, cache: &PosConvCache, dy: &Tensor) -> Tensor {
        let (t, d) = (dy.dims()[0], dy.dims()[1]);
        let pad = (self.kernel_width() - 1) / 2;
        let dout_cm = dy.transposed();
        let (dpadded, dk) = conv1d_backward(&cache.padded, &self.kernels, 1, 1, &dout_cm);
        self.kernels.accumulate_grad(&dk);
        let mut dx = Tensor::zeros(&[t, d]);
        for ti in 0..t {
            for di in 0..d {
                dx.values_mut()[ti * d + di] = dpadded.values()[di * (t + 2 * pad) + ti + pad];
            }
        }
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.kernels"), &self.kernels));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.kernels"), &mut self.kernels));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn proj(out: &Tensor, dir: &[f64]) -> f64 {
        out.values().iter().zip(dir).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        // With one key, softmax weights are 1 whatever the scores, so the
        // output is wo(wv(x)).
        let mut rng = Prng::new(101);
        let attn = MultiHeadAttention::new(8, 2, &mut rng);
        let x = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let (out, _) = attn.forward(&x, &x, false);
        let (v, _) = attn.wv.forward(&x);
        let (expect, _) = attn.wo.forward(&v);
        for (a, b) in out.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_query_weights_average_the_values() {
        // All scores equal -> uniform attention -> mean of value rows.
        let mut rng = Prng::new(103);
        let mut attn = MultiHeadAttention::new(8, 2, &mut rng);
        attn.wq.w = Tensor::zeros(&[8, 8]);
        attn.wq.b = Tensor::zeros(&[8]);
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let (out, _) = attn.forward(&x, &x, false);
        let (v, _) = attn.wv.forward(&x);
        let mut mean = Tensor::zeros(&[1, 8]);
        for t in 0..5 {
            for dch in 0..8 {
                mean.values_mut()[dch] += v.at2(t, dch) / 5.0;
            }
        }
        let (expect, _) = attn.wo.forward(&mean);
        for t in 0..5 {
            for dch in 0..8 {
                assert!((out.at2(t, dch) - expect.at2(0, dch)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let mut rng = Prng::new(107);
        let attn = MultiHeadAttention::new(8, 2, &mut rng);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let (out, _) = attn.forward(&x, &x, true);
        let mut x2 = x.clone();
        // Perturb the last position; earlier outputs must be bit-identical.
        for dch in 0..8 {
            x2.values_mut()[3 * 8 + dch] += 1.0;
        }
        let (out2, _) = attn.forward(&x2, &x2, true);
        for t in 0..3 {
            for dch in 0..8 {
                assert_eq!(out.at2(t, dch), out2.at2(t, dch));
            }
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = Prng::new(109);
        let dir: Vec<f64> = (0..6 * 8).map(|_| rng.normal()).collect();
        let x = Tensor::randn(&[6, 8], 0.8, &mut rng);

        // Linear.
        let lin = Linear::new(8, 8, &mut rng);
        let (_, cache) = lin.forward(&x);
        let mut lin_b = lin.clone();
        let dy = Tensor::from_values(&[6, 8], dir.clone()).unwrap();
        let dx = lin_b.backward(&cache, &dy);
        let err = grad_check(
            &mut |t: &Tensor| proj(&lin.forward(t).0, &dir),
            &x,
            &dx,
            1e-6,
        );
        assert!(err <= 1e-6, "linear dx err {err}");
        let dw = Tensor::from_values(&[8, 8], lin_b.w.grad().unwrap().to_vec()).unwrap();
        let err = grad_check(
            &mut |wt: &Tensor| {
                let mut alt = lin.clone();
                alt.w = wt.clone();
                proj(&alt.forward(&x).0, &dir)
            },
            &lin.w,
            &dw,
            1e-6,
        );
        assert!(err <= 1e-6, "linear dw err {err}");

        // LayerNormAffine.
        let ln = LayerNormAffine::new(8);
        let (_, cache) = ln.forward(&x);
        let mut ln_b = ln.clone();
        let dx = ln_b.backward(&cache, &dy);
        let err = grad_check(
            &mut |t: &Tensor| proj(&ln.forward(t).0, &dir),
            &x,
            &dx,
            1e-6,
        );
        assert!(err <= 1e-5, "ln dx err {err}");

        // Attention (self, causal and not).
        for causal in [false, true] {
            let attn = MultiHeadAttention::new(8, 2, &mut rng);
            let (_, cache) = attn.forward(&x, &x, causal);
            let mut attn_b = attn.clone();
            let (dq, dkv) = attn_b.backward(&cache, &dy);
            let dx = tensor::add(&dq, &dkv).unwrap();
            let err = grad_check(
                &mut |t: &Tensor| proj(&attn.forward(t, t, causal).0, &dir),
                &x,
                &dx,
                1e-6,
            );
            assert!(err <= 1e-5, "attn causal={causal} dx err {err}");
        }

        // Feed-forward.
        let ff = FeedForward::new(8, 16, &mut rng);
        let (_, cache) = ff.forward(&x);
        let mut ff_b = ff.clone();
        let dx = ff_b.backward(&cache, &dy);
        let err = grad_check(&mut |t: &Tensor| proj(&ff.forward(t).0, &dir), &x, &dx, 1e-6);
        assert!(err <= 1e-5, "ff dx err {err}");

        // Full block.
        let block = TransformerBlock::new(8, 2, 16, &mut rng);
        let (_, cache) = block.forward(&x);
        let mut block_b = block.clone();
        let dx = block_b.backward(&cache, &dy);
        let err = grad_check(
            &mut |t: &Tensor| proj(&block.forward(t).0, &dir),
            &x,
            &dx,
            1e-6,
        );
        assert!(err <= 1e-5, "block dx err {err}");

        // Positional conv.
        let pc = PosConv::new(8, 5, &mut rng);
        let (_, cache) = pc.forward(&x);
        let mut pc_b = pc.clone();
        let dx = pc_b.backward(&cache, &dy);
        let err = grad_check(&mut |t: &Tensor| proj(&pc.forward(t).0, &dir), &x, &dx, 1e-6);
        assert!(err <= 1e-6, "posconv dx err {err}");
    }

    #[test]
    fn posconv_preserves_length() {
        let mut rng = Prng::new(113);
        let pc = PosConv::new(4, 9, &mut rng);
        for t in [1usize, 3, 10] {
            let x = Tensor::randn(&[t, 4], 1.0, &mut rng);
            let (y, _) = pc.forward(&x);
            assert_eq!(y.dims(), &[t, 4]);
        }
    }
}
