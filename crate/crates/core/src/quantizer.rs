//! Product quantization of latent frames with Gumbel-softmax selection.
//!
//! Each frame is projected to d_q dims and split into G groups; group g
//! picks among V codebook entries by dot-product logits. Hard mode keeps
//! the argmax entry on the forward pass but backpropagates through the
//! soft selection probabilities (straight-through). The same probabilities
//! feed the usage diagnostics and the diversity regularizer.

use thiserror::Error;

use crate::model::layers::{Linear, LinearCache};
use crate::rng::Prng;
use crate::tensor::{softmax, softmax_backward, Tensor};

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("bad codebook config: {0}")]
    BadConfig(String),
}

pub type Result<T> = std::result::Result<T, QuantizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizeMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone)]
pub struct Codebook {
    pub groups: usize,
    pub entries_per_group: usize,
    /// [G, V, d_q / G]
    pub entries: Tensor,
    /// d_z -> d_q
    pub proj: Linear,
}

impl Codebook {
    pub fn new(
        latent_dim: usize,
        quantized_dim: usize,
        groups: usize,
        entries_per_group: usize,
        rng: &mut Prng,
    ) -> Result<Codebook> {
        if groups == 0 || entries_per_group < 2 {
            return Err(QuantizerError::BadConfig(format!(
                "need groups >= 1 and entries >= 2, got G={groups} V={entries_per_group}"
            )));
        }
        if quantized_dim % groups != 0 {
            return Err(QuantizerError::BadConfig(format!(
                "quantized dim {quantized_dim} not divisible by {groups} groups"
            )));
        }
        let scale = 1.0 / (quantized_dim as f64).sqrt();
        Ok(Codebook {
            groups,
            entries_per_group,
            entries: Tensor::rand_uniform(
                &[groups, entries_per_group, quantized_dim / groups],
                scale,
                rng,
            ),
            proj: Linear::new(latent_dim, quantized_dim, rng),
        })
    }

    pub fn quantized_dim(&self) -> usize {
        self.groups * self.group_dim()
    }

    pub fn group_dim(&self) -> usize {
        self.entries.dims()[2]
    }

    /// Distinct composite codes: V^G.
    pub fn code_space(&self) -> usize {
        self.entries_per_group.pow(self.groups as u32)
    }

    fn entry(&self, g: usize, v: usize) -> &[f64] {
        let dg = self.group_dim();
        let base = (g * self.entries_per_group + v) * dg;
        &self.entries.values()[base..base + dg]
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.entries"), &self.entries));
        self.proj.params(&format!("{prefix}.proj"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.entries"), &mut self.entries));
        self.proj.params_mut(&format!("{prefix}.proj"), out);
    }
}

/// Per-frame quantized vectors plus the selected code ids.
#[derive(Debug, Clone)]
pub struct QuantizedTargets {
    /// [T, d_q]
    pub vectors: Tensor,
    /// [T][G] entry indices in [0, V).
    pub codes: Vec<Vec<usize>>,
    /// [T, G*V] selection probabilities, rows grouped by g.
    pub probs: Tensor,
}

impl QuantizedTargets {
    /// Single id in [0, V^G) combining all group choices of a frame.
    pub fn composite_code(&self, frame: usize, entries_per_group: usize) -> usize {
        self.codes[frame]
            .iter()
            .fold(0, |acc, &c| acc * entries_per_group + c)
    }
}

pub struct QuantizeCache {
    proj_cache: LinearCache,
    projected: Tensor,
    temperature: f64,
}

/// Quantize latent rows [T, d_z]. `rng: None` disables Gumbel noise.
pub fn quantize(
    cb: &Codebook,
    z: &Tensor,
    temperature: f64,
    mode: QuantizeMode,
    mut rng: Option<&mut Prng>,
) -> Result<(QuantizedTargets, QuantizeCache)> {
    if temperature <= 0.0 {
        return Err(QuantizerError::BadTemperature(temperature));
    }
    let t = z.dims()[0];
    let (g_count, v_count, dg) = (cb.groups, cb.entries_per_group, cb.group_dim());
    let (projected, proj_cache) = cb.proj.forward(z);
    let mut noisy_logits = Tensor::zeros(&[t, g_count * v_count]);
    for ti in 0..t {
        for g in 0..g_count {
            let s = &projected.row(ti)[g * dg..(g + 1) * dg];
            for v in 0..v_count {
                let e = cb.entry(g, v);
                let mut logit: f64 = s.iter().zip(e).map(|(a, b)| a * b).sum();
                if let Some(r) = rng.as_deref_mut() {
                    logit += r.gumbel();
                }
                noisy_logits.values_mut()[ti * g_count * v_count + g * v_count + v] =
                    logit / temperature;
            }
        }
    }
    // Softmax within each group.
    let grouped = noisy_logits
        .reshaped(&[t * g_count, v_count])
        .expect("group reshape");
    let probs_grouped = softmax(&grouped, 1).expect("gumbel softmax");
    let probs = probs_grouped
        .reshaped(&[t, g_count * v_count])
        .expect("probs reshape");

    let mut vectors = Tensor::zeros(&[t, g_count * dg]);
    let mut codes = Vec::with_capacity(t);
    for ti in 0..t {
        let mut frame_codes = Vec::with_capacity(g_count);
        for g in 0..g_count {
            let p = &probs.row(ti)[g * v_count..(g + 1) * v_count];
            let mut best = 0;
            for v in 1..v_count {
                if p[v] > p[best] {
                    best = v;
                }
            }
            frame_codes.push(best);
            let dst_range = g * dg..(g + 1) * dg;
            match mode {
                QuantizeMode::Hard => {
                    let e = cb.entry(g, best);
                    vectors.row_mut(ti)[dst_range].copy_from_slice(e);
                }
                QuantizeMode::Soft => {
                    for (v, &pv) in p.iter().enumerate() {
                        let e = cb.entry(g, v);
                        for (slot, ev) in vectors.row_mut(ti)[dst_range.clone()].iter_mut().zip(e)
                        {
                            *slot += pv * ev;
                        }
                    }
                }
            }
        }
        codes.push(frame_codes);
    }
    Ok((
        QuantizedTargets {
            vectors,
            codes,
            probs,
        },
        QuantizeCache {
            proj_cache,
            projected,
            temperature,
        },
    ))
}

/// Straight-through backward: gradients on the quantized vectors and on
/// the selection probabilities flow to the codebook entries, the
/// projection, and back to z. Returns dZ.
pub fn quantize_backward(
    cb: &mut Codebook,
    targets: &QuantizedTargets,
    cache: &QuantizeCache,
    d_vectors: &Tensor,
    d_probs_extra: Option<&Tensor>,
) -> Tensor {
    let t = d_vectors.dims()[0];
    let (g_count, v_count, dg) = (cb.groups, cb.entries_per_group, cb.group_dim());
    let mut d_entries = Tensor::zeros(cb.entries.dims());
    let mut d_probs = Tensor::zeros(&[t, g_count * v_count]);

    // Vector path: vec_g = sum_v p_v * e_gv on the backward side.
    for ti in 0..t {
        for g in 0..g_count {
            let dvec = &d_vectors.row(ti)[g * dg..(g + 1) * dg];
            let p = &targets.probs.row(ti)[g * v_count..(g + 1) * v_count];
            for v in 0..v_count {
                let e = cb.entry(g, v);
                let dp: f64 = dvec.iter().zip(e).map(|(a, b)| a * b).sum();
                d_probs.values_mut()[ti * g_count * v_count + g * v_count + v] += dp;
                let base = (g * v_count + v) * dg;
                for (k, dv) in dvec.iter().enumerate() {
                    d_entries.values_mut()[base + k] += p[v] * dv;
                }
            }
        }
    }
    if let Some(extra) = d_probs_extra {
        for (slot, e) in d_probs.values_mut().iter_mut().zip(extra.values()) {
            *slot += e;
        }
    }

    // Through the grouped softmax and the temperature scale.
    let probs_grouped = targets
        .probs
        .reshaped(&[t * g_count, v_count])
        .expect("probs reshape");
    let d_probs_grouped = d_probs
        .reshaped(&[t * g_count, v_count])
        .expect("grad reshape");
    let mut d_logits = softmax_backward(&probs_grouped, &d_probs_grouped, 1);
    for v in d_logits.values_mut() {
        *v /= cache.temperature;
    }

    // logits[g,v] = s_g . e_gv.
    let mut d_projected = Tensor::zeros(cache.projected.dims());
    for ti in 0..t {
        for g in 0..g_count {
            let s = &cache.projected.row(ti)[g * dg..(g + 1) * dg];
            for v in 0..v_count {
                let dl = d_logits.values()[(ti * g_count + g) * v_count + v];
                if dl == 0.0 {
                    continue;
                }
                let e = cb.entry(g, v);
                let base = (g * v_count + v) * dg;
                for k in 0..dg {
                    d_projected.values_mut()[ti * g_count * dg + g * dg + k] += dl * e[k];
                    d_entries.values_mut()[base + k] += dl * s[k];
                }
            }
        }
    }
    cb.entries.accumulate_grad(&d_entries);
    cb.proj.backward(&cache.proj_cache, &d_projected)
}

/// Per-group perplexity of the batch-mean selection distribution, in [1, V].
pub fn codebook_perplexity(probs: &Tensor, groups: usize, entries_per_group: usize) -> Vec<f64> {
    let t = probs.dims()[0];
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut mean = vec![0.0f64; entries_per_group];
        for ti in 0..t {
            let p = &probs.row(ti)[g * entries_per_group..(g + 1) * entries_per_group];
            for (m, &pv) in mean.iter_mut().zip(p) {
                *m += pv / t as f64;
            }
        }
        let entropy: f64 = mean
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        out.push(entropy.exp());
    }
    out
}

/// L_d = (1/G) sum_g (1 - ppl_g / V), differentiable; returns the loss and
/// its gradient with respect to every selection probability.
pub fn diversity_loss(probs: &Tensor, groups: usize, entries_per_group: usize) -> (f64, Tensor) {
    let t = probs.dims()[0];
    let v = entries_per_group;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(probs.dims());
    for g in 0..groups {
        let mut mean = vec![0.0f64; v];
        for ti in 0..t {
            let p = &probs.row(ti)[g * v..(g + 1) * v];
            for (m, &pv) in mean.iter_mut().zip(p) {
                *m += pv / t as f64;
            }
        }
        let entropy: f64 = mean.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        let ppl = entropy.exp();
        loss += (1.0 - ppl / v as f64) / groups as f64;
        // dL/dmean_v = (ppl / (G*V)) * (ln mean_v + 1), then mean over frames.
        for (vi, &m) in mean.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            let dmean = (ppl / (groups * v) as f64) * (m.ln() + 1.0);
            for ti in 0..t {
                grad.values_mut()[ti * groups * v + g * v + vi] += dmean / t as f64;
            }
        }
    }
    (loss, grad)
}

/// Multiplicative temperature anneal: 2.0 -> 0.5 by factor 0.9995 per step.
pub fn anneal_temperature(step: usize) -> f64 {
    (2.0 * 0.9995f64.powi(step as i32)).max(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn toy_codebook(rng: &mut Prng) -> Codebook {
        Codebook::new(6, 8, 2, 4, rng).unwrap()
    }

    #[test]
    fn near_zero_temperature_without_noise_is_argmax() {
        let mut rng = Prng::new(443);
        let cb = toy_codebook(&mut rng);
        let z = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let (targets, _) = quantize(&cb, &z, 1e-6, QuantizeMode::Soft, None).unwrap();
        let (projected, _) = cb.proj.forward(&z);
        for ti in 0..3 {
            for g in 0..2 {
                let s = &projected.row(ti)[g * 4..(g + 1) * 4];
                let mut best = 0;
                let mut best_l = f64::NEG_INFINITY;
                for v in 0..4 {
                    let l: f64 = s.iter().zip(cb.entry(g, v)).map(|(a, b)| a * b).sum();
                    if l > best_l {
                        best_l = l;
                        best = v;
                    }
                }
                assert_eq!(targets.codes[ti][g], best);
                let p = &targets.probs.row(ti)[g * 4..(g + 1) * 4];
                assert!(p[best] > 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn code_space_is_v_to_the_g() {
        let mut rng = Prng::new(449);
        let cb = Codebook::new(4, 8, 2, 8, &mut rng).unwrap();
        assert_eq!(cb.code_space(), 64);
        // Composite ids cover [0, 64) bijectively over group choices.
        let mut seen = std::collections::HashSet::new();
        for a in 0..8 {
            for b in 0..8 {
                let t = QuantizedTargets {
                    vectors: Tensor::zeros(&[1, 8]),
                    codes: vec![vec![a, b]],
                    probs: Tensor::zeros(&[1, 16]),
                };
                seen.insert(t.composite_code(0, 8));
            }
        }
        assert_eq!(seen.len(), 64);
        assert_eq!(*seen.iter().max().unwrap(), 63);
    }

    #[test]
    fn soft_vectors_are_barycentric_reconstructions() {
        let mut rng = Prng::new(457);
        let cb = toy_codebook(&mut rng);
        let z = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let mut noise = Prng::new(1);
        let (targets, _) = quantize(&cb, &z, 1.3, QuantizeMode::Soft, Some(&mut noise)).unwrap();
        for ti in 0..5 {
            for g in 0..2 {
                let p = &targets.probs.row(ti)[g * 4..(g + 1) * 4];
                let total: f64 = p.iter().sum();
                assert!((total - 1.0).abs() <= 1e-12);
                let mut recon = vec![0.0f64; 4];
                for (v, &pv) in p.iter().enumerate() {
                    for (r, e) in recon.iter_mut().zip(cb.entry(g, v)) {
                        *r += pv * e;
                    }
                }
                let got = &targets.vectors.row(ti)[g * 4..(g + 1) * 4];
                for (a, b) in recon.iter().zip(got) {
                    assert!((a - b).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn straight_through_gradient_matches_soft_finite_differences() {
        let mut rng = Prng::new(461);
        let cb = toy_codebook(&mut rng);
        let z = Tensor::randn(&[4, 6], 0.8, &mut rng);
        let dir: Vec<f64> = (0..4 * 8).map(|_| rng.normal()).collect();
        let tau = 0.9;

        let run = |cb: &Codebook, z: &Tensor| -> f64 {
            let (t, _) = quantize(cb, z, tau, QuantizeMode::Soft, None).unwrap();
            t.vectors.values().iter().zip(&dir).map(|(a, b)| a * b).sum()
        };

        let (targets, cache) = quantize(&cb, &z, tau, QuantizeMode::Soft, None).unwrap();
        let d_vec = Tensor::from_values(&[4, 8], dir.clone()).unwrap();
        let mut cb_b = cb.clone();
        let dz = quantize_backward(&mut cb_b, &targets, &cache, &d_vec, None);

        let err_z = grad_check(&mut |t: &Tensor| run(&cb, t), &z, &dz, 1e-6);
        assert!(err_z <= 1e-4, "dz err {err_z}");

        let d_entries =
            Tensor::from_values(cb.entries.dims(), cb_b.entries.grad().unwrap().to_vec()).unwrap();
        let err_e = grad_check(
            &mut |e: &Tensor| {
                let mut alt = cb.clone();
                alt.entries = e.clone();
                run(&alt, &z)
            },
            &cb.entries,
            &d_entries,
            1e-6,
        );
        assert!(err_e <= 1e-4, "dentries err {err_e}");
    }

    #[test]
    fn hard_mode_uses_argmax_entry() {
        let mut rng = Prng::new(463);
        let cb = toy_codebook(&mut rng);
        let z = Tensor::randn(&[2, 6], 1.0, &mut rng);
        let (hard, _) = quantize(&cb, &z, 0.8, QuantizeMode::Hard, None).unwrap();
        for ti in 0..2 {
            for g in 0..2 {
                let e = cb.entry(g, hard.codes[ti][g]);
                assert_eq!(&hard.vectors.row(ti)[g * 4..(g + 1) * 4], e);
            }
        }
    }

    #[test]
    fn perplexity_bounds_and_cases() {
        let v = 8;
        let uniform = Tensor::filled(&[10, v], 1.0 / v as f64);
        let ppl = codebook_perplexity(&uniform, 1, v);
        assert!((ppl[0] - v as f64).abs() < 1e-9);
        let mut collapsed = Tensor::zeros(&[10, v]);
        for t in 0..10 {
            collapsed.values_mut()[t * v] = 1.0;
        }
        let ppl = codebook_perplexity(&collapsed, 1, v);
        assert!((ppl[0] - 1.0).abs() < 1e-9);
        // Two codes used 50/50: exp(ln 2) = 2.
        let mut two = Tensor::zeros(&[10, v]);
        for t in 0..10 {
            two.values_mut()[t * v + (t % 2)] = 1.0;
        }
        let ppl = codebook_perplexity(&two, 1, v);
        assert!((ppl[0] - 2.0).abs() < 1e-9, "ppl {}", ppl[0]);
    }

    #[test]
    fn perplexity_stays_in_range_for_random_simplices() {
        let mut rng = Prng::new(467);
        for _ in 0..50 {
            let logits = Tensor::randn(&[6, 8], 2.0, &mut rng);
            let probs = softmax(&logits, 1).unwrap();
            let ppl = codebook_perplexity(&probs, 1, 8);
            assert!(ppl[0] >= 1.0 - 1e-12 && ppl[0] <= 8.0 + 1e-12);
        }
    }

    #[test]
    fn diversity_loss_cases_and_gradient() {
        let v = 8;
        let uniform = Tensor::filled(&[6, v], 1.0 / v as f64);
        let (l, _) = diversity_loss(&uniform, 1, v);
        assert!(l.abs() < 1e-12);
        let mut collapsed = Tensor::zeros(&[6, v]);
        for t in 0..6 {
            collapsed.values_mut()[t * v] = 1.0;
        }
        let (l, _) = diversity_loss(&collapsed, 1, v);
        assert!((l - (1.0 - 1.0 / v as f64)).abs() < 1e-12);

        let mut rng = Prng::new(479);
        let logits = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let probs = softmax(&logits, 1).unwrap();
        let (_, grad) = diversity_loss(&probs, 2, 4);
        let err = grad_check(
            &mut |p: &Tensor| diversity_loss(p, 2, 4).0,
            &probs,
            &grad,
            1e-6,
        );
        assert!(err <= 1e-5, "diversity grad err {err}");
    }

    #[test]
    fn quantization_is_deterministic_given_seed() {
        let mut rng = Prng::new(487);
        let cb = toy_codebook(&mut rng);
        let z = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let run = |seed: u64| {
            let mut noise = Prng::new(seed);
            let (t, _) = quantize(&cb, &z, 1.0, QuantizeMode::Hard, Some(&mut noise)).unwrap();
            (t.codes.clone(), t.vectors.clone())
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn temperature_anneal_schedule() {
        assert!((anneal_temperature(0) - 2.0).abs() < 1e-12);
        assert!(anneal_temperature(1) < 2.0);
        assert_eq!(anneal_temperature(100_000), 0.5);
    }
}
