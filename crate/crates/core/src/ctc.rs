//! CTC objective and greedy decoding.
//!
//! Blank is id 0 everywhere. The loss runs a log-space forward recursion
//! over the extended target lattice (blanks interleaved between labels);
//! the gradient comes from the matching backward recursion, so no autodiff
//! is involved and the pair can be checked against finite differences and
//! an exhaustive path-sum oracle at small sizes.

use thiserror::Error;

use crate::tensor::Tensor;
use crate::util::{log_add, LOG_ZERO};

pub const BLANK: usize = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("target of length {target_len} with {repeats} adjacent repeats is infeasible in {frames} frames (needs {})", target_len + repeats)]
    Infeasible {
        frames: usize,
        target_len: usize,
        repeats: usize,
    },
    #[error("target id {id} out of range [1, {max}] (0 is reserved for blank)")]
    BadTargetId { id: usize, max: usize },
    #[error("log_probs must be [T x (V+1)] with V >= 1, got {dims:?}")]
    BadShape { dims: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, CtcError>;

/// Number of adjacent equal pairs in a target sequence.
pub fn adjacent_repeats(target: &[usize]) -> usize {
    target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Merge adjacent repeats, then delete blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &id in path {
        if id != prev && id != BLANK {
            out.push(id);
        }
        prev = id;
    }
    out
}

fn validate(log_probs: &Tensor, target: &[usize]) -> Result<(usize, usize)> {
    if log_probs.rank() != 2 || log_probs.cols() < 2 {
        return Err(CtcError::BadShape {
            dims: log_probs.dims().to_vec(),
        });
    }
    let (t, v1) = (log_probs.rows(), log_probs.cols());
    for &id in target {
        if id == BLANK || id >= v1 {
            return Err(CtcError::BadTargetId { id, max: v1 - 1 });
        }
    }
    let repeats = adjacent_repeats(target);
    if t < target.len() + repeats {
        return Err(CtcError::Infeasible {
            frames: t,
            target_len: target.len(),
            repeats,
        });
    }
    Ok((t, v1))
}

/// Extended lattice: blank, l1, blank, l2, ..., blank.
fn extended(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &id in target {
        ext.push(id);
        ext.push(BLANK);
    }
    ext
}

/// Negative log-likelihood of `target` under per-frame log-probabilities,
/// plus the analytic gradient with respect to every log-probability entry.
pub fn ctc_loss(log_probs: &Tensor, target: &[usize]) -> Result<(f64, Tensor)> {
    let (t_len, v1) = validate(log_probs, target)?;
    let ext = extended(target);
    let s_len = ext.len();
    let lp = |t: usize, k: usize| log_probs.at2(t, k);

    // Forward: alpha[t][s] includes the emission at frame t.
    let mut alpha = vec![vec![LOG_ZERO; s_len]; t_len];
    alpha[0][0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[0][1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            // Skip transition allowed between distinct non-blank labels.
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp(t, ext[s]) };
        }
    }
    let mut log_p = alpha[t_len - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[t_len - 1][s_len - 2]);
    }

    // Backward: beta[t][s] also includes the emission at frame t.
    let mut beta = vec![vec![LOG_ZERO; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s];
            if s + 1 < s_len {
                acc = log_add(acc, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                acc = log_add(acc, beta[t + 1][s + 2]);
            }
            beta[t][s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp(t, ext[s]) };
        }
    }

    // Posterior of passing through lattice state s at frame t; both alpha
    // and beta carry the frame-t emission, so subtract one copy.
    let mut grad = Tensor::zeros(&[t_len, v1]);
    for t in 0..t_len {
        for (s, &label) in ext.iter().enumerate() {
            let g = alpha[t][s] + beta[t][s] - lp(t, label);
            if g == LOG_ZERO || g.is_nan() {
                continue;
            }
            let posterior = (g - log_p).exp();
            grad.values_mut()[t * v1 + label] -= posterior;
        }
    }
    Ok((-log_p, grad))
}

/// Collapse of the per-frame argmax.
pub fn greedy_decode(log_probs: &Tensor) -> Vec<usize> {
    let (t_len, v1) = (log_probs.rows(), log_probs.cols());
    let mut path = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let row = log_probs.row(t);
        let mut best = 0;
        for k in 1..v1 {
            if row[k] > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse(&path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use crate::tensor::{grad_check, log_softmax};

    /// Independent oracle: total probability of a target as a sum over all
    /// (V+1)^T frame paths that collapse to it.
    pub fn brute_force_logp(log_probs: &Tensor, target: &[usize]) -> f64 {
        let (t_len, v1) = (log_probs.rows(), log_probs.cols());
        let mut total = LOG_ZERO;
        let mut path = vec![0usize; t_len];
        loop {
            if collapse(&path) == target {
                let lp: f64 = (0..t_len).map(|t| log_probs.at2(t, path[t])).sum();
                total = log_add(total, lp);
            }
            // Odometer increment over the path space.
            let mut pos = 0;
            loop {
                if pos == t_len {
                    return total;
                }
                path[pos] += 1;
                if path[pos] < v1 {
                    break;
                }
                path[pos] = 0;
                pos += 1;
            }
        }
    }

    fn random_log_probs(t: usize, v1: usize, rng: &mut Prng) -> Tensor {
        let x = Tensor::randn(&[t, v1], 1.0, rng);
        log_softmax(&x, 1).unwrap()
    }

    #[test]
    fn single_frame_uniform() {
        let lp = Tensor::filled(&[1, 2], (0.5f64).ln());
        let (loss, _) = ctc_loss(&lp, &[1]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn two_frames_uniform_enumerated_by_hand() {
        // Paths over {blank, a} of length 2 collapsing to "a":
        // (-,a), (a,-), (a,a) -> 3 of 4 equally likely paths.
        let lp = Tensor::filled(&[2, 2], (0.5f64).ln());
        let (loss, _) = ctc_loss(&lp, &[1]).unwrap();
        let expect = -(0.75f64).ln();
        assert!((loss - expect).abs() < 1e-12, "loss {loss} expect {expect}");
    }

    #[test]
    fn matches_exhaustive_path_sum_over_full_grid() {
        let mut rng = Prng::new(17);
        for t in 1..=4usize {
            for v in 1..=3usize {
                for target_len in 0..=2usize {
                    let targets = all_targets(v, target_len);
                    for target in targets {
                        for _ in 0..50 {
                            let lp = random_log_probs(t, v + 1, &mut rng);
                            let feasible = t >= target.len() + adjacent_repeats(&target);
                            match ctc_loss(&lp, &target) {
                                Ok((loss, _)) => {
                                    assert!(feasible);
                                    let oracle = -brute_force_logp(&lp, &target);
                                    let rel = (loss - oracle).abs() / oracle.abs().max(1e-30);
                                    assert!(rel <= 1e-10, "t={t} v={v} target={target:?} loss={loss} oracle={oracle}");
                                }
                                Err(CtcError::Infeasible { .. }) => {
                                    assert!(!feasible, "t={t} target={target:?}");
                                    assert_eq!(brute_force_logp(&lp, &target), LOG_ZERO);
                                }
                                Err(e) => panic!("unexpected error {e}"),
                            }
                        }
                    }
                }
            }
        }
    }

    fn all_targets(v: usize, len: usize) -> Vec<Vec<usize>> {
        if len == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for shorter in all_targets(v, len - 1) {
            for id in 1..=v {
                let mut t = shorter.clone();
                t.push(id);
                out.push(t);
            }
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Prng::new(23);
        for _ in 0..20 {
            let lp = random_log_probs(4, 3, &mut rng);
            let target = vec![1, 2];
            let (_, grad) = ctc_loss(&lp, &target).unwrap();
            let err = grad_check(
                &mut |t: &Tensor| ctc_loss(t, &target).unwrap().0,
                &lp,
                &grad,
                1e-6,
            );
            assert!(err <= 1e-5, "rel err {err}");
        }
    }

    #[test]
    fn collapse_definition_cases() {
        assert_eq!(collapse(&[0, 1, 1, 0, 2]), vec![1, 2]);
        assert_eq!(collapse(&[0, 0, 0]), Vec::<usize>::new());
        assert_eq!(collapse(&[1, 0, 1]), vec![1, 1]);
    }

    #[test]
    fn greedy_decode_one_hot_frames() {
        // Frames argmax to blank, a, b.
        let mut lp = Tensor::filled(&[3, 3], -10.0);
        lp.values_mut()[0] = -0.1; // frame 0 -> blank
        lp.values_mut()[1 * 3 + 1] = -0.1; // frame 1 -> a
        lp.values_mut()[2 * 3 + 2] = -0.1; // frame 2 -> b
        assert_eq!(greedy_decode(&lp), vec![1, 2]);
    }

    #[test]
    fn greedy_decode_all_blank_is_empty() {
        let mut lp = Tensor::filled(&[4, 3], -5.0);
        for t in 0..4 {
            lp.values_mut()[t * 3] = -0.01;
        }
        assert_eq!(greedy_decode(&lp), Vec::<usize>::new());
    }

    #[test]
    fn loss_is_covariant_under_unit_relabeling() {
        let mut rng = Prng::new(31);
        // Swap units 1 and 2 both in the table columns and in the target.
        let lp = random_log_probs(5, 4, &mut rng);
        let mut swapped = lp.clone();
        for t in 0..5 {
            let a = lp.at2(t, 1);
            let b = lp.at2(t, 2);
            swapped.values_mut()[t * 4 + 1] = b;
            swapped.values_mut()[t * 4 + 2] = a;
        }
        let (l1, _) = ctc_loss(&lp, &[1, 3, 2]).unwrap();
        let (l2, _) = ctc_loss(&swapped, &[2, 3, 1]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn feasibility_boundary_is_exact() {
        let mut rng = Prng::new(37);
        // "aa" needs len + repeats = 3 frames, "ab" needs 2.
        for (target, min_t) in [(vec![1, 1], 3usize), (vec![1, 2], 2)] {
            let lp_short = random_log_probs(min_t - 1, 3, &mut rng);
            assert!(matches!(
                ctc_loss(&lp_short, &target),
                Err(CtcError::Infeasible { .. })
            ));
            let lp_exact = random_log_probs(min_t, 3, &mut rng);
            let (loss, _) = ctc_loss(&lp_exact, &target).unwrap();
            assert!(loss.is_finite());
        }
    }

    #[test]
    fn blank_target_id_is_rejected() {
        let lp = Tensor::filled(&[2, 3], (1.0f64 / 3.0).ln());
        assert!(matches!(
            ctc_loss(&lp, &[0]),
            Err(CtcError::BadTargetId { .. })
        ));
    }

    #[test]
    fn empty_target_is_all_blanks_probability() {
        let lp = Tensor::filled(&[2, 2], (0.5f64).ln());
        let (loss, _) = ctc_loss(&lp, &[]).unwrap();
        // Only path: (-,-) with probability 1/4.
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
    }
}
