//! Adam and the warmup/hold/decay learning-rate schedule.

use std::collections::HashMap;

use crate::tensor::Tensor;

/// Linear warmup to a peak, hold, then per-step exponential decay.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub warmup_steps: usize,
    pub peak: f64,
    pub hold_steps: usize,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            warmup_steps: 8000,
            peak: 4e-5,
            hold_steps: 42000,
            decay: 0.99999,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return self.peak;
            }
            self.peak * step as f64 / self.warmup_steps as f64
        } else if step <= self.warmup_steps + self.hold_steps {
            self.peak
        } else {
            self.peak * self.decay.powi((step - self.warmup_steps - self.hold_steps) as i32)
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; first/second moments are keyed by parameter
/// name so freezing or re-initializing heads keeps state consistent.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: usize,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Apply one update to every parameter that has a gradient buffer,
    /// skipping names the filter rejects. Gradients are left cleared.
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [(String, &mut Tensor)],
        trainable: &dyn Fn(&str) -> bool,
    ) {
        self.step += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (name, tensor) in params.iter_mut() {
            if !trainable(name) {
                tensor.zero_grad();
                continue;
            }
            let n = tensor.len();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let Some(grad) = tensor.grad() else { continue };
            let grad = grad.to_vec();
            let values = tensor.values_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            tensor.zero_grad();
        }
    }

    /// Drop optimizer state for parameters matching the prefix (used when
    /// a head is re-initialized for a new inventory).
    pub fn reset_prefix(&mut self, prefix: &str) {
        self.moments.retain(|name, _| !name.starts_with(prefix));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_hits_published_points() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(4000) - 2e-5).abs() < 1e-18);
        assert!((s.lr(8000) - 4e-5).abs() < 1e-18);
        assert!((s.lr(29000) - 4e-5).abs() < 1e-18);
        assert!((s.lr(50000) - 4e-5).abs() < 1e-18);
        assert!(s.lr(50001) < 4e-5);
    }

    #[test]
    fn schedule_is_continuous_at_joints() {
        let s = LrSchedule::default();
        // End of warmup meets the hold level exactly.
        assert!((s.lr(8000) - s.peak).abs() <= 1e-18);
        // Decay starts from the peak: decay^0 = 1.
        assert!((s.lr(50000) - s.peak).abs() <= 1e-18);
        let step_drop = s.lr(50000) - s.lr(50001);
        assert!(step_drop > 0.0 && step_drop < 1e-9);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut t = Tensor::scalar(1.0);
        t.grad_mut()[0] = 2.0;
        let mut params = vec![("x".to_string(), &mut t)];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(0.1, &mut params, &(|_| true));
        assert!(t.values()[0] < 1.0);
        assert_eq!(t.grad().unwrap()[0], 0.0);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut a = Tensor::scalar(1.0);
        a.grad_mut()[0] = 5.0;
        let mut b = Tensor::scalar(1.0);
        b.grad_mut()[0] = 5.0;
        let mut adam = Adam::new(AdamConfig::default());
        {
            let mut params = vec![("encoder.w".to_string(), &mut a), ("head.w".to_string(), &mut b)];
            adam.step(0.1, &mut params, &(|name: &str| !name.starts_with("encoder.")));
        }
        assert_eq!(a.values()[0], 1.0);
        assert!(b.values()[0] < 1.0);
    }

    #[test]
    fn repeated_steps_are_deterministic() {
        let run = || {
            let mut t = Tensor::from_values(&[2], vec![0.5, -0.25]).unwrap();
            let mut adam = Adam::new(AdamConfig::default());
            for i in 0..10 {
                t.grad_mut()[0] = (i as f64).sin();
                t.grad_mut()[1] = (i as f64).cos();
                let mut params = vec![("t".to_string(), &mut t)];
                adam.step(0.01, &mut params, &(|_| true));
            }
            t.values().to_vec()
        };
        assert_eq!(run(), run());
    }
}
