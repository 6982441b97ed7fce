//! 8 kHz to 16 kHz upsampling: zero-stuffing followed by a 31-tap
//! Hann-windowed sinc low-pass at half the output Nyquist. Even output
//! samples copy the input exactly; odd samples are interpolated. Output
//! length is exactly twice the input length.

use super::{AudioError, Result, Waveform};

const HALF_TAPS: i64 = 15; // 31 taps total

fn filter_tap(k: i64) -> f64 {
    // Ideal low-pass with normalized cutoff 0.25 cycles/sample, Hann window.
    // sin(pi*k/2) is evaluated exactly so even taps vanish and the even
    // output samples copy the input bit for bit.
    let kf = k as f64;
    let sinc = if k == 0 {
        1.0
    } else if k % 2 == 0 {
        0.0
    } else {
        let sign = if k.rem_euclid(4) == 1 { 1.0 } else { -1.0 };
        sign / (std::f64::consts::PI * kf / 2.0)
    };
    let window = 0.5 * (1.0 + (std::f64::consts::PI * kf / 15.0).cos());
    0.5 * sinc * window
}

pub fn resample_8k_to_16k(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate != 8000 {
        return Err(AudioError::WrongRate {
            expected: 8000,
            got: w.sample_rate,
        });
    }
    let n = w.samples.len();
    let mut out = vec![0.0f64; 2 * n];
    for (m, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in -HALF_TAPS..=HALF_TAPS {
            let j = m as i64 - k;
            // Zero-stuffed input: only even positions carry samples.
            if j >= 0 && j % 2 == 0 {
                let i = (j / 2) as usize;
                if i < n {
                    acc += filter_tap(k) * w.samples[i];
                }
            }
        }
        // Interpolation gain 2 compensates the stuffed zeros; clamp the
        // tiny passband ripple so the waveform invariant holds.
        *slot = (2.0 * acc).clamp(-1.0, 1.0);
    }
    Ok(Waveform {
        samples: out,
        sample_rate: 16000,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 8000).unwrap()
    }

    #[test]
    fn output_is_exactly_twice_as_long() {
        let w = make(vec![0.0; 8000]);
        let up = resample_8k_to_16k(&w).unwrap();
        assert_eq!(up.len(), 16000);
        assert_eq!(up.sample_rate, 16000);
    }

    #[test]
    fn wrong_input_rate_is_rejected() {
        let w = Waveform::new(vec![0.0; 10], 16000).unwrap();
        assert!(matches!(
            resample_8k_to_16k(&w),
            Err(AudioError::WrongRate {
                expected: 8000,
                got: 16000
            })
        ));
    }

    #[test]
    fn dc_signal_passes_through() {
        let w = make(vec![0.5; 400]);
        let up = resample_8k_to_16k(&w).unwrap();
        // Edges lose window support; interior samples keep the level.
        for (i, &s) in up.samples.iter().enumerate().skip(32).take(up.len() - 64) {
            assert!((s - 0.5).abs() < 1e-3, "sample {i}: {s}");
        }
    }

    /// DFT oracle: the dominant bin of the upsampled sine must sit at the
    /// original frequency.
    #[test]
    fn sine_frequency_is_preserved() {
        let n = 4000; // 0.5 s at 8 kHz
        let f = 440.0;
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * f * i as f64 / 8000.0).sin())
            .collect();
        let up = resample_8k_to_16k(&make(samples)).unwrap();
        let m = up.len();
        let mut best_bin = 0;
        let mut best_mag = 0.0;
        for bin in 1..m / 2 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            let step = 2.0 * std::f64::consts::PI * bin as f64 / m as f64;
            for (i, &s) in up.samples.iter().enumerate() {
                let phase = step * i as f64;
                re += s * phase.cos();
                im -= s * phase.sin();
            }
            let mag = re * re + im * im;
            if mag > best_mag {
                best_mag = mag;
                best_bin = bin;
            }
        }
        let bin_hz = 16000.0 / m as f64;
        let expect_bin = (f / bin_hz).round() as usize;
        assert!(
            (best_bin as i64 - expect_bin as i64).abs() <= 1,
            "dominant bin {best_bin} ({} Hz), expected ~{expect_bin}",
            best_bin as f64 * bin_hz
        );
    }

    #[test]
    fn resampling_is_linear() {
        let mut rng = crate::rng::Prng::new(13);
        let x: Vec<f64> = (0..200).map(|_| rng.uniform_in(-0.4, 0.4)).collect();
        let a = 2.0;
        let scaled: Vec<f64> = x.iter().map(|v| v * a / 2.5).collect();
        let x_small: Vec<f64> = x.iter().map(|v| v / 2.5).collect();
        let up_scaled = resample_8k_to_16k(&make(scaled)).unwrap();
        let up_plain = resample_8k_to_16k(&make(x_small)).unwrap();
        for (s, p) in up_scaled.samples.iter().zip(&up_plain.samples) {
            assert!((s - a * p).abs() <= 1e-12);
        }
    }

    #[test]
    fn even_samples_copy_the_input() {
        let mut rng = crate::rng::Prng::new(19);
        let x: Vec<f64> = (0..100).map(|_| rng.uniform_in(-0.9, 0.9)).collect();
        let up = resample_8k_to_16k(&make(x.clone())).unwrap();
        for (i, &v) in x.iter().enumerate() {
            assert_eq!(up.samples[2 * i], v);
        }
    }
}
