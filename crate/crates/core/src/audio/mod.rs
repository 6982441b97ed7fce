//! Audio IO: WAV files, 8k-to-16k resampling, the synthetic labeled
//! corpus, and experiment manifests.

mod manifest;
mod resample;
mod synth;
mod wav;

pub use manifest::{load_manifest, write_manifest, ManifestEntry};
pub use resample::resample_8k_to_16k;
pub use synth::{synth_corpus, write_alignment, SynthSpec, SynthUtterance};
pub use wav::{read_wav, wav_duration_seconds, write_wav};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {field} = {value} is not supported ({expected})")]
    Format {
        path: String,
        field: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("{path}: truncated while reading {what}")]
    Truncated { path: String, what: &'static str },
    #[error("expected sample rate {expected} Hz, got {got} Hz")]
    WrongRate { expected: u32, got: u32 },
    #[error("waveform sample {index} = {value} outside [-1, 1]")]
    Clipped { index: usize, value: f64 },
    #[error("synthetic unit inventory invalid: {0}")]
    BadSynthSpec(String),
    #[error("manifest {path} has errors:\n{}", problems.join("\n"))]
    Manifest { path: String, problems: Vec<String> },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono audio in [-1, 1] at 8 or 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Waveform> {
        if sample_rate != 8000 && sample_rate != 16000 {
            return Err(AudioError::WrongRate {
                expected: 16000,
                got: sample_rate,
            });
        }
        for (index, &value) in samples.iter().enumerate() {
            if !(-1.0..=1.0).contains(&value) {
                return Err(AudioError::Clipped { index, value });
            }
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
