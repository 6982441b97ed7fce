//! Desk-scale self-supervised speech recognition toolkit.
//!
//! The pipeline runs end to end on a single CPU core: a convolutional
//! feature encoder plus self-attention context network is pretrained with a
//! quantized contrastive objective on unlabeled audio, fine-tuned with CTC
//! or an attention decoder over letter/char/subword units, and decoded with
//! n-gram-LM-fused prefix beam search. Every numeric component carries an
//! independent oracle (finite differences, exhaustive path sums, DFT checks)
//! so correctness does not depend on large corpora.

pub mod audio;
pub mod beam;
pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod finetune;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod quantizer;
pub mod rng;
pub mod studies;
pub mod tensor;
pub mod units;
pub mod util;

pub use rng::Prng;
pub use tensor::Tensor;
