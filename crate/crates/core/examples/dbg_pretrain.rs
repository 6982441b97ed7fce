// Minimal pretraining loop on a fixed batch: loss must fall steadily if
// the gradient wiring is right.

use mssl::model::{AcousticModel, EncoderConfig};
use mssl::optim::{Adam, AdamConfig};
use mssl::pretrain::{contrastive_loss, sample_distractors, sample_mask, MaskSpec};
use mssl::quantizer::{self, Codebook, QuantizeMode};
use mssl::rng::Prng;
use mssl::tensor::Tensor;

fn main() {
    let mut rng = Prng::new(7);
    let cfg = EncoderConfig {
        conv_layers: vec![(16, 10, 5), (16, 3, 2), (16, 3, 2), (16, 2, 2)],
        context_layers: 2,
        model_dim: 32,
        attention_heads: 4,
        ff_dim: 64,
        pos_kernel: 9,
    };
    let mut model = AcousticModel::new(&cfg, &mut rng).unwrap();
    let mut codebook = Codebook::new(16, 32, 2, 16, &mut rng).unwrap();
    let mut opt = Adam::new(AdamConfig::default());

    // One synthetic utterance.
    let spec = mssl::audio::SynthSpec {
        seed: 3,
        ..mssl::audio::SynthSpec::default()
    };
    let utts = mssl::audio::synth_corpus(&spec, 2, 4).unwrap();
    let waves: Vec<Vec<f64>> = utts.iter().map(|u| u.waveform.samples.clone()).collect();

    let mask_spec = MaskSpec {
        start_prob: 0.15,
        span: 3,
    };
    let kappa = 0.1;

    for step in 0..200 {
        let mut total = 0.0;
        for (ui, samples) in waves.iter().enumerate() {
            let mut mask_rng = Prng::derive(99, &format!("utt{ui}")); // fixed mask per utt
            let (z, enc_cache) = model.encode(samples, 16000).unwrap();
            let mask = sample_mask(z.len(), &mask_spec, &mut mask_rng).unwrap();
            let (ctx, ctx_cache) = model.contextualize(&z.frames, Some(&mask)).unwrap();
            let dz_dim = z.frames.dims()[1];
            let mut z_masked = Tensor::zeros(&[mask.len(), dz_dim]);
            for (row, &fi) in mask.iter().enumerate() {
                z_masked.row_mut(row).copy_from_slice(z.frames.row(fi));
            }
            let (targets, q_cache) =
                quantizer::quantize(&codebook, &z_masked, 0.5, QuantizeMode::Hard, None).unwrap();
            let d = ctx.frames.dims()[1];
            let mut c_masked = Tensor::zeros(&[mask.len(), d]);
            for (row, &fi) in mask.iter().enumerate() {
                c_masked.row_mut(row).copy_from_slice(ctx.frames.row(fi));
            }
            let sets = sample_distractors(mask.len(), 10, &mut mask_rng);
            let (loss, dc, dq) = contrastive_loss(&c_masked, &targets.vectors, &sets, kappa).unwrap();
            total += loss / waves.len() as f64;

            let mut d_ctx = Tensor::zeros(ctx.frames.dims());
            for (row, &fi) in mask.iter().enumerate() {
                for (dst, g) in d_ctx.row_mut(fi).iter_mut().zip(dc.row(row)) {
                    *dst = g / waves.len() as f64;
                }
            }
            let dz_ctx = model.contextualize_backward(&ctx_cache, &d_ctx);
            let mut dq_scaled = dq;
            for v in dq_scaled.values_mut() {
                *v /= waves.len() as f64;
            }
            let dz_masked =
                quantizer::quantize_backward(&mut codebook, &targets, &q_cache, &dq_scaled, None);
            let mut dz = dz_ctx;
            for (row, &fi) in mask.iter().enumerate() {
                for (dst, g) in dz.row_mut(fi).iter_mut().zip(dz_masked.row(row)) {
                    *dst += g;
                }
            }
            model.encode_backward(&enc_cache, &dz);
        }
        let mut params = Vec::new();
        model.params_mut(&mut params);
        codebook.params_mut("quantizer", &mut params);
        opt.step(2e-3, &mut params, &(|_| true));
        if step % 20 == 0 || step == 199 {
            println!("step {step}: loss {total:.4} (chance {:.4})", (11.0f64).ln());
        }
    }
}
