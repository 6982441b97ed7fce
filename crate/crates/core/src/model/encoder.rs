//! Convolutional feature encoder: a stack of strided valid convolutions,
//! each followed by per-frame layer norm over channels and gelu. Turns a
//! waveform into the latent frame sequence the context network consumes.

use crate::rng::Prng;
use crate::tensor::{conv1d, conv1d_backward, gelu, gelu_backward, Tensor};

use super::layers::{LayerNormAffine, LnCache};

#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// [c_out, c_in, width]
    pub kernels: Tensor,
    pub stride: usize,
    pub ln: LayerNormAffine,
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub layers: Vec<ConvLayer>,
}

pub struct ConvLayerCache {
    input_cm: Tensor,
    ln: LnCache,
    /// Affine layer-norm output, the gelu input, row form [T, c].
    pre_act: Tensor,
}

pub struct ConvEncoderCache {
    layers: Vec<ConvLayerCache>,
}

impl ConvEncoder {
    /// `specs` are (out_channels, width, stride) from the first layer up.
    pub fn new(specs: &[(usize, usize, usize)], rng: &mut Prng) -> ConvEncoder {
        let mut layers = Vec::with_capacity(specs.len());
        let mut c_in = 1;
        for &(c_out, width, stride) in specs {
            let scale = 1.0 / ((c_in * width) as f64).sqrt();
            layers.push(ConvLayer {
                kernels: Tensor::rand_uniform(&[c_out, c_in, width], scale, rng),
                stride,
                ln: LayerNormAffine::new(c_out),
            });
            c_in = c_out;
        }
        ConvEncoder { layers }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.kernels.dims()[0]).unwrap_or(1)
    }

    /// Frames as rows: [T, d_z].
    pub fn forward(&self, wave: &[f64]) -> (Tensor, ConvEncoderCache) {
        let mut x_cm = Tensor::from_values(&[1, wave.len()], wave.to_vec()).expect("waveform tensor");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut rows = x_cm.transposed();
        for layer in &self.layers {
            let conv_cm = conv1d(&x_cm, &layer.kernels, layer.stride, 1).expect("conv encoder");
            let conv_rows = conv_cm.transposed();
            let (pre_act, ln) = layer.ln.forward(&conv_rows);
            rows = gelu(&pre_act);
            caches.push(ConvLayerCache {
                input_cm: x_cm,
                ln,
                pre_act,
            });
            x_cm = rows.transposed();
        }
        (rows, ConvEncoderCache { layers: caches })
    }

    /// Backward from frame gradients [T, d_z] down to the waveform [n].
    pub fn backward(&mut self, cache: &ConvEncoderCache, d_frames: &Tensor) -> Vec<f64> {
        let mut d_rows = d_frames.clone();
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()).rev() {
            let d_pre = gelu_backward(&lc.pre_act, &d_rows);
            let d_conv_rows = layer.ln.backward(&lc.ln, &d_pre);
            let d_conv_cm = d_conv_rows.transposed();
            let (d_input_cm, dk) =
                conv1d_backward(&lc.input_cm, &layer.kernels, layer.stride, 1, &d_conv_cm);
            layer.kernels.accumulate_grad(&dk);
            d_rows = d_input_cm.transposed();
        }
        // Bottom layer input is [T0, 1]: flatten to the waveform gradient.
        d_rows.values().to_vec()
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}.kernels"), &layer.kernels));
            layer.ln.params(&format!("{prefix}.conv{i}.ln"), out);
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.conv{i}.kernels"), &mut layer.kernels));
            layer.ln.params_mut(&format!("{prefix}.conv{i}.ln"), out);
        }
    }
}
