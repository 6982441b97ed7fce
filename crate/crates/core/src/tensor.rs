//! Dense f64 tensors with hand-written backward passes.
//!
//! The op set is fixed (matmul, softmax family, layer norm, gelu, conv1d
//! and a few elementwise helpers); each differentiable op ships a matching
//! `*_backward` so models chain them by hand instead of going through a
//! general autodiff graph. Everything is f64 and strictly sequential, so
//! identical inputs give bit-identical outputs.

use thiserror::Error;

use crate::rng::Prng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("value count {got} does not match dims {dims:?} (need {need})")]
    DataLength {
        dims: Vec<usize>,
        need: usize,
        got: usize,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("conv1d: input length {len} shorter than kernel width {width}")]
    InputTooShort { len: usize, width: usize },
    #[error("conv1d: {0}")]
    ConvConfig(String),
    #[error("dims must all be positive, got {0:?}")]
    EmptyDim(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense tensor. `grad`, when present, always has the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(dims: &[usize], v: f64) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            values: vec![v; n],
            grad: None,
        }
    }

    pub fn from_values(dims: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::EmptyDim(dims.to_vec()));
        }
        let need: usize = dims.iter().product();
        if values.len() != need {
            return Err(TensorError::DataLength {
                dims: dims.to_vec(),
                need,
                got: values.len(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            values,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            dims: vec![1],
            values: vec![v],
            grad: None,
        }
    }

    /// Uniform init in [-scale, scale).
    pub fn rand_uniform(dims: &[usize], scale: f64, rng: &mut Prng) -> Tensor {
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| rng.uniform_in(-scale, scale)).collect();
        Tensor {
            dims: dims.to_vec(),
            values,
            grad: None,
        }
    }

    pub fn randn(dims: &[usize], std: f64, rng: &mut Prng) -> Tensor {
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| rng.normal() * std).collect();
        Tensor {
            dims: dims.to_vec(),
            values,
            grad: None,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() needs rank 2, got {:?}", self.dims);
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() needs rank 2, got {:?}", self.dims);
        self.dims[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dims[1] + j]
    }

    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor> {
        Tensor::from_values(dims, self.values.clone())
    }

    pub fn transposed(&self) -> Tensor {
        assert_eq!(self.rank(), 2);
        let (r, c) = (self.dims[0], self.dims[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.values[j * r + i] = self.values[i * c + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    // ----- gradient buffer -------------------------------------------------

    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.values.len()]);
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.ensure_grad();
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_deref_mut() {
            g.fill(0.0);
        }
    }

    /// Accumulate `delta` (same shape) into the grad buffer.
    pub fn accumulate_grad(&mut self, delta: &Tensor) {
        assert_eq!(self.dims, delta.dims, "grad shape mismatch");
        self.ensure_grad();
        let g = self.grad.as_deref_mut().unwrap();
        for (gi, di) in g.iter_mut().zip(delta.values.iter()) {
            *gi += di;
        }
    }
}

// ----- elementwise helpers --------------------------------------------------

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims != b.dims {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            left: a.dims.clone(),
            right: b.dims.clone(),
        });
    }
    let mut out = a.clone();
    out.grad = None;
    for (o, v) in out.values.iter_mut().zip(b.values.iter()) {
        *o += v;
    }
    Ok(out)
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    let mut out = a.clone();
    out.grad = None;
    for v in out.values.iter_mut() {
        *v *= s;
    }
    out
}

pub fn sum(a: &Tensor) -> f64 {
    a.values.iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ----- matmul ----------------------------------------------------------------

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.dims.clone(),
            right: b.dims.clone(),
        });
    }
    let (m, k, n) = (a.dims[0], a.dims[1], b.dims[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let av = a.values[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.values[p * n..(p + 1) * n];
            let orow = &mut out.values[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(out)
}

/// d(a@b) wrt a and b given upstream gradient `dout` on the product.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dout: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.dims[0], a.dims[1], b.dims[1]);
    assert_eq!(dout.dims, &[m, n]);
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    // da = dout @ b^T
    for i in 0..m {
        for p in 0..k {
            let mut acc = 0.0;
            let drow = &dout.values[i * n..(i + 1) * n];
            let brow = &b.values[p * n..(p + 1) * n];
            for j in 0..n {
                acc += drow[j] * brow[j];
            }
            da.values[i * k + p] = acc;
        }
    }
    // db = a^T @ dout
    for p in 0..k {
        for i in 0..m {
            let av = a.values[i * k + p];
            if av == 0.0 {
                continue;
            }
            let drow = &dout.values[i * n..(i + 1) * n];
            let brow = &mut db.values[p * n..(p + 1) * n];
            for j in 0..n {
                brow[j] += av * drow[j];
            }
        }
    }
    (da, db)
}

// ----- lane iteration over an axis --------------------------------------------

struct Lanes {
    outer: usize,
    axis_len: usize,
    inner: usize,
}

fn lanes(dims: &[usize], axis: usize) -> Result<Lanes> {
    if axis >= dims.len() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: dims.len(),
        });
    }
    Ok(Lanes {
        outer: dims[..axis].iter().product(),
        axis_len: dims[axis],
        inner: dims[axis + 1..].iter().product(),
    })
}

fn for_each_lane(dims: &[usize], axis: usize, mut f: impl FnMut(&mut dyn FnMut(usize) -> usize)) -> Result<()> {
    let l = lanes(dims, axis)?;
    for o in 0..l.outer {
        for i in 0..l.inner {
            let base = o * l.axis_len * l.inner + i;
            let mut idx = |k: usize| base + k * l.inner;
            f(&mut idx);
        }
    }
    Ok(())
}

// ----- softmax family ----------------------------------------------------------

/// Numerically stable softmax along `axis` (max subtraction).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let n = lanes(&x.dims, axis)?.axis_len;
    let mut out = x.clone();
    out.grad = None;
    for_each_lane(&x.dims, axis, |idx| {
        let mut mx = f64::NEG_INFINITY;
        for k in 0..n {
            mx = mx.max(x.values[idx(k)]);
        }
        let mut z = 0.0;
        for k in 0..n {
            let e = (x.values[idx(k)] - mx).exp();
            out.values[idx(k)] = e;
            z += e;
        }
        for k in 0..n {
            out.values[idx(k)] /= z;
        }
    })?;
    Ok(out)
}

/// Backward through softmax given its output `y`: dx = y * (dy - sum(dy * y)).
pub fn softmax_backward(y: &Tensor, dy: &Tensor, axis: usize) -> Tensor {
    let n = lanes(&y.dims, axis).unwrap().axis_len;
    let mut dx = Tensor::zeros(&y.dims);
    for_each_lane(&y.dims, axis, |idx| {
        let mut s = 0.0;
        for k in 0..n {
            s += dy.values[idx(k)] * y.values[idx(k)];
        }
        for k in 0..n {
            let i = idx(k);
            dx.values[i] = y.values[i] * (dy.values[i] - s);
        }
    })
    .unwrap();
    dx
}

pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let n = lanes(&x.dims, axis)?.axis_len;
    let mut out = x.clone();
    out.grad = None;
    for_each_lane(&x.dims, axis, |idx| {
        let mut mx = f64::NEG_INFINITY;
        for k in 0..n {
            mx = mx.max(x.values[idx(k)]);
        }
        let mut z = 0.0;
        for k in 0..n {
            z += (x.values[idx(k)] - mx).exp();
        }
        let lz = mx + z.ln();
        for k in 0..n {
            let i = idx(k);
            out.values[i] = x.values[i] - lz;
        }
    })?;
    Ok(out)
}

/// Backward through log_softmax given its output `y`: dx = dy - exp(y) * sum(dy).
pub fn log_softmax_backward(y: &Tensor, dy: &Tensor, axis: usize) -> Tensor {
    let n = lanes(&y.dims, axis).unwrap().axis_len;
    let mut dx = Tensor::zeros(&y.dims);
    for_each_lane(&y.dims, axis, |idx| {
        let mut s = 0.0;
        for k in 0..n {
            s += dy.values[idx(k)];
        }
        for k in 0..n {
            let i = idx(k);
            dx.values[i] = dy.values[i] - y.values[i].exp() * s;
        }
    })
    .unwrap();
    dx
}

// ----- layer norm ----------------------------------------------------------------

/// Small enough that `layer_norm([1,2,3])` has variance 1 within 1e-12, but
/// still keeps an all-zero row finite.
pub const LAYER_NORM_EPS: f64 = 1e-15;

pub struct LayerNormCache {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Normalize each lane along `axis` to mean 0, variance 1 (no affine part).
pub fn layer_norm(x: &Tensor, axis: usize) -> Result<(Tensor, LayerNormCache)> {
    let n = lanes(&x.dims, axis)?.axis_len;
    let mut out = x.clone();
    out.grad = None;
    let mut means = Vec::new();
    let mut rstds = Vec::new();
    for_each_lane(&x.dims, axis, |idx| {
        let mut mean = 0.0;
        for k in 0..n {
            mean += x.values[idx(k)];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for k in 0..n {
            let d = x.values[idx(k)] - mean;
            var += d * d;
        }
        var /= n as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for k in 0..n {
            let i = idx(k);
            out.values[i] = (x.values[i] - mean) * rstd;
        }
        means.push(mean);
        rstds.push(rstd);
    })?;
    Ok((
        out,
        LayerNormCache {
            mean: means,
            rstd: rstds,
        },
    ))
}

/// Backward through layer_norm given normalized output `y` and the cache.
pub fn layer_norm_backward(y: &Tensor, cache: &LayerNormCache, dy: &Tensor, axis: usize) -> Tensor {
    let n = lanes(&y.dims, axis).unwrap().axis_len;
    let nf = n as f64;
    let mut dx = Tensor::zeros(&y.dims);
    let mut lane = 0usize;
    for_each_lane(&y.dims, axis, |idx| {
        let rstd = cache.rstd[lane];
        let mut sum_dy = 0.0;
        let mut sum_dy_y = 0.0;
        for k in 0..n {
            let i = idx(k);
            sum_dy += dy.values[i];
            sum_dy_y += dy.values[i] * y.values[i];
        }
        for k in 0..n {
            let i = idx(k);
            dx.values[i] = rstd * (dy.values[i] - sum_dy / nf - y.values[i] * sum_dy_y / nf);
        }
        lane += 1;
    })
    .unwrap();
    dx
}

// ----- gelu (tanh form) -------------------------------------------------------------

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.grad = None;
    for v in out.values.iter_mut() {
        *v = gelu_scalar(*v);
    }
    out
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(&x.dims);
    for i in 0..x.values.len() {
        dx.values[i] = dy.values[i] * gelu_grad_scalar(x.values[i]);
    }
    dx
}

// ----- conv1d (valid, strided, grouped) ------------------------------------------------

/// Valid 1-D convolution: x is [C_in, T], kernels [C_out, C_in/groups, W].
/// Output is [C_out, T'] with T' = (T - W) / stride + 1.
pub fn conv1d(x: &Tensor, kernels: &Tensor, stride: usize, groups: usize) -> Result<Tensor> {
    if x.rank() != 2 || kernels.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            left: x.dims.clone(),
            right: kernels.dims.clone(),
        });
    }
    let (c_in, t) = (x.dims[0], x.dims[1]);
    let (c_out, cpg, w) = (kernels.dims[0], kernels.dims[1], kernels.dims[2]);
    if stride == 0 {
        return Err(TensorError::ConvConfig("stride must be >= 1".into()));
    }
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(TensorError::ConvConfig(format!(
            "groups {groups} must divide c_in {c_in} and c_out {c_out}"
        )));
    }
    if cpg != c_in / groups {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            left: x.dims.clone(),
            right: kernels.dims.clone(),
        });
    }
    if t < w {
        return Err(TensorError::InputTooShort { len: t, width: w });
    }
    let t_out = (t - w) / stride + 1;
    let out_per_group = c_out / groups;
    let mut out = Tensor::zeros(&[c_out, t_out]);
    for co in 0..c_out {
        let g = co / out_per_group;
        for to in 0..t_out {
            let start = to * stride;
            let mut acc = 0.0;
            for cl in 0..cpg {
                let ci = g * cpg + cl;
                let xrow = &x.values[ci * t + start..ci * t + start + w];
                let krow = &kernels.values[(co * cpg + cl) * w..(co * cpg + cl + 1) * w];
                for k in 0..w {
                    acc += xrow[k] * krow[k];
                }
            }
            out.values[co * t_out + to] = acc;
        }
    }
    Ok(out)
}

pub fn conv1d_backward(
    x: &Tensor,
    kernels: &Tensor,
    stride: usize,
    groups: usize,
    dout: &Tensor,
) -> (Tensor, Tensor) {
    let (c_in, t) = (x.dims[0], x.dims[1]);
    let (c_out, cpg, w) = (kernels.dims[0], kernels.dims[1], kernels.dims[2]);
    let t_out = (t - w) / stride + 1;
    assert_eq!(dout.dims, &[c_out, t_out]);
    let out_per_group = c_out / groups;
    let mut dx = Tensor::zeros(&[c_in, t]);
    let mut dk = Tensor::zeros(kernels.dims());
    for co in 0..c_out {
        let g = co / out_per_group;
        for to in 0..t_out {
            let d = dout.values[co * t_out + to];
            if d == 0.0 {
                continue;
            }
            let start = to * stride;
            for cl in 0..cpg {
                let ci = g * cpg + cl;
                for k in 0..w {
                    dx.values[ci * t + start + k] += d * kernels.values[(co * cpg + cl) * w + k];
                    dk.values[(co * cpg + cl) * w + k] += d * x.values[ci * t + start + k];
                }
            }
        }
    }
    (dx, dk)
}

/// Output length of a valid strided convolution.
pub fn conv1d_out_len(t: usize, width: usize, stride: usize) -> usize {
    (t - width) / stride + 1
}

// ----- finite-difference gradient checking -----------------------------------------------

/// Max relative error between the analytic gradient and central finite
/// differences of `f` at `x`. The denominator is floored so that
/// finite-difference noise on near-zero coordinates does not dominate.
pub fn grad_check(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, analytic: &Tensor, step: f64) -> f64 {
    grad_check_coords(f, x, analytic, step, None)
}

/// Same as `grad_check` but restricted to the given coordinates (used when
/// probing every coordinate would be too slow).
pub fn grad_check_coords(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    step: f64,
    coords: Option<&[usize]>,
) -> f64 {
    assert_eq!(x.dims, analytic.dims, "analytic grad shape mismatch");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut max_rel: f64 = 0.0;
    let mut xp = x.clone();
    for &i in coords {
        let orig = xp.values[i];
        xp.values[i] = orig + step;
        let fp = f(&xp);
        xp.values[i] = orig - step;
        let fm = f(&xp);
        xp.values[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic.values[i];
        let rel = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
