//! Learnable convolution kernels: a small MLP from a normalized offset to
//! `K` kernel values sharing one trunk (3 -> H -> H -> K, ReLU hidden layers,
//! linear output).
//!
//! Parameters live in one flat buffer laid out as
//! `[W1 (H x 3), b1 (H), W2 (H x H), b2 (H), W3 (K x H), b3 (K)]`, weights
//! row-major as `(out, in)`.

use crate::cloud::Vec3;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_HIDDEN: usize = 8;
pub const DEFAULT_OUTPUTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub hidden: usize,
    pub outputs: usize,
}

impl Default for KernelShape {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            outputs: DEFAULT_OUTPUTS,
        }
    }
}

impl KernelShape {
    pub fn new(hidden: usize, outputs: usize) -> Result<Self> {
        if hidden == 0 || outputs == 0 {
            return Err(Error::invalid("kernel MLP needs at least one hidden unit and output"));
        }
        Ok(Self { hidden, outputs })
    }

    pub fn param_count(&self) -> usize {
        let (h, k) = (self.hidden, self.outputs);
        3 * h + h + h * h + h + k * h + k
    }

    /// Multiply-accumulates for one evaluation of the shared trunk.
    pub fn mac_count(&self) -> usize {
        let (h, k) = (self.hidden, self.outputs);
        3 * h + h * h + h * k
    }

    /// Multiply-accumulates for `K` independent single-output MLPs of the same width.
    pub fn independent_mac_count(&self) -> usize {
        let h = self.hidden;
        self.outputs * (3 * h + h * h + h)
    }

    #[inline]
    fn offsets(&self) -> [usize; 6] {
        let (h, k) = (self.hidden, self.outputs);
        let w1 = 0;
        let b1 = w1 + 3 * h;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + k * h;
        [w1, b1, w2, b2, w3, b3]
    }
}

/// Weights of one kernel trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    shape: KernelShape,
    data: Vec<f64>,
}

impl KernelParams {
    pub fn zeros(shape: KernelShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_vec(shape: KernelShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.param_count() {
            return Err(Error::shape(format!(
                "{} kernel parameters, expected {}",
                data.len(),
                shape.param_count()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[0]..o[1]]
    }
    pub fn b1(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[1]..o[2]]
    }
    pub fn w2(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[2]..o[3]]
    }
    pub fn b2(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[3]..o[4]]
    }
    pub fn w3(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[4]..o[5]]
    }
    pub fn b3(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[5]..]
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.data[o[0]..o[1]]
    }
    pub fn b1_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.data[o[1]..o[2]]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.data[o[2]..o[3]]
    }
    pub fn b2_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.data[o[3]..o[4]]
    }
    pub fn w3_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.data[o[4]..o[5]]
    }
    pub fn b3_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.data[o[5]..]
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
pub fn kernel_init(rng: &mut Rng, shape: KernelShape) -> KernelParams {
    let mut p = KernelParams::zeros(shape);
    init_slice(rng, shape, &mut p.data);
    p
}

pub(crate) fn init_slice(rng: &mut Rng, shape: KernelShape, data: &mut [f64]) {
    let o = shape.offsets();
    let h = shape.hidden as f64;
    for (range, fan_in) in [(o[0]..o[1], 3.0), (o[2]..o[3], h), (o[4]..o[5], h)] {
        let bound = 1.0 / f64::sqrt(fan_in);
        for w in &mut data[range] {
            *w = rng.range(-bound, bound);
        }
    }
    for range in [o[1]..o[2], o[3]..o[4], o[5]..data.len()] {
        data[range].fill(0.0);
    }
}

/// Hidden activations of the last forward call, reused by backward.
#[derive(Debug, Clone)]
pub struct KernelScratch {
    a1: Vec<f64>,
    a2: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl KernelScratch {
    pub fn new(shape: KernelShape) -> Self {
        let h = shape.hidden;
        Self {
            a1: vec![0.0; h],
            a2: vec![0.0; h],
            g1: vec![0.0; h],
            g2: vec![0.0; h],
        }
    }
}

/// Evaluates one trunk stored in `data` at `delta`, writing `K` values to `out`.
#[inline]
pub fn forward_raw(
    shape: KernelShape,
    data: &[f64],
    delta: Vec3,
    scratch: &mut KernelScratch,
    out: &mut [f64],
) {
    let (h, k) = (shape.hidden, shape.outputs);
    let [w1, b1, w2, b2, w3, b3] = shape.offsets();
    for i in 0..h {
        let w = &data[w1 + 3 * i..w1 + 3 * i + 3];
        let z = data[b1 + i] + w[0] * delta[0] + w[1] * delta[1] + w[2] * delta[2];
        scratch.a1[i] = z.max(0.0);
    }
    for i in 0..h {
        let row = &data[w2 + h * i..w2 + h * (i + 1)];
        let mut z = data[b2 + i];
        for (w, a) in row.iter().zip(&scratch.a1) {
            z += w * a;
        }
        scratch.a2[i] = z.max(0.0);
    }
    for o in 0..k {
        let row = &data[w3 + h * o..w3 + h * (o + 1)];
        let mut z = data[b3 + o];
        for (w, a) in row.iter().zip(&scratch.a2) {
            z += w * a;
        }
        out[o] = z;
    }
}

/// Accumulates `d(upstream . g(delta)) / d(params)` into `grad`. `scratch`
/// must hold the activations of a forward call at the same `delta`.
#[inline]
pub fn backward_raw(
    shape: KernelShape,
    data: &[f64],
    delta: Vec3,
    scratch: &mut KernelScratch,
    upstream: &[f64],
    grad: &mut [f64],
) {
    let (h, k) = (shape.hidden, shape.outputs);
    let [w1, b1, w2, b2, w3, b3] = shape.offsets();
    scratch.g2.fill(0.0);
    for o in 0..k {
        let u = upstream[o];
        if u == 0.0 {
            continue;
        }
        grad[b3 + o] += u;
        for i in 0..h {
            grad[w3 + h * o + i] += u * scratch.a2[i];
            scratch.g2[i] += data[w3 + h * o + i] * u;
        }
    }
    scratch.g1.fill(0.0);
    for i in 0..h {
        if scratch.a2[i] <= 0.0 {
            continue;
        }
        let g = scratch.g2[i];
        grad[b2 + i] += g;
        for j in 0..h {
            grad[w2 + h * i + j] += g * scratch.a1[j];
            scratch.g1[j] += data[w2 + h * i + j] * g;
        }
    }
    for i in 0..h {
        if scratch.a1[i] <= 0.0 {
            continue;
        }
        let g = scratch.g1[i];
        grad[b1 + i] += g;
        for d in 0..3 {
            grad[w1 + 3 * i + d] += g * delta[d];
        }
    }
}

pub fn kernel_forward(params: &KernelParams, delta: Vec3) -> Vec<f64> {
    let mut scratch = KernelScratch::new(params.shape);
    let mut out = vec![0.0; params.shape.outputs];
    forward_raw(params.shape, &params.data, delta, &mut scratch, &mut out);
    out
}

/// Gradient of `upstream . kernel_forward(params, delta)` with respect to every parameter.
pub fn kernel_backward(params: &KernelParams, delta: Vec3, upstream: &[f64]) -> Result<KernelParams> {
    if upstream.len() != params.shape.outputs {
        return Err(Error::shape(format!(
            "upstream has {} values, kernel has {} outputs",
            upstream.len(),
            params.shape.outputs
        )));
    }
    let mut scratch = KernelScratch::new(params.shape);
    let mut out = vec![0.0; params.shape.outputs];
    forward_raw(params.shape, &params.data, delta, &mut scratch, &mut out);
    let mut grad = KernelParams::zeros(params.shape);
    backward_raw(params.shape, &params.data, delta, &mut scratch, upstream, &mut grad.data);
    Ok(grad)
}
