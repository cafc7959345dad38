//! Layer implementations with hand-written backward passes.
//!
//! Layers cache what their backward pass needs during a training forward
//! pass; `infer` is the eval-mode path and never touches the cache.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::Lstm;
use super::tensor::Tensor;

/// A named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Running statistics and input normalization are stored but not optimized.
    pub trainable: bool,
}

impl Param {
    pub(crate) fn new(name: &str, shape: Vec<usize>, value: Vec<f64>, trainable: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.to_string(),
            shape,
            value,
            grad,
            trainable,
        }
    }

    pub(crate) fn uniform<R: Rng + ?Sized>(name: &str, shape: Vec<usize>, limit: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        Param::new(name, shape, value, true)
    }

    pub(crate) fn filled(name: &str, shape: Vec<usize>, v: f64, trainable: bool) -> Self {
        let n = shape.iter().product();
        Param::new(name, shape, vec![v; n], trainable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Max,
    Average,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Normalize(Normalize),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    Pool2d(Pool2d),
    Dropout(Dropout),
    Flatten(Flatten),
    Dense(Dense),
    Conv1d(Conv1d),
    Lstm(Lstm),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Normalize($l) => $body,
            Layer::Conv2d($l) => $body,
            Layer::BatchNorm($l) => $body,
            Layer::Relu($l) => $body,
            Layer::Pool2d($l) => $body,
            Layer::Dropout($l) => $body,
            Layer::Flatten($l) => $body,
            Layer::Dense($l) => $body,
            Layer::Conv1d($l) => $body,
            Layer::Lstm($l) => $body,
        }
    };
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Normalize(_) => "normalize",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu(_) => "relu",
            Layer::Pool2d(_) => "pool2d",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::Lstm(_) => "lstm",
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        dispatch!(self, l => l.infer(x))
    }

    pub fn forward_train<R: Rng + ?Sized>(&mut self, x: &Tensor, rng: &mut R) -> Tensor {
        match self {
            Layer::Dropout(l) => l.forward_train(x, rng),
            other => dispatch!(other, l => l.forward_cached(x)),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        dispatch!(self, l => l.backward(grad))
    }

    pub fn params(&self) -> Vec<&Param> {
        dispatch!(self, l => l.params())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        dispatch!(self, l => l.params_mut())
    }

    pub fn clear_cache(&mut self) {
        dispatch!(self, l => l.clear_cache())
    }
}

/// Shared behaviour of the deterministic layers.
pub(crate) trait Module {
    fn infer(&self, x: &Tensor) -> Tensor;
    fn forward_cached(&mut self, x: &Tensor) -> Tensor;
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
    fn clear_cache(&mut self);
}

// ---------------------------------------------------------------------------

/// Fixed per-feature standardization over the last axis.
#[derive(Debug, Clone)]
pub struct Normalize {
    pub mean: Param,
    pub std: Param,
}

impl Normalize {
    pub fn identity(features: usize) -> Self {
        Normalize {
            mean: Param::filled("mean", vec![features], 0.0, false),
            std: Param::filled("std", vec![features], 1.0, false),
        }
    }
}

impl Module for Normalize {
    fn infer(&self, x: &Tensor) -> Tensor {
        let f = self.mean.value.len();
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(f) {
            for ((v, m), s) in chunk.iter_mut().zip(&self.mean.value).zip(&self.std.value) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let f = self.std.value.len();
        let mut out = grad.clone();
        for chunk in out.data_mut().chunks_mut(f) {
            for (v, s) in chunk.iter_mut().zip(&self.std.value) {
                *v /= s;
            }
        }
        out
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.mean, &self.std]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.mean, &mut self.std]
    }

    fn clear_cache(&mut self) {}
}

// ---------------------------------------------------------------------------

/// 2-D convolution, stride 1, "same" zero padding. Input `[N, C, H, W]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    /// `[out, in, kh, kw]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: [usize; 2], rng: &mut R) -> Self {
        let fan_in = (in_channels * kernel[0] * kernel[1]) as f64;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: Param::uniform(
                "kernel",
                vec![out_channels, in_channels, kernel[0], kernel[1]],
                (6.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Param::filled("bias", vec![out_channels], 0.0, true),
            input: None,
        }
    }

    fn pads(&self) -> (isize, isize) {
        (((self.kernel[0] - 1) / 2) as isize, ((self.kernel[1] - 1) / 2) as isize)
    }

    /// Valid output range `[lo, hi)` for kernel offset `d` with padding `p`.
    fn span(d: usize, p: isize, len: usize) -> (usize, usize) {
        let shift = d as isize - p;
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).clamp(0, len as isize) as usize;
        (lo, hi.max(lo))
    }
}

impl Module for Conv2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (n, c_in, h, w) = (s[0], s[1], s[2], s[3]);
        let c_out = self.out_channels;
        let [kh, kw] = self.kernel;
        let (ph, pw) = self.pads();
        let plane = h * w;
        let mut out = Tensor::zeros(vec![n, c_out, h, w]);
        let xd = x.data();
        let od = out.data_mut();
        for b in 0..n {
            for o in 0..c_out {
                let dst = &mut od[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
                dst.fill(self.bias.value[o]);
                for c in 0..c_in {
                    let src = &xd[(b * c_in + c) * plane..(b * c_in + c + 1) * plane];
                    for dy in 0..kh {
                        let (y_lo, y_hi) = Self::span(dy, ph, h);
                        for dx in 0..kw {
                            let wv = self.weight.value[((o * c_in + c) * kh + dy) * kw + dx];
                            let (x_lo, x_hi) = Self::span(dx, pw, w);
                            let sx = dx as isize - pw;
                            for y in y_lo..y_hi {
                                let iy = (y as isize + dy as isize - ph) as usize;
                                let drow = &mut dst[y * w + x_lo..y * w + x_hi];
                                let start = (iy * w) as isize + x_lo as isize + sx;
                                let srow = &src[start as usize..start as usize + (x_hi - x_lo)];
                                for (d, s) in drow.iter_mut().zip(srow) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        let out = self.infer(x);
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward without a training forward pass");
        let s = x.shape();
        let (n, c_in, h, w) = (s[0], s[1], s[2], s[3]);
        let c_out = self.out_channels;
        let [kh, kw] = self.kernel;
        let (ph, pw) = self.pads();
        let plane = h * w;
        let mut dx_t = Tensor::zeros(s.to_vec());
        let xd = x.data();
        let gd = grad.data();
        let dxd = dx_t.data_mut();
        for b in 0..n {
            for o in 0..c_out {
                let g = &gd[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
                self.bias.grad[o] += g.iter().sum::<f64>();
                for c in 0..c_in {
                    let base = (b * c_in + c) * plane;
                    for dy in 0..kh {
                        let (y_lo, y_hi) = Self::span(dy, ph, h);
                        for dx in 0..kw {
                            let widx = ((o * c_in + c) * kh + dy) * kw + dx;
                            let wv = self.weight.value[widx];
                            let (x_lo, x_hi) = Self::span(dx, pw, w);
                            let sx = dx as isize - pw;
                            let mut acc = 0.0;
                            for y in y_lo..y_hi {
                                let iy = (y as isize + dy as isize - ph) as usize;
                                let grow = &g[y * w + x_lo..y * w + x_hi];
                                let start = base + ((iy * w) as isize + x_lo as isize + sx) as usize;
                                let len = x_hi - x_lo;
                                let srow = &xd[start..start + len];
                                acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                                for (d, gv) in dxd[start..start + len].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                            self.weight.grad[widx] += acc;
                        }
                    }
                }
            }
        }
        dx_t
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

// ---------------------------------------------------------------------------

/// Batch normalization over axis 1 of `[N, C, ...]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNorm {
            gamma: Param::filled("gamma", vec![channels], 1.0, true),
            beta: Param::filled("beta", vec![channels], 0.0, true),
            running_mean: Param::filled("moving_mean", vec![channels], 0.0, false),
            running_var: Param::filled("moving_variance", vec![channels], 1.0, false),
            momentum,
            epsilon,
            cache: None,
        }
    }

    fn dims(x: &Tensor) -> (usize, usize, usize) {
        let s = x.shape();
        (s[0], s[1], s[2..].iter().product())
    }
}

impl Module for BatchNorm {
    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, inner) = Self::dims(x);
        let mut out = x.clone();
        let od = out.data_mut();
        for ch in 0..c {
            let inv = 1.0 / (self.running_var.value[ch] + self.epsilon).sqrt();
            let scale = self.gamma.value[ch] * inv;
            let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
            for b in 0..n {
                for v in &mut od[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                    *v = *v * scale + shift;
                }
            }
        }
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        let (n, c, inner) = Self::dims(x);
        let m = (n * inner) as f64;
        let xd = x.data();
        let mut x_hat = Tensor::zeros(x.shape().to_vec());
        let mut out = Tensor::zeros(x.shape().to_vec());
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let slices = (0..n).map(|b| &xd[(b * c + ch) * inner..(b * c + ch + 1) * inner]);
            let mean = slices.clone().flatten().sum::<f64>() / m;
            let var = slices.flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + self.epsilon).sqrt();
            inv_std[ch] = inv;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                for i in r {
                    let h = (xd[i] - mean) * inv;
                    x_hat.data_mut()[i] = h;
                    out.data_mut()[i] = g * h + bt;
                }
            }
            let mo = self.momentum;
            self.running_mean.value[ch] = mo * self.running_mean.value[ch] + (1.0 - mo) * mean;
            self.running_var.value[ch] = mo * self.running_var.value[ch] + (1.0 - mo) * var;
        }
        self.cache = Some(BnCache { x_hat, inv_std });
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("backward without a training forward pass");
        let (n, c, inner) = Self::dims(grad);
        let m = (n * inner) as f64;
        let gd = grad.data();
        let hd = cache.x_hat.data();
        let mut dx = Tensor::zeros(grad.shape().to_vec());
        for ch in 0..c {
            let idx = || (0..n).flat_map(move |b| (b * c + ch) * inner..(b * c + ch + 1) * inner);
            let sum_g: f64 = idx().map(|i| gd[i]).sum();
            let sum_gh: f64 = idx().map(|i| gd[i] * hd[i]).sum();
            self.gamma.grad[ch] += sum_gh;
            self.beta.grad[ch] += sum_g;
            let k = self.gamma.value[ch] * cache.inv_std[ch] / m;
            for i in idx() {
                dx.data_mut()[i] = k * (m * gd[i] - sum_g - hd[i] * sum_gh);
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu {
    output: Option<Tensor>,
}

impl Module for Relu {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        let out = self.infer(x);
        self.output = Some(out.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let y = self.output.as_ref().expect("backward without a training forward pass");
        let mut dx = grad.clone();
        for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        dx
    }

    fn clear_cache(&mut self) {
        self.output = None;
    }
}

// ---------------------------------------------------------------------------

/// Non-overlapping pooling with window == stride and "valid" padding on
/// `[N, C, H, W]`; trailing rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone)]
pub struct Pool2d {
    pub size: [usize; 2],
    pub mode: PoolMode,
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl Pool2d {
    pub fn new(size: [usize; 2], mode: PoolMode) -> Self {
        Pool2d {
            size,
            mode,
            input_shape: Vec::new(),
            argmax: Vec::new(),
        }
    }

    fn run(&self, x: &Tensor, mut record: Option<&mut Vec<usize>>) -> Tensor {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let [py, px] = self.size;
        let (oh, ow) = (h / py, w / px);
        let mut out = Tensor::zeros(vec![n, c, oh, ow]);
        let xd = x.data();
        let area = (py * px) as f64;
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_i = base + oy * py * w + ox * px;
                    let mut acc = 0.0;
                    for dy in 0..py {
                        for dx in 0..px {
                            let i = base + (oy * py + dy) * w + ox * px + dx;
                            acc += xd[i];
                            if xd[i] > xd[best_i] {
                                best_i = i;
                            }
                        }
                    }
                    let o = (nc * oh + oy) * ow + ox;
                    out.data_mut()[o] = match self.mode {
                        PoolMode::Max => xd[best_i],
                        PoolMode::Average => acc / area,
                    };
                    if let Some(rec) = record.as_deref_mut() {
                        rec.push(best_i);
                    }
                }
            }
        }
        out
    }
}

impl Module for Pool2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x, None)
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        let mut argmax = Vec::new();
        let out = self.run(x, Some(&mut argmax));
        self.argmax = argmax;
        self.input_shape = x.shape().to_vec();
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(self.input_shape.clone());
        let s = &self.input_shape;
        let (h, w) = (s[2], s[3]);
        let [py, px] = self.size;
        let (oh, ow) = (h / py, w / px);
        let gd = grad.data();
        match self.mode {
            PoolMode::Max => {
                for (o, &i) in self.argmax.iter().enumerate() {
                    dx.data_mut()[i] += gd[o];
                }
            }
            PoolMode::Average => {
                let area = (py * px) as f64;
                for nc in 0..s[0] * s[1] {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gd[(nc * oh + oy) * ow + ox] / area;
                            for dy in 0..py {
                                for dxx in 0..px {
                                    dx.data_mut()[nc * h * w + (oy * py + dy) * w + ox * px + dxx] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn clear_cache(&mut self) {
        self.argmax = Vec::new();
    }
}

// ---------------------------------------------------------------------------

/// Inverted dropout: surviving activations are scaled by `1 / (1 - rate)`
/// during training; identity at eval time.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Dropout { rate, mask: Vec::new() }
    }

    fn forward_train<R: Rng + ?Sized>(&mut self, x: &Tensor, rng: &mut R) -> Tensor {
        let keep = 1.0 - self.rate;
        self.mask = (0..x.data().len())
            .map(|_| {
                if self.rate > 0.0 && rng.gen::<f64>() < self.rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mut out = x.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&self.mask) {
            *v *= m;
        }
        out
    }
}

impl Module for Dropout {
    fn infer(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        // Deterministic path (no rng): behave as eval.
        self.mask = vec![1.0; x.data().len()];
        x.clone()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = grad.clone();
        for (g, m) in dx.data_mut().iter_mut().zip(&self.mask) {
            *g *= m;
        }
        dx
    }

    fn clear_cache(&mut self) {
        self.mask = Vec::new();
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Vec<usize>,
}

impl Module for Flatten {
    fn infer(&self, x: &Tensor) -> Tensor {
        x.clone().reshaped(vec![x.batch(), x.sample_len()])
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        self.input_shape = x.shape().to_vec();
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        grad.clone().reshaped(self.input_shape.clone())
    }

    fn clear_cache(&mut self) {}
}

// ---------------------------------------------------------------------------

/// Fully connected layer on `[N, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    /// He-uniform weights, for layers followed by a ReLU.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::with_limit(inputs, outputs, (6.0 / inputs as f64).sqrt(), rng)
    }

    /// Glorot-uniform weights, used for the linear classification layer.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::with_limit(inputs, outputs, (6.0 / (inputs + outputs) as f64).sqrt(), rng)
    }

    fn with_limit<R: Rng + ?Sized>(inputs: usize, outputs: usize, limit: f64, rng: &mut R) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Param::uniform("kernel", vec![outputs, inputs], limit, rng),
            bias: Param::filled("bias", vec![outputs], 0.0, true),
            input: None,
        }
    }
}

impl Module for Dense {
    fn infer(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        let mut out = Tensor::zeros(vec![n, self.outputs]);
        for b in 0..n {
            let xr = x.row(b);
            for o in 0..self.outputs {
                let wr = &self.weight.value[o * self.inputs..(o + 1) * self.inputs];
                out.data_mut()[b * self.outputs + o] =
                    self.bias.value[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward without a training forward pass");
        let n = x.batch();
        let mut dx = Tensor::zeros(vec![n, self.inputs]);
        for b in 0..n {
            let xr = x.row(b);
            let gr = grad.row(b);
            for o in 0..self.outputs {
                let g = gr[o];
                if g == 0.0 {
                    continue;
                }
                self.bias.grad[o] += g;
                let r = o * self.inputs..(o + 1) * self.inputs;
                for (wg, xv) in self.weight.grad[r.clone()].iter_mut().zip(xr) {
                    *wg += g * xv;
                }
                let dxr = &mut dx.data_mut()[b * self.inputs..(b + 1) * self.inputs];
                for (d, wv) in dxr.iter_mut().zip(&self.weight.value[r]) {
                    *d += g * wv;
                }
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

// ---------------------------------------------------------------------------

/// Strided 1-D convolution over `[N, L, C]` with "same" padding: output
/// length is `ceil(L / stride)`, padding split with the extra cell on the right.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out, kernel, in]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel) as f64;
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::uniform(
                "kernel",
                vec![out_channels, kernel, in_channels],
                (6.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Param::filled("bias", vec![out_channels], 0.0, true),
            input: None,
        }
    }

    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    fn pad_left(&self, len: usize) -> usize {
        let out = self.output_len(len);
        let total = ((out - 1) * self.stride + self.kernel).saturating_sub(len);
        total / 2
    }
}

impl Module for Conv1d {
    fn infer(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (n, len, c_in) = (s[0], s[1], s[2]);
        let out_len = self.output_len(len);
        let pad = self.pad_left(len) as isize;
        let c_out = self.out_channels;
        let mut out = Tensor::zeros(vec![n, out_len, c_out]);
        let xd = x.data();
        let od = out.data_mut();
        for b in 0..n {
            for t in 0..out_len {
                let orow = &mut od[(b * out_len + t) * c_out..(b * out_len + t + 1) * c_out];
                orow.copy_from_slice(&self.bias.value);
                for j in 0..self.kernel {
                    let pos = (t * self.stride) as isize + j as isize - pad;
                    if pos < 0 || pos >= len as isize {
                        continue;
                    }
                    let xrow = &xd[(b * len + pos as usize) * c_in..(b * len + pos as usize + 1) * c_in];
                    for (o, ov) in orow.iter_mut().enumerate() {
                        let w = &self.weight.value[(o * self.kernel + j) * c_in..(o * self.kernel + j + 1) * c_in];
                        *ov += w.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward without a training forward pass");
        let s = x.shape();
        let (n, len, c_in) = (s[0], s[1], s[2]);
        let out_len = self.output_len(len);
        let pad = self.pad_left(len) as isize;
        let c_out = self.out_channels;
        let mut dx = Tensor::zeros(s.to_vec());
        let xd = x.data();
        let gd = grad.data();
        for b in 0..n {
            for t in 0..out_len {
                let grow = &gd[(b * out_len + t) * c_out..(b * out_len + t + 1) * c_out];
                for (o, &g) in grow.iter().enumerate() {
                    self.bias.grad[o] += g;
                }
                for j in 0..self.kernel {
                    let pos = (t * self.stride) as isize + j as isize - pad;
                    if pos < 0 || pos >= len as isize {
                        continue;
                    }
                    let xoff = (b * len + pos as usize) * c_in;
                    for (o, &g) in grow.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let woff = (o * self.kernel + j) * c_in;
                        for i in 0..c_in {
                            self.weight.grad[woff + i] += g * xd[xoff + i];
                            dx.data_mut()[xoff + i] += g * self.weight.value[woff + i];
                        }
                    }
                }
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}
