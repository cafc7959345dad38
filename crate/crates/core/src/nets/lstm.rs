//! Single-layer LSTM returning the final hidden state.
//!
//! Gate order in the stacked weights is input, forget, cell, output.

use rand::Rng;

use super::layers::{Module, Param};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Lstm {
    pub inputs: usize,
    pub units: usize,
    /// `[4u, in]`
    pub input_weight: Param,
    /// `[4u, u]`
    pub recurrent_weight: Param,
    /// `[4u]`, forget-gate slice initialized to 1.
    pub bias: Param,
    cache: Vec<Trace>,
}

/// Per-sample activations kept for backpropagation through time.
#[derive(Debug, Clone)]
struct Trace {
    x: Vec<f64>,
    /// Post-activation gates per step, `4u` each.
    gates: Vec<Vec<f64>>,
    /// Cell states c_0 .. c_T (c_0 = 0).
    cells: Vec<Vec<f64>>,
    /// Hidden states h_0 .. h_T (h_0 = 0).
    hidden: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut bias = vec![0.0; 4 * units];
        bias[units..2 * units].fill(1.0);
        Lstm {
            inputs,
            units,
            input_weight: Param::uniform("kernel", vec![4 * units, inputs], glorot(inputs, 4 * units), rng),
            recurrent_weight: Param::uniform(
                "recurrent_kernel",
                vec![4 * units, units],
                glorot(units, 4 * units),
                rng,
            ),
            bias: Param::new("bias", vec![4 * units], bias, true),
            cache: Vec::new(),
        }
    }

    fn run(&self, x: &[f64], steps: usize) -> Trace {
        let (u, c_in) = (self.units, self.inputs);
        let mut trace = Trace {
            x: x.to_vec(),
            gates: Vec::with_capacity(steps),
            cells: vec![vec![0.0; u]],
            hidden: vec![vec![0.0; u]],
        };
        let wx = &self.input_weight.value;
        let wh = &self.recurrent_weight.value;
        for t in 0..steps {
            let xt = &x[t * c_in..(t + 1) * c_in];
            let h_prev = &trace.hidden[t];
            let c_prev = &trace.cells[t];
            let mut z = self.bias.value.clone();
            for (r, zr) in z.iter_mut().enumerate() {
                let a: f64 = wx[r * c_in..(r + 1) * c_in].iter().zip(xt).map(|(w, v)| w * v).sum();
                let b: f64 = wh[r * u..(r + 1) * u].iter().zip(h_prev).map(|(w, v)| w * v).sum();
                *zr += a + b;
            }
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = if (2 * u..3 * u).contains(&j) {
                    zj.tanh()
                } else {
                    sigmoid(*zj)
                };
            }
            let mut c = vec![0.0; u];
            let mut h = vec![0.0; u];
            for k in 0..u {
                let (i, f, g, o) = (z[k], z[u + k], z[2 * u + k], z[3 * u + k]);
                c[k] = f * c_prev[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            trace.gates.push(z);
            trace.cells.push(c);
            trace.hidden.push(h);
        }
        trace
    }

    fn steps(&self, x: &Tensor) -> usize {
        x.shape()[1]
    }
}

impl Module for Lstm {
    fn infer(&self, x: &Tensor) -> Tensor {
        let steps = self.steps(x);
        let mut out = Tensor::zeros(vec![x.batch(), self.units]);
        for b in 0..x.batch() {
            let trace = self.run(x.sample(b), steps);
            out.data_mut()[b * self.units..(b + 1) * self.units].copy_from_slice(&trace.hidden[steps]);
        }
        out
    }

    fn forward_cached(&mut self, x: &Tensor) -> Tensor {
        let steps = self.steps(x);
        let mut out = Tensor::zeros(vec![x.batch(), self.units]);
        self.cache = (0..x.batch())
            .map(|b| {
                let trace = self.run(x.sample(b), steps);
                out.data_mut()[b * self.units..(b + 1) * self.units].copy_from_slice(&trace.hidden[steps]);
                trace
            })
            .collect();
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (u, c_in) = (self.units, self.inputs);
        let n = self.cache.len();
        let steps = self.cache.first().map_or(0, |t| t.gates.len());
        let mut dx = Tensor::zeros(vec![n, steps, c_in]);
        let cache = std::mem::take(&mut self.cache);
        for (b, trace) in cache.iter().enumerate() {
            let mut dh = grad.row(b).to_vec();
            let mut dc = vec![0.0; u];
            let mut dz = vec![0.0; 4 * u];
            for t in (0..steps).rev() {
                let z = &trace.gates[t];
                let c = &trace.cells[t + 1];
                let c_prev = &trace.cells[t];
                for k in 0..u {
                    let (i, f, g, o) = (z[k], z[u + k], z[2 * u + k], z[3 * u + k]);
                    let tc = c[k].tanh();
                    let d_o = dh[k] * tc;
                    dc[k] += dh[k] * o * (1.0 - tc * tc);
                    dz[k] = dc[k] * g * i * (1.0 - i);
                    dz[u + k] = dc[k] * c_prev[k] * f * (1.0 - f);
                    dz[2 * u + k] = dc[k] * i * (1.0 - g * g);
                    dz[3 * u + k] = d_o * o * (1.0 - o);
                    dc[k] *= f;
                }
                let xt = &trace.x[t * c_in..(t + 1) * c_in];
                let h_prev = &trace.hidden[t];
                let dxt = &mut dx.data_mut()[(b * steps + t) * c_in..(b * steps + t + 1) * c_in];
                let mut dh_prev = vec![0.0; u];
                for (r, &g) in dz.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    self.bias.grad[r] += g;
                    let wx = r * c_in..(r + 1) * c_in;
                    for ((wg, wv), (xv, d)) in self.input_weight.grad[wx.clone()]
                        .iter_mut()
                        .zip(&self.input_weight.value[wx])
                        .zip(xt.iter().zip(dxt.iter_mut()))
                    {
                        *wg += g * xv;
                        *d += g * wv;
                    }
                    let wh = r * u..(r + 1) * u;
                    for ((wg, wv), (hv, d)) in self.recurrent_weight.grad[wh.clone()]
                        .iter_mut()
                        .zip(&self.recurrent_weight.value[wh])
                        .zip(h_prev.iter().zip(dh_prev.iter_mut()))
                    {
                        *wg += g * hv;
                        *d += g * wv;
                    }
                }
                dh = dh_prev;
            }
        }
        self.cache = cache;
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.input_weight, &self.recurrent_weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.input_weight, &mut self.recurrent_weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache = Vec::new();
    }
}
