//! Small fully connected Q-network with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// `y = W x + b`.
    Linear,
    /// Input layer with swish, `blocks` residual blocks
    /// `h ← h + W_b swish(W_a h + b_a) + b_b`, then a linear head.
    Residual { hidden: usize, blocks: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let w = &params[self.weights..self.weights + self.inputs * self.outputs];
        let b = &params[self.bias..self.bias + self.outputs];
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(self.inputs).zip(b)) {
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and, when
    /// `dx` is given, adds the input gradient to it.
    fn backward(&self, params: &[f64], grad: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let n = self.inputs;
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[self.bias + o] += g;
            let row = &mut grad[self.weights + o * n..self.weights + (o + 1) * n];
            for (r, &xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &params[self.weights + o * n..self.weights + (o + 1) * n];
                for (d, &w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    input: Vec<f64>,
    pre_input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    pre_inner: Vec<Vec<f64>>,
    inner: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub architecture: Architecture,
    pub inputs: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
    layers: Vec<Dense>,
}

impl QNetwork {
    /// He-style initialization for swish layers, small weights on the head.
    pub fn new<R: Rng + ?Sized>(architecture: Architecture, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |i: usize, o: usize| {
            let d = Dense {
                inputs: i,
                outputs: o,
                weights: offset,
                bias: offset + i * o,
            };
            offset += d.len();
            layers.push(d);
        };
        match architecture {
            Architecture::Linear => push(inputs, outputs),
            Architecture::Residual { hidden, blocks } => {
                push(inputs, hidden);
                for _ in 0..blocks {
                    push(hidden, hidden);
                    push(hidden, hidden);
                }
                push(hidden, outputs);
            }
        }
        let mut params = vec![0.0; offset];
        let last = layers.len() - 1;
        for (li, d) in layers.iter().enumerate() {
            let mut std = (2.0 / d.inputs as f64).sqrt();
            if matches!(architecture, Architecture::Residual { .. }) && li > 0 && li < last && li % 2 == 0 {
                // Second layer of a block starts small so blocks begin near identity.
                std *= 0.1;
            }
            if li == last && last > 0 {
                std = (1.0 / d.inputs as f64).sqrt() * 0.1;
            }
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut params[d.weights..d.weights + d.inputs * d.outputs] {
                *w = normal.sample(rng);
            }
        }
        Self {
            architecture,
            inputs,
            outputs,
            params,
            layers,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.inputs);
        let p = &self.params;
        let mut trace = Trace {
            input: x.to_vec(),
            ..Trace::default()
        };
        match self.architecture {
            Architecture::Linear => {
                let mut y = vec![0.0; self.outputs];
                self.layers[0].forward(p, x, &mut y);
                trace.output = y;
            }
            Architecture::Residual { hidden, blocks } => {
                let mut z = vec![0.0; hidden];
                self.layers[0].forward(p, x, &mut z);
                let mut h: Vec<f64> = z.iter().map(|&v| swish(v)).collect();
                trace.pre_input = z;
                for b in 0..blocks {
                    let (la, lb) = (&self.layers[1 + 2 * b], &self.layers[2 + 2 * b]);
                    let mut a = vec![0.0; hidden];
                    la.forward(p, &h, &mut a);
                    let u: Vec<f64> = a.iter().map(|&v| swish(v)).collect();
                    let mut c = vec![0.0; hidden];
                    lb.forward(p, &u, &mut c);
                    let next: Vec<f64> = h.iter().zip(&c).map(|(x, y)| x + y).collect();
                    trace.hidden.push(h);
                    trace.pre_inner.push(a);
                    trace.inner.push(u);
                    h = next;
                }
                let mut y = vec![0.0; self.outputs];
                self.layers[self.layers.len() - 1].forward(p, &h, &mut y);
                trace.hidden.push(h);
                trace.output = y;
            }
        }
        trace
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    /// Adds `∂(dy · y)/∂ω` for the pass recorded in `trace` into `grad`.
    pub fn backward(&self, trace: &Trace, dy: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        match self.architecture {
            Architecture::Linear => self.layers[0].backward(p, grad, &trace.input, dy, None),
            Architecture::Residual { hidden, blocks } => {
                let head = &self.layers[self.layers.len() - 1];
                let mut dh = vec![0.0; hidden];
                head.backward(p, grad, &trace.hidden[blocks], dy, Some(&mut dh));
                for b in (0..blocks).rev() {
                    let (la, lb) = (&self.layers[1 + 2 * b], &self.layers[2 + 2 * b]);
                    let mut du = vec![0.0; hidden];
                    lb.backward(p, grad, &trace.inner[b], &dh, Some(&mut du));
                    let da: Vec<f64> = du
                        .iter()
                        .zip(&trace.pre_inner[b])
                        .map(|(g, &a)| g * swish_grad(a))
                        .collect();
                    la.backward(p, grad, &trace.hidden[b], &da, Some(&mut dh));
                }
                let dz: Vec<f64> = dh
                    .iter()
                    .zip(&trace.pre_input)
                    .map(|(g, &z)| g * swish_grad(z))
                    .collect();
                self.layers[0].backward(p, grad, &trace.input, &dz, None);
            }
        }
    }

    /// Mean squared error `(1/B) Σ (Q(s_i, a_i) − y_i)²` and its gradient.
    pub fn mse_loss_grad(&self, states: &[&[f64]], actions: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
        let n = states.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut dy = vec![0.0; self.outputs];
        for ((s, &a), &y) in states.iter().zip(actions).zip(targets) {
            let trace = self.forward_trace(s);
            let err = trace.output[a] - y;
            loss += err * err / n;
            dy.iter_mut().for_each(|v| *v = 0.0);
            dy[a] = 2.0 * err / n;
            self.backward(&trace, &dy, &mut grad);
        }
        (loss, grad)
    }

    pub fn mse_loss(&self, states: &[&[f64]], actions: &[usize], targets: &[f64]) -> f64 {
        let n = states.len() as f64;
        states
            .iter()
            .zip(actions)
            .zip(targets)
            .map(|((s, &a), &y)| (self.forward(s)[a] - y).powi(2) / n)
            .sum()
    }

    pub fn copy_from(&mut self, other: &QNetwork) {
        self.params.copy_from_slice(&other.params);
    }
}

/// Adam first-order optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn finite_difference_check(arch: Architecture) -> f64 {
        let mut rng = substream(3, Stream::Fixture, 40);
        let net = QNetwork::new(arch, 5, 4, &mut rng);
        let states: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let actions = [0, 3, 1];
        let targets = [0.5, -0.2, 1.0];
        let (_, grad) = net.mse_loss_grad(&refs, &actions, &targets);
        let mut worst: f64 = 0.0;
        for i in 0..net.num_params() {
            let h = 1e-6;
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let fd = (plus.mse_loss(&refs, &actions, &targets) - minus.mse_loss(&refs, &actions, &targets)) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-7);
            worst = worst.max((fd - grad[i]).abs() / denom);
        }
        worst
    }

    use rand::Rng;

    #[test]
    fn gradients_match_finite_differences() {
        assert!(finite_difference_check(Architecture::Linear) < 1e-4);
        assert!(finite_difference_check(Architecture::Residual { hidden: 6, blocks: 0 }) < 1e-4);
        assert!(finite_difference_check(Architecture::Residual { hidden: 6, blocks: 2 }) < 1e-4);
    }

    #[test]
    fn swish_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (swish(x + 1e-6) - swish(x - 1e-6)) / 2e-6;
            assert!((fd - swish_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_loss_when_predictions_match() {
        let mut rng = substream(4, Stream::Fixture, 41);
        let net = QNetwork::new(Architecture::Residual { hidden: 8, blocks: 2 }, 3, 2, &mut rng);
        let s = [0.1, -0.3, 0.8];
        let y = net.forward(&s)[1];
        let (loss, grad) = net.mse_loss_grad(&[&s], &[1], &[y]);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_overfits_a_single_sample() {
        let mut rng = substream(5, Stream::Fixture, 42);
        let mut net = QNetwork::new(Architecture::Residual { hidden: 16, blocks: 2 }, 4, 3, &mut rng);
        let mut adam = Adam::new(net.num_params(), 1e-3);
        let s = [0.2, -0.1, 0.5, 1.0];
        let mut loss = f64::INFINITY;
        for _ in 0..5000 {
            let (l, g) = net.mse_loss_grad(&[&s], &[2], &[1.7]);
            loss = l;
            if loss < 1e-6 {
                break;
            }
            adam.step(&mut net.params, &g);
        }
        assert!(loss < 1e-6, "loss {loss}");
    }
}
