use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ACTION_DIM;

pub const HIDDEN: usize = 64;

/// Anything that can be integrated by the Euler sampler.
pub trait VectorField: Sync {
    fn chunk_len(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn velocity(&self, x: &[f64], tau: f64, cond: &[f64]) -> Vec<f64>;
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub range: Range<usize>,
}

/// Two tanh hidden layers over `x ⊕ τ ⊕ c`, linear output of size `3k`.
///
/// Parameters are stored flat in the order w1, b1, w2, b2, w3, b3 with
/// weight matrices row-major (`[out][in]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub k: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub params: Vec<f64>,
}

pub(crate) struct Activations {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

impl FlowModel {
    pub fn new(k: usize, cond_dim: usize, seed: u64) -> Self {
        Self::with_hidden(k, cond_dim, HIDDEN, seed)
    }

    pub fn with_hidden(k: usize, cond_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut m = Self {
            k,
            cond_dim,
            hidden,
            seed,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in m.blocks() {
            if b.name.starts_with('w') {
                let fan_in = match b.name {
                    "w1" => m.input_dim(),
                    _ => hidden,
                };
                let std = 1.0 / (fan_in as f64).sqrt();
                for p in &mut m.params[b.range] {
                    *p = rng.sample::<f64, _>(StandardNormal) * std;
                }
            }
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.out_dim() + 1 + self.cond_dim
    }

    pub fn out_dim(&self) -> usize {
        self.k * ACTION_DIM
    }

    fn sizes(&self) -> [(&'static str, usize); 6] {
        let (i, h, o) = (self.input_dim(), self.hidden, self.out_dim());
        [("w1", h * i), ("b1", h), ("w2", h * h), ("b2", h), ("w3", o * h), ("b3", o)]
    }

    pub fn param_count(&self) -> usize {
        self.sizes().iter().map(|s| s.1).sum()
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut at = 0;
        self.sizes()
            .iter()
            .map(|&(name, n)| {
                at += n;
                ParamBlock {
                    name,
                    range: at - n..at,
                }
            })
            .collect()
    }

    /// Name of the block holding parameter `i`.
    pub fn block_of(&self, i: usize) -> &'static str {
        self.blocks().into_iter().find(|b| b.range.contains(&i)).map_or("?", |b| b.name)
    }

    /// Zeroes the output layer so the field is identically zero.
    pub fn zero_output(&mut self) {
        let blocks = self.blocks();
        for b in &blocks[4..] {
            self.params[b.range.clone()].fill(0.0);
        }
    }

    pub(crate) fn forward(&self, x: &[f64], tau: f64, cond: &[f64]) -> Activations {
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(x);
        input.push(tau);
        input.extend_from_slice(cond);
        let b = self.blocks();
        let p = &self.params;
        let h1 = dense(&p[b[0].range.clone()], &p[b[1].range.clone()], &input, true);
        let h2 = dense(&p[b[2].range.clone()], &p[b[3].range.clone()], &h1, true);
        let out = dense(&p[b[4].range.clone()], &p[b[5].range.clone()], &h2, false);
        Activations { input, h1, h2, out }
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂out`.
    pub(crate) fn backward(&self, act: &Activations, dout: &[f64], grad: &mut [f64]) {
        let b = self.blocks();
        let p = &self.params;
        let dh2 = dense_backward(&p[b[4].range.clone()], &act.h2, dout, grad, &b[4], &b[5]);
        let dz2: Vec<f64> = dh2.iter().zip(&act.h2).map(|(d, h)| d * (1.0 - h * h)).collect();
        let dh1 = dense_backward(&p[b[2].range.clone()], &act.h1, &dz2, grad, &b[2], &b[3]);
        let dz1: Vec<f64> = dh1.iter().zip(&act.h1).map(|(d, h)| d * (1.0 - h * h)).collect();
        // input gradient is not needed for the first layer
        let (w, bias) = (&b[0], &b[1]);
        let n_in = act.input.len();
        for (r, d) in dz1.iter().enumerate() {
            grad[bias.range.start + r] += d;
            let row = &mut grad[w.range.start + r * n_in..w.range.start + (r + 1) * n_in];
            for (g, x) in row.iter_mut().zip(&act.input) {
                *g += d * x;
            }
        }
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64], activate: bool) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| {
            let z = bias + w[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if activate {
                z.tanh()
            } else {
                z
            }
        })
        .collect()
}

/// Backprop through `y = W x + b`; returns `∂L/∂x`.
fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], wb: &ParamBlock, bb: &ParamBlock) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; n];
    for (r, d) in dy.iter().enumerate() {
        grad[bb.range.start + r] += d;
        let row = &w[r * n..(r + 1) * n];
        let grow = &mut grad[wb.range.start + r * n..wb.range.start + (r + 1) * n];
        for j in 0..n {
            grow[j] += d * x[j];
            dx[j] += d * row[j];
        }
    }
    dx
}

impl VectorField for FlowModel {
    fn chunk_len(&self) -> usize {
        self.k
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn velocity(&self, x: &[f64], tau: f64, cond: &[f64]) -> Vec<f64> {
        self.forward(x, tau, cond).out
    }
}
