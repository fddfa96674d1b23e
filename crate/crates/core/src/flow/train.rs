use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowModel};
use crate::sim::mix_seed;

/// One expert chunk (flattened, length `3k`) with its conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub chunk: Vec<f64>,
    pub cond: Vec<f64>,
}

/// Samples per parallel work unit; results are reduced in index order.
const WORK_UNIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}


impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Record the minibatch loss every this many steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Cosine-anneal the learning rate to zero over the run.
    #[serde(default)]
    pub cosine_decay: bool,
}

fn default_hidden() -> usize {
    super::HIDDEN
}

fn default_log_every() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-2,
            batch_size: 128,
            seed: 0,
            optimizer: Optimizer::Sgd,
            hidden: super::HIDDEN,
            log_every: default_log_every(),
            cosine_decay: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: FlowModel,
    pub curve: Vec<LossPoint>,
}

fn check_dims(model: &FlowModel, batch: &[FlowSample]) -> Result<(), FlowError> {
    if batch.is_empty() {
        return Err(FlowError::Empty);
    }
    for s in batch {
        if s.chunk.len() != model.out_dim() {
            return Err(FlowError::Dimension {
                expected: model.out_dim(),
                got: s.chunk.len(),
            });
        }
        if s.cond.len() != model.cond_dim {
            return Err(FlowError::Dimension {
                expected: model.cond_dim,
                got: s.cond.len(),
            });
        }
    }
    Ok(())
}

/// Draws `(a⁰, τ)` for sample `index` of a batch evaluated with `seed`.
pub fn noise_draw(seed: u64, index: usize, n: usize) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
    let a0 = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (a0, rng.random::<f64>())
}

fn sample_terms(model: &FlowModel, s: &FlowSample, seed: u64, index: usize, grad: Option<&mut [f64]>) -> f64 {
    let (a0, tau) = noise_draw(seed, index, s.chunk.len());
    let x: Vec<f64> = a0.iter().zip(&s.chunk).map(|(n, a)| (1.0 - tau) * n + tau * a).collect();
    let act = model.forward(&x, tau, &s.cond);
    let diff: Vec<f64> = act
        .out
        .iter()
        .zip(a0.iter().zip(&s.chunk))
        .map(|(v, (n, a))| v - (a - n))
        .collect();
    if let Some(g) = grad {
        let dout: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
        model.backward(&act, &dout, g);
    }
    diff.iter().map(|d| d * d).sum()
}

fn nonfinite_block(model: &FlowModel, grad: &[f64]) -> &'static str {
    model
        .params
        .iter()
        .zip(grad)
        .position(|(p, g)| !p.is_finite() || !g.is_finite())
        .map_or("w3", |i| model.block_of(i))
}

/// Flow-matching loss on `batch` with noise drawn from `seed`.
pub fn fm_loss(model: &FlowModel, batch: &[FlowSample], seed: u64) -> Result<f64, FlowError> {
    check_dims(model, batch)?;
    let parts: Vec<f64> = batch
        .par_chunks(WORK_UNIT)
        .enumerate()
        .map(|(c, part)| {
            part.iter()
                .enumerate()
                .map(|(j, s)| sample_terms(model, s, seed, c * WORK_UNIT + j, None))
                .sum()
        })
        .collect();
    let loss = parts.iter().sum::<f64>() / batch.len() as f64;
    if !loss.is_finite() {
        return Err(FlowError::NonFinite {
            block: nonfinite_block(model, &vec![0.0; model.params.len()]),
        });
    }
    Ok(loss)
}

/// Loss and its analytic gradient, averaged over the batch.
pub fn fm_loss_and_grad(model: &FlowModel, batch: &[FlowSample], seed: u64) -> Result<(f64, Vec<f64>), FlowError> {
    check_dims(model, batch)?;
    let n_params = model.params.len();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(WORK_UNIT)
        .enumerate()
        .map(|(c, part)| {
            let mut g = vec![0.0; n_params];
            let l = part
                .iter()
                .enumerate()
                .map(|(j, s)| sample_terms(model, s, seed, c * WORK_UNIT + j, Some(&mut g)))
                .sum::<f64>();
            (l, g)
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    loss *= scale;
    grad.iter_mut().for_each(|g| *g *= scale);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(FlowError::NonFinite {
            block: nonfinite_block(model, &grad),
        });
    }
    Ok((loss, grad))
}

const DIVERGENCE_LOSS: f64 = 1e6;

/// Trains a fresh model of chunk length `k` on `dataset`.
pub fn train(dataset: &[FlowSample], k: usize, config: &TrainConfig) -> Result<TrainOutput, FlowError> {
    let first = dataset.first().ok_or(FlowError::Empty)?;
    let mut model = FlowModel::with_hidden(k, first.cond.len(), config.hidden, config.seed);
    check_dims(&model, dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xba7c));
    let mut curve = Vec::new();
    let n = model.params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        if config.batch_size >= dataset.len() {
            batch.extend_from_slice(dataset);
        } else {
            for _ in 0..config.batch_size {
                batch.push(dataset[rng.random_range(0..dataset.len())].clone());
            }
        }
        let (loss, grad) = match fm_loss_and_grad(&model, &batch, mix_seed(config.seed, step as u64)) {
            Ok(r) => r,
            Err(FlowError::NonFinite { .. }) => {
                return Err(FlowError::Diverged { step, loss: f64::INFINITY })
            }
            Err(e) => return Err(e),
        };
        if loss > DIVERGENCE_LOSS {
            return Err(FlowError::Diverged { step, loss });
        }
        if step % config.log_every.max(1) == 0 {
            curve.push(LossPoint { step, loss });
        }
        let lr = if config.cosine_decay {
            let frac = step as f64 / config.steps as f64;
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            config.learning_rate
        };
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = (step + 1) as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for i in 0..n {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    model.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(TrainOutput { model, curve })
}
