//! Fully connected ReLU network with a single sigmoid output, trained with
//! Adadelta on class-weighted binary cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_training_set, Matrix, ModelError};
use crate::config::PipelineConfig;
use crate::ingest::BinaryLabel;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
    pub dropout: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams::from_config(&PipelineConfig::default())
    }
}

impl MlpParams {
    pub fn from_config(c: &PipelineConfig) -> Self {
        MlpParams {
            hidden: vec![12, 6],
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            rho: c.adadelta_rho,
            eps: c.adadelta_eps,
            dropout: c.dropout,
        }
    }
}

/// Parameters live in one flat vector: for each layer the `out x in`
/// row-major weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` evaluated without forming σ(z).
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl MlpModel {
    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, ModelError> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(ModelError::Format("layer sizes must be positive and end in 1".into()));
        }
        let m = MlpModel { sizes, params: Vec::new() };
        if params.len() != m.param_count() {
            return Err(ModelError::Format(format!(
                "expected {} parameters, got {}",
                m.param_count(),
                params.len()
            )));
        }
        Ok(MlpModel { params, ..m })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            params.extend((0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        MlpModel { sizes: sizes.to_vec(), params }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Activations of every layer; the last entry holds the output logit.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let input = &acts[l];
            let wts = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = bias[o] + wts[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if l == last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).last().unwrap()[0]
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Adds `scale * dLoss/dparams` of one sample to `grad` and returns its
    /// unscaled loss.
    fn accumulate(&self, x: &[f64], y: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward(x);
        let z = acts.last().unwrap()[0];
        let loss = bce_with_logit(z, y);
        let mut delta = vec![scale * (sigmoid(z) - y)];
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let wts = &self.params[off..off + n_in * n_out];
            delta = (0..n_in)
                .map(|i| {
                    if input[i] <= 0.0 {
                        return 0.0;
                    }
                    (0..n_out).map(|o| delta[o] * wts[o * n_in + i]).sum()
                })
                .collect();
        }
        loss
    }

    /// Mean class-weighted loss over `rows` and its gradient.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[BinaryLabel], weights: [f64; 2], rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        for &i in rows {
            let w = weights[y[i].index()];
            loss += w * self.accumulate(x.row(i), y[i].target(), w * scale, &mut grad);
        }
        (loss * scale, grad)
    }

    pub fn loss(&self, x: &Matrix, y: &[BinaryLabel], weights: [f64; 2], rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&i| weights[y[i].index()] * bce_with_logit(self.logit(x.row(i)), y[i].target()))
            .sum();
        total / rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adadelta {
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
    acc_grad: Vec<f64>,
    acc_update: Vec<f64>,
}

impl Adadelta {
    pub fn new(n: usize, learning_rate: f64, rho: f64, eps: f64) -> Self {
        Adadelta { learning_rate, rho, eps, acc_grad: vec![0.0; n], acc_update: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let (rho, eps) = (self.rho, self.eps);
        for k in 0..params.len() {
            let g = grad[k];
            self.acc_grad[k] = rho * self.acc_grad[k] + (1.0 - rho) * g * g;
            let update = g * (self.acc_update[k] + eps).sqrt() / (self.acc_grad[k] + eps).sqrt();
            self.acc_update[k] = rho * self.acc_update[k] + (1.0 - rho) * update * update;
            params[k] -= self.learning_rate * update;
        }
    }
}

pub fn train(x: &Matrix, y: &[BinaryLabel], p: &MlpParams, seed: u64) -> Result<MlpModel, ModelError> {
    let weights = check_training_set(x, y)?;
    let mut sizes = vec![x.cols()];
    sizes.extend(&p.hidden);
    sizes.push(1);
    let mut model = MlpModel::init(&sizes, &mut seed::rng(seed, &["mlp", "init"]));
    let mut rng = seed::rng(seed, &["mlp", "batches"]);
    let mut opt = Adadelta::new(model.params.len(), p.learning_rate, p.rho, p.eps);
    let keep = 1.0 - p.dropout;
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut dropped = vec![0.0; x.cols()];

    for epoch in 0..p.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(p.batch_size) {
            let mut grad = vec![0.0; model.params.len()];
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let w = weights[y[i].index()];
                let row = x.row(i);
                let input = if p.dropout > 0.0 {
                    for (d, v) in dropped.iter_mut().zip(row) {
                        *d = if rng.gen::<f64>() < keep { v / keep } else { 0.0 };
                    }
                    &dropped[..]
                } else {
                    row
                };
                epoch_loss += w * model.accumulate(input, y[i].target(), w * scale, &mut grad);
            }
            opt.step(&mut model.params, &grad);
        }
        if !epoch_loss.is_finite() || model.params.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
    }
    Ok(model)
}
