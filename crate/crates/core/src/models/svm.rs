//! Soft-margin RBF support vector machine solved by sequential minimal
//! optimization with second-order working-pair selection.

use rand::seq::SliceRandom;

use super::{check_training_set, Matrix, ModelError};
use crate::config::PipelineConfig;
use crate::ingest::BinaryLabel;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects `1 / (n_features * var(X))`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_pair_updates: u64,
}

impl SvmParams {
    pub fn from_config(c: &PipelineConfig) -> Self {
        SvmParams {
            c: c.svm_c,
            gamma: c.svm_gamma,
            tol: c.svm_tol,
            max_pair_updates: c.svm_max_pair_updates,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub n_inputs: usize,
    pub gamma: f64,
    /// Decision offset: `f(x) = Σ coef_i K(sv_i, x) - rho`.
    pub rho: f64,
    /// `alpha_i * y_i` for every support vector.
    pub coef: Vec<f64>,
    pub support: Matrix,
}

impl SvmModel {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut s = -self.rho;
        for (k, c) in self.coef.iter().enumerate() {
            s += c * rbf(self.gamma, self.support.row(k), x);
        }
        s
    }
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d2).exp()
}

/// Population variance of every entry of `x`.
pub fn scale_gamma(x: &Matrix) -> f64 {
    let d = x.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.cols() as f64 * var)
    } else {
        1.0
    }
}

/// Kernel values, precomputed when the full matrix is affordable.
enum Kernel<'a> {
    Full { n: usize, k: Vec<f64> },
    OnDemand { x: &'a Matrix, gamma: f64 },
}

const FULL_KERNEL_MAX_ROWS: usize = 6000;

impl<'a> Kernel<'a> {
    fn new(x: &'a Matrix, gamma: f64) -> Self {
        let n = x.rows();
        if n > FULL_KERNEL_MAX_ROWS {
            return Kernel::OnDemand { x, gamma };
        }
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in 0..i {
                let v = rbf(gamma, x.row(i), x.row(j));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Kernel::Full { n, k }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Kernel::Full { n, k } => k[i * n + j],
            Kernel::OnDemand { x, gamma } => rbf(*gamma, x.row(i), x.row(j)),
        }
    }
}

/// Dual state after training, exposed for checking optimality conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub upper: Vec<f64>,
    pub rho: f64,
    /// `max_{I_up} -y G - min_{I_low} -y G` at termination.
    pub kkt_gap: f64,
    pub pair_updates: u64,
}

pub fn train(x: &Matrix, y: &[BinaryLabel], p: &SvmParams, seed: u64) -> Result<SvmModel, ModelError> {
    train_with_dual(x, y, p, seed).map(|(m, _)| m)
}

pub fn train_with_dual(
    x: &Matrix,
    y: &[BinaryLabel],
    p: &SvmParams,
    seed: u64,
) -> Result<(SvmModel, DualSolution), ModelError> {
    let weights = check_training_set(x, y)?;
    let n = x.rows();
    let gamma = p.gamma.unwrap_or_else(|| scale_gamma(x));
    let kernel = Kernel::new(x, gamma);
    let ys: Vec<f64> = y.iter().map(|l| if *l == BinaryLabel::Stress { 1.0 } else { -1.0 }).collect();
    let upper: Vec<f64> = y.iter().map(|l| p.c * weights[l.index()]).collect();
    let mut alpha = vec![0.0; n];
    // Gradient of ½ aᵀQa - eᵀa with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];

    // Scan order fixes which index wins among equally violating candidates.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &["svm", "order"]));

    const TAU: f64 = 1e-12;
    let in_up = |t: usize, a: &[f64]| (ys[t] > 0.0 && a[t] < upper[t]) || (ys[t] < 0.0 && a[t] > 0.0);
    let in_low = |t: usize, a: &[f64]| (ys[t] > 0.0 && a[t] > 0.0) || (ys[t] < 0.0 && a[t] < upper[t]);

    let mut updates = 0u64;
    let kkt_gap = loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        for &t in &order {
            let v = -ys[t] * grad[t];
            if in_up(t, &alpha) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(t, &alpha) && v < gmin {
                gmin = v;
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || gap <= p.tol {
            break gap.max(0.0);
        }
        if updates >= p.max_pair_updates {
            return Err(ModelError::NoConvergence { updates });
        }

        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for &t in &order {
            if !in_low(t, &alpha) {
                continue;
            }
            let b = gmax + ys[t] * grad[t];
            if b <= 0.0 {
                continue;
            }
            let a = kernel.get(i, i) + kernel.get(t, t) - 2.0 * kernel.get(i, t);
            let obj = -(b * b) / if a > 0.0 { a } else { TAU };
            if obj < best {
                best = obj;
                j = t;
            }
        }
        if j == usize::MAX {
            break gap.max(0.0);
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = kernel.get(i, j);
        let quad = (kernel.get(i, i) + kernel.get(j, j) - 2.0 * kij).max(TAU);
        let (ci, cj) = (upper[i], upper[j]);
        if ys[i] != ys[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += ys[t] * (ys[i] * kernel.get(t, i) * di + ys[j] * kernel.get(t, j) * dj);
        }
        updates += 1;
    };

    // Offset from free vectors, or the middle of the feasible interval.
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < upper[t] {
            sum += yg;
            count += 1;
        } else if (alpha[t] >= upper[t]) == (ys[t] > 0.0) {
            lb = lb.max(yg);
        } else {
            ub = ub.min(yg);
        }
    }
    let rho = if count > 0 { sum / count as f64 } else { 0.5 * (ub + lb) };

    let mut coef = Vec::new();
    let mut rows = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            coef.push(alpha[t] * ys[t]);
            rows.push(x.row(t));
        }
    }
    let support = if rows.is_empty() { Matrix::new(0, x.cols(), Vec::new()) } else { Matrix::from_rows(&rows) };
    let model = SvmModel { n_inputs: x.cols(), gamma, rho, coef, support };
    Ok((model, DualSolution { alpha, upper, rho, kkt_gap, pair_updates: updates }))
}
