//! Central finite-difference check of the MLP loss gradient.

use hrv_stress::ingest::BinaryLabel;
use hrv_stress::models::{mlp::MlpModel, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

/// Worst per-parameter relative error on one random 22-12-6-1 instance.
pub fn max_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpModel::init(&[22, 12, 6, 1], &mut rng);
    // Non-zero biases so ReLUs sit away from their kink.
    for p in net.params_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    let n = 32;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..22).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let x = Matrix::from_rows(&rows);
    let y: Vec<BinaryLabel> = (0..n).map(|_| if rng.gen_bool(0.3) { BinaryLabel::Stress } else { BinaryLabel::NoStress }).collect();
    let weights = [rng.gen_range(0.5..1.0), rng.gen_range(1.0..3.0)];
    let idx: Vec<usize> = (0..n).collect();

    let (_, analytic) = net.loss_and_grad(&x, &y, weights, &idx);
    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let orig = net.params()[k];
        net.params_mut()[k] = orig + EPS;
        let up = net.loss(&x, &y, weights, &idx);
        net.params_mut()[k] = orig - EPS;
        let down = net.loss(&x, &y, weights, &idx);
        net.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}
