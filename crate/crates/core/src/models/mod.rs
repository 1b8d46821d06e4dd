//! The three HRV classifiers behind one train/predict interface.

mod format;
pub mod forest;
pub mod mlp;
pub mod svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::ingest::BinaryLabel;
use crate::windows::FeatureSample;

pub use forest::{ForestModel, ForestParams};
pub use format::{read_model, write_model, MAGIC, VERSION};
pub use mlp::{MlpModel, MlpParams};
pub use svm::{SvmModel, SvmParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set has a single class")]
    SingleClassTrainingSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("expected {expected} input columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("SMO did not converge within {updates} pair updates")]
    NoConvergence { updates: u64 },
    #[error("model file: {0}")]
    Format(String),
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn from_samples(samples: &[FeatureSample]) -> (Matrix, Vec<BinaryLabel>) {
        let rows: Vec<&[f64]> = samples.iter().map(|s| &s.features[..]).collect();
        (Matrix::from_rows(&rows), samples.iter().map(|s| s.label).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Balanced class weights `N / (2 N_c)`, indexed by [`BinaryLabel::index`].
pub fn class_weights(labels: &[BinaryLabel]) -> Result<[f64; 2], ModelError> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    if counts.contains(&0) {
        return Err(if labels.is_empty() {
            ModelError::EmptyTrainingSet
        } else {
            ModelError::SingleClassTrainingSet
        });
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)])
}

fn check_training_set(x: &Matrix, y: &[BinaryLabel]) -> Result<[f64; 2], ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::DimensionMismatch { expected: x.rows(), got: y.len() });
    }
    class_weights(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Rfc,
    Svm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Rfc, ModelKind::Svm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Rfc => "rfc",
            ModelKind::Svm => "svm",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Rfc => "RFC",
            ModelKind::Svm => "SVM",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: BinaryLabel,
    /// Stress probability; for the SVM a logistic squash of the decision value.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpModel),
    Rfc(ForestModel),
    Svm(SvmModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Rfc(_) => ModelKind::Rfc,
            Model::Svm(_) => ModelKind::Svm,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            Model::Mlp(m) => m.n_inputs(),
            Model::Rfc(m) => m.n_inputs(),
            Model::Svm(m) => m.n_inputs(),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<Prediction>, ModelError> {
        if x.cols() != self.n_inputs() {
            return Err(ModelError::DimensionMismatch { expected: self.n_inputs(), got: x.cols() });
        }
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    fn predict_row(&self, row: &[f64]) -> Prediction {
        match self {
            Model::Mlp(m) => {
                let p = m.probability(row);
                Prediction { label: threshold(p > 0.5), probability: p }
            }
            Model::Rfc(m) => {
                let votes = m.stress_votes(row);
                let n = m.trees.len();
                Prediction { label: threshold(2 * votes > n), probability: votes as f64 / n as f64 }
            }
            Model::Svm(m) => {
                let d = m.decision(row);
                Prediction { label: threshold(d > 0.0), probability: 1.0 / (1.0 + (-d).exp()) }
            }
        }
    }
}

fn threshold(stress: bool) -> BinaryLabel {
    if stress {
        BinaryLabel::Stress
    } else {
        BinaryLabel::NoStress
    }
}

/// Trains one model of `kind`; all randomness comes from `seed`.
pub fn train(kind: ModelKind, x: &Matrix, y: &[BinaryLabel], cfg: &PipelineConfig, seed: u64) -> Result<Model, ModelError> {
    Ok(match kind {
        ModelKind::Mlp => Model::Mlp(mlp::train(x, y, &MlpParams::from_config(cfg), seed)?),
        ModelKind::Rfc => Model::Rfc(forest::train(x, y, &ForestParams::from_config(cfg), seed)?),
        ModelKind::Svm => Model::Svm(svm::train(x, y, &SvmParams::from_config(cfg), seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::*;

    #[test]
    fn weights() {
        let y: Vec<BinaryLabel> = (0..100).map(|i| if i < 50 { NoStress } else { Stress }).collect();
        assert_eq!(class_weights(&y).unwrap(), [1.0, 1.0]);
        let y: Vec<BinaryLabel> = (0..100).map(|i| if i < 90 { NoStress } else { Stress }).collect();
        let w = class_weights(&y).unwrap();
        assert!((w[0] - 100.0 / 180.0).abs() < 1e-15);
        assert_eq!(w[1], 5.0);
        assert!(matches!(class_weights(&[Stress; 4]), Err(ModelError::SingleClassTrainingSet)));
        assert!(matches!(class_weights(&[]), Err(ModelError::EmptyTrainingSet)));
    }

    #[test]
    fn kinds_parse() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(ModelKind::parse("lda"), None);
    }

    #[test]
    fn predict_checks_columns() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.1, 0.0], [0.9, 1.0]]);
        let y = [NoStress, Stress, NoStress, Stress];
        let cfg = PipelineConfig::default();
        let m = train(ModelKind::Svm, &x, &y, &cfg, 1).unwrap();
        let wrong = Matrix::from_rows(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(m.predict(&wrong), Err(ModelError::DimensionMismatch { expected: 2, got: 3 })));
    }
}
