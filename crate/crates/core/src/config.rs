//! Every tunable of the pipeline in one flat, serializable record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::FilterMode;
use crate::hrv::{HrvConfig, NUM_FEATURES};
use crate::qrs::DetectorConfig;

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CrossMode {
    #[default]
    FoldMean,
    RetrainAll,
}

/// Every tunable of the pipeline. Serialized flat, one key per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub target_hz: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Butterworth prototype order; the band-pass has twice as many poles.
    pub filter_order: usize,
    pub filter_mode: FilterMode,
    pub window_s: f64,
    pub stride_s: f64,
    pub baseline_s: f64,
    pub min_intervals: usize,
    pub hist_bin_ms: f64,
    pub interp_hz: f64,
    pub min_spectral_span_s: f64,
    pub qrs_window_ms: f64,
    pub beat_window_ms: f64,
    pub detector_offset: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub dropout: f64,
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub max_features: usize,
    pub svm_c: f64,
    /// `None` selects 1 / (n_features * var(X)).
    pub svm_gamma: Option<f64>,
    pub svm_tol: f64,
    pub svm_max_pair_updates: u64,
    pub cross_mode: CrossMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            target_hz: 256.0,
            band_low_hz: 8.0,
            band_high_hz: 20.0,
            filter_order: 2,
            filter_mode: FilterMode::ZeroPhase,
            window_s: 60.0,
            stride_s: 10.0,
            baseline_s: 300.0,
            min_intervals: 10,
            hist_bin_ms: 7.8125,
            interp_hz: 4.0,
            min_spectral_span_s: 30.0,
            qrs_window_ms: 97.0,
            beat_window_ms: 611.0,
            detector_offset: 0.08,
            epochs: 200,
            batch_size: 128,
            learning_rate: 1.0,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-7,
            dropout: 0.2,
            n_trees: 100,
            min_samples_split: 20,
            max_features: 5,
            svm_c: 1.0,
            svm_gamma: None,
            svm_tol: 1e-3,
            svm_max_pair_updates: 1_000_000,
            cross_mode: CrossMode::FoldMean,
        }
    }
}

impl PipelineConfig {
    pub fn hrv(&self) -> HrvConfig {
        HrvConfig {
            hist_bin_ms: self.hist_bin_ms,
            interp_hz: self.interp_hz,
            min_spectral_span_s: self.min_spectral_span_s,
        }
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            qrs_window_ms: self.qrs_window_ms,
            beat_window_ms: self.beat_window_ms,
            offset: self.detector_offset,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.into()));
        if !(self.target_hz > 0.0) {
            return bad("target_hz must be positive");
        }
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz && self.band_high_hz < self.target_hz / 2.0) {
            return bad("need 0 < band_low_hz < band_high_hz < target_hz / 2");
        }
        if self.filter_order == 0 {
            return bad("filter_order must be at least 1");
        }
        if !(self.window_s > 0.0 && self.stride_s > 0.0 && self.stride_s <= self.window_s) {
            return bad("need window_s > 0 and 0 < stride_s <= window_s");
        }
        if !(self.baseline_s > 0.0) {
            return bad("baseline_s must be positive");
        }
        if self.min_intervals < 2 {
            return bad("min_intervals must be at least 2");
        }
        if !(self.hist_bin_ms > 0.0 && self.interp_hz > 0.0) {
            return bad("hist_bin_ms and interp_hz must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("epochs, batch_size and learning_rate must be positive");
        }
        if !(self.adadelta_rho > 0.0 && self.adadelta_rho < 1.0 && self.adadelta_eps > 0.0) {
            return bad("adadelta_rho must be in (0, 1) and adadelta_eps positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.n_trees == 0 || self.min_samples_split < 2 || self.max_features == 0 || self.max_features > NUM_FEATURES {
            return bad("need n_trees >= 1, min_samples_split >= 2, 1 <= max_features <= 22");
        }
        if !(self.svm_c > 0.0 && self.svm_tol > 0.0) || self.svm_gamma.is_some_and(|g| !(g > 0.0)) {
            return bad("svm_c, svm_tol and svm_gamma must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hrv(), HrvConfig::default());
        assert_eq!(c.detector(), DetectorConfig::default());
        let bad = PipelineConfig { stride_s: 70.0, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig { max_features: 23, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig { svm_gamma: Some(0.0), ..c };
        assert!(bad.validate().is_err());
    }
}
