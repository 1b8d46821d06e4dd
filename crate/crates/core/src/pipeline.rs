//! Recording → feature-row pipeline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::config::{CrossMode, PipelineConfig};
use crate::config::ConfigError;
use crate::dsp::{self, DspError};
use crate::hrv::{self, FEATURE_NAMES, NUM_FEATURES};
use crate::ingest::Recording;
use crate::qrs;
use crate::windows::{self, FeatureSample, WindowError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("subject {subject}: {source}")]
    Dsp { subject: String, source: DspError },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Resamples to `target_hz` (when above it) and applies the band-pass.
pub fn preprocess(r: &Recording, cfg: &PipelineConfig) -> Result<Recording, PipelineError> {
    let dsp_err = |source| PipelineError::Dsp { subject: r.manifest.subject_id.clone(), source };
    let resampled = if r.fs_hz() == cfg.target_hz {
        r.clone()
    } else {
        dsp::resample(r, cfg.target_hz).map_err(dsp_err)?
    };
    let design = dsp::design_butterworth_bandpass(cfg.filter_order, cfg.band_low_hz, cfg.band_high_hz, cfg.target_hz)
        .map_err(dsp_err)?;
    let filtered = dsp::apply_filter(&resampled.samples_f64(), &design, cfg.filter_mode).map_err(dsp_err)?;
    Ok(Recording {
        manifest: resampled.manifest,
        samples: filtered.into_iter().map(|v| v as f32).collect(),
    })
}

/// Feature rows of one subject together with bookkeeping about what was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub dataset_id: String,
    pub samples: Vec<FeatureSample>,
    pub norm: windows::NormParams,
    /// Features with an empty baseline range, mapped to 0 for this subject.
    pub degenerate_features: Vec<String>,
    pub windows_total: usize,
    pub windows_dropped: usize,
    pub baseline_windows: usize,
}

/// Windows, detects and extracts raw features from an already filtered
/// recording, then normalizes them with the subject's own baseline.
pub fn extract_subject(filtered: &Recording, cfg: &PipelineConfig) -> Result<SubjectFeatures, PipelineError> {
    let signal = filtered.samples_f64();
    let wins = windows::segment(filtered, &signal, cfg.window_s, cfg.stride_s)?;
    let det = cfg.detector();
    let hrv_cfg = cfg.hrv();
    let fs = filtered.fs_hz();

    let mut raw = Vec::with_capacity(wins.len());
    for w in &wins {
        let Ok(peaks) = qrs::detect_r_peaks_with(&w.samples, fs, &det) else {
            continue;
        };
        let Ok(mut rr) = qrs::peaks_to_rr(&peaks) else {
            continue;
        };
        if rr.len() < cfg.min_intervals {
            continue;
        }
        // Window-relative peak times back on the recording clock.
        rr = rr.shifted(w.start_s * 1000.0).expect("shift keeps order");
        let Ok(f) = hrv::extract_features(&rr, cfg.window_s, &hrv_cfg) else {
            continue;
        };
        let f = f.to_array();
        if f.iter().all(|v| v.is_finite()) {
            raw.push((w, f));
        }
    }

    let baseline: Vec<[f64; NUM_FEATURES]> = raw
        .iter()
        .filter(|(w, _)| windows::in_baseline(filtered, w.start_s, cfg.window_s, cfg.baseline_s))
        .map(|(_, f)| *f)
        .collect();
    let norm = windows::baseline_norm_params(&filtered.manifest.subject_id, &baseline)?;

    let mut degenerate = [false; NUM_FEATURES];
    let samples = raw
        .iter()
        .map(|(w, f)| {
            let n = windows::normalize(f, &norm);
            for (d, nd) in degenerate.iter_mut().zip(n.degenerate) {
                *d |= nd;
            }
            FeatureSample {
                subject_id: w.subject_id.clone(),
                dataset_id: w.dataset_id.clone(),
                window_start_s: w.start_s,
                label: w.label,
                features: n.values,
            }
        })
        .collect::<Vec<_>>();

    Ok(SubjectFeatures {
        subject_id: filtered.manifest.subject_id.clone(),
        dataset_id: filtered.manifest.dataset_id.clone(),
        windows_total: wins.len(),
        windows_dropped: wins.len() - samples.len(),
        baseline_windows: baseline.len(),
        samples,
        norm,
        degenerate_features: FEATURE_NAMES
            .iter()
            .zip(degenerate)
            .filter(|(_, d)| *d)
            .map(|(n, _)| n.to_string())
            .collect(),
    })
}

/// Preprocesses and extracts every recording in parallel; output order follows input order.
pub fn extract_dataset(
    recordings: &[Recording],
    cfg: &PipelineConfig,
    already_filtered: bool,
) -> Vec<Result<SubjectFeatures, PipelineError>> {
    recordings
        .par_iter()
        .map(|r| {
            if already_filtered {
                extract_subject(r, cfg)
            } else {
                extract_subject(&preprocess(r, cfg)?, cfg)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_subject, DatasetSpec};

    #[test]
    fn synthetic_subject_extracts_every_window() {
        let spec = DatasetSpec::sensor_a("wesad", 2, 3);
        let (r, _) = gen_subject(&spec, 0).unwrap();
        let cfg = PipelineConfig::default();
        let f = extract_subject(&preprocess(&r, &cfg).unwrap(), &cfg).unwrap();
        // 420 s, 300 s and 240 s conditions.
        assert_eq!(f.windows_total, 37 + 25 + 19);
        assert_eq!(f.windows_dropped, 0);
        assert_eq!(f.baseline_windows, 25);
        assert!(f.samples.iter().all(|s| s.features.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn resamples_from_source_rate() {
        let mut spec = DatasetSpec::sensor_a("wesad", 2, 3);
        spec.fs_hz = 700.0;
        spec.layout.truncate(1);
        let (r, _) = gen_subject(&spec, 1).unwrap();
        let cfg = PipelineConfig::default();
        let p = preprocess(&r, &cfg).unwrap();
        assert_eq!(p.fs_hz(), 256.0);
        assert_eq!(p.samples.len(), 420 * 256);
        let f = extract_subject(&p, &cfg).unwrap();
        assert_eq!(f.samples.len(), 37);
    }

    #[test]
    fn no_baseline_is_an_error() {
        let mut spec = DatasetSpec::sensor_a("wesad", 2, 3);
        spec.layout = vec![(crate::ingest::Condition::TsstStress, 120.0)];
        let (r, _) = gen_subject(&spec, 0).unwrap();
        let cfg = PipelineConfig::default();
        let err = extract_subject(&preprocess(&r, &cfg).unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Window(WindowError::NoBaselineData(_))));
    }
}
