//! Labeled analysis windows, per-user baseline normalization and the
//! feature CSV.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hrv::{FEATURE_NAMES, NUM_FEATURES};
use crate::ingest::{self, BinaryLabel, Condition, Recording};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window_s must be positive and 0 < stride_s <= window_s (got {window_s}, {stride_s})")]
    InvalidWindow { window_s: f64, stride_s: f64 },
    #[error("subject {0} has no baseline windows")]
    NoBaselineData(String),
    #[error("feature CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature CSV row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Slack for floating-point window arithmetic on second-valued boundaries.
const EPS_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisWindow {
    pub subject_id: String,
    pub dataset_id: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub label: BinaryLabel,
    pub condition: Condition,
    pub samples: Vec<f64>,
}

/// Window placement without sample data: `(start_s, condition)` pairs.
pub fn window_starts(
    conditions: &[ingest::ConditionInterval],
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<(f64, Condition)>, WindowError> {
    if !(window_s > 0.0 && stride_s > 0.0 && stride_s <= window_s) {
        return Err(WindowError::InvalidWindow { window_s, stride_s });
    }
    let mut out = Vec::new();
    for iv in conditions {
        let mut k = 0usize;
        loop {
            let start = iv.start_s + k as f64 * stride_s;
            if start + window_s > iv.end_s + EPS_S {
                break;
            }
            out.push((start, iv.label.clone()));
            k += 1;
        }
    }
    Ok(out)
}

/// Cuts `signal` (sampled like `r`) into windows anchored at each condition
/// start. Conditions without a binary label are skipped.
pub fn segment(
    r: &Recording,
    signal: &[f64],
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<AnalysisWindow>, WindowError> {
    let fs = r.fs_hz();
    let len = (window_s * fs).round() as usize;
    let mut out = Vec::new();
    for (start_s, condition) in window_starts(&r.manifest.conditions, window_s, stride_s)? {
        let Ok(label) = ingest::map_condition(&condition, &r.manifest.dataset_id) else {
            continue;
        };
        let i0 = ((start_s * fs).round() as usize).min(signal.len());
        let i1 = (i0 + len).min(signal.len());
        out.push(AnalysisWindow {
            subject_id: r.manifest.subject_id.clone(),
            dataset_id: r.manifest.dataset_id.clone(),
            start_s,
            duration_s: window_s,
            label,
            condition,
            samples: signal[i0..i1].to_vec(),
        });
    }
    Ok(out)
}

/// True when `[start_s, start_s + window_s]` lies in the first `baseline_s`
/// seconds of the subject's first resting condition.
pub fn in_baseline(
    r: &Recording,
    start_s: f64,
    window_s: f64,
    baseline_s: f64,
) -> bool {
    let Some(iv) = r
        .manifest
        .conditions
        .iter()
        .filter(|c| ingest::is_baseline_condition(&c.label, &r.manifest.dataset_id))
        .min_by(|a, b| a.start_s.total_cmp(&b.start_s))
    else {
        return false;
    };
    let limit = (iv.start_s + baseline_s).min(iv.end_s);
    start_s + EPS_S >= iv.start_s && start_s + window_s <= limit + EPS_S
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

pub fn baseline_norm_params(
    subject_id: &str,
    baseline: &[[f64; NUM_FEATURES]],
) -> Result<NormParams, WindowError> {
    if baseline.is_empty() {
        return Err(WindowError::NoBaselineData(subject_id.into()));
    }
    let mut p = NormParams {
        min: [f64::INFINITY; NUM_FEATURES],
        max: [f64::NEG_INFINITY; NUM_FEATURES],
    };
    for f in baseline {
        for j in 0..NUM_FEATURES {
            p.min[j] = p.min[j].min(f[j]);
            p.max[j] = p.max[j].max(f[j]);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub values: [f64; NUM_FEATURES],
    /// Features whose baseline range was empty (min == max) and were mapped to 0.
    pub degenerate: [bool; NUM_FEATURES],
}

pub fn normalize(f: &[f64; NUM_FEATURES], p: &NormParams) -> Normalized {
    let mut values = [0.0; NUM_FEATURES];
    let mut degenerate = [false; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let range = p.max[j] - p.min[j];
        if range > 0.0 {
            values[j] = (f[j] - p.min[j]) / range;
        } else {
            degenerate[j] = true;
        }
    }
    Normalized { values, degenerate }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub subject_id: String,
    pub dataset_id: String,
    pub window_start_s: f64,
    pub label: BinaryLabel,
    pub features: [f64; NUM_FEATURES],
}

impl FeatureSample {
    /// Subject id qualified by its dataset, unique across pooled datasets.
    pub fn subject_key(&self) -> String {
        format!("{}/{}", self.dataset_id, self.subject_id)
    }
}

pub fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["subject_id", "dataset_id", "window_start_s", "label"];
    h.extend_from_slice(&FEATURE_NAMES);
    h
}

pub fn write_feature_csv<W: Write>(w: W, rows: &[FeatureSample]) -> Result<(), WindowError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header())?;
    for r in rows {
        let mut rec = vec![
            r.subject_id.clone(),
            r.dataset_id.clone(),
            r.window_start_s.to_string(),
            r.label.as_str().to_string(),
        ];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(r: R) -> Result<Vec<FeatureSample>, WindowError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != csv_header() {
        return Err(WindowError::BadRow { row: 0, reason: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |reason: String| WindowError::BadRow { row, reason };
        let num = |k: usize| -> Result<f64, WindowError> {
            let s = &rec[k];
            let v: f64 = s.parse().map_err(|_| bad(format!("column {k}: not a number: {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("column {k}: non-finite")))
            }
        };
        let label = BinaryLabel::parse(&rec[3]).ok_or_else(|| bad(format!("bad label {:?}", &rec[3])))?;
        let mut features = [0.0; NUM_FEATURES];
        for (j, f) in features.iter_mut().enumerate() {
            *f = num(4 + j)?;
        }
        rows.push(FeatureSample {
            subject_id: rec[0].to_string(),
            dataset_id: rec[1].to_string(),
            window_start_s: num(2)?,
            label,
            features,
        });
    }
    Ok(rows)
}
