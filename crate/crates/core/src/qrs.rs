//! R-peak detection with two moving averages and the RR-interval series.
//!
//! The squared, half-wave rectified band-passed signal is smoothed over a
//! QRS-length window and over a beat-length window. Samples where the QRS
//! average exceeds the beat average plus an offset form blocks of interest;
//! blocks shorter than a QRS are rejected and each remaining block yields
//! one R peak at the maximum of the filtered signal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QrsError {
    #[error("signal of {len} samples is shorter than the beat window of {window} samples")]
    SignalTooShort { len: usize, window: usize },
    #[error("need at least 2 peaks, got {0}")]
    TooFewPeaks(usize),
    #[error("peak times must be finite and strictly increasing")]
    NonMonotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub qrs_window_ms: f64,
    pub beat_window_ms: f64,
    pub offset: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            qrs_window_ms: 97.0,
            beat_window_ms: 611.0,
            offset: 0.08,
        }
    }
}

/// Window length in samples rounded to the nearest odd count (minimum 1).
pub fn odd_window(ms: f64, fs_hz: f64) -> usize {
    let len = ms * fs_hz / 1000.0;
    // Odd numbers 2k+1 nearest to len.
    let k = ((len - 1.0) / 2.0).round().max(0.0);
    2 * k as usize + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    pub indices: Vec<usize>,
    pub fs_hz: f64,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times_ms(&self) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&i| i as f64 * 1000.0 / self.fs_hz)
            .collect()
    }
}

/// Peak times and the successive intervals between them, both in ms.
///
/// Intervals are always derived from the times by subtraction, so
/// `rr_ms[i] == peak_times_ms[i + 1] - peak_times_ms[i]` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrSeries {
    peak_times_ms: Vec<f64>,
    rr_ms: Vec<f64>,
}

impl RrSeries {
    pub fn from_peak_times(peak_times_ms: Vec<f64>) -> Result<Self, QrsError> {
        if peak_times_ms.len() < 2 {
            return Err(QrsError::TooFewPeaks(peak_times_ms.len()));
        }
        if peak_times_ms.iter().any(|t| !t.is_finite()) {
            return Err(QrsError::NonMonotonic);
        }
        let rr_ms: Vec<f64> = peak_times_ms.windows(2).map(|w| w[1] - w[0]).collect();
        if rr_ms.iter().any(|&d| d <= 0.0) {
            return Err(QrsError::NonMonotonic);
        }
        Ok(RrSeries {
            peak_times_ms,
            rr_ms,
        })
    }

    /// Builds the series starting at `start_ms` by accumulating `intervals`.
    pub fn from_intervals(start_ms: f64, intervals: &[f64]) -> Result<Self, QrsError> {
        let mut times = Vec::with_capacity(intervals.len() + 1);
        let mut t = start_ms;
        times.push(t);
        for &rr in intervals {
            t += rr;
            times.push(t);
        }
        RrSeries::from_peak_times(times)
    }

    pub fn rr_ms(&self) -> &[f64] {
        &self.rr_ms
    }

    pub fn peak_times_ms(&self) -> &[f64] {
        &self.peak_times_ms
    }

    pub fn num_peaks(&self) -> usize {
        self.peak_times_ms.len()
    }

    pub fn len(&self) -> usize {
        self.rr_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rr_ms.is_empty()
    }

    /// The same intervals with every peak time shifted by `offset_ms`.
    pub fn shifted(&self, offset_ms: f64) -> Result<Self, QrsError> {
        RrSeries::from_peak_times(self.peak_times_ms.iter().map(|t| t + offset_ms).collect())
    }
}

/// Centered moving average over an odd window, shrinking at the edges.
fn centered_mean(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

pub fn detect_r_peaks(x: &[f64], fs_hz: f64) -> Result<PeakList, QrsError> {
    detect_r_peaks_with(x, fs_hz, &DetectorConfig::default())
}

pub fn detect_r_peaks_with(
    x: &[f64],
    fs_hz: f64,
    cfg: &DetectorConfig,
) -> Result<PeakList, QrsError> {
    let w1 = odd_window(cfg.qrs_window_ms, fs_hz);
    let w2 = odd_window(cfg.beat_window_ms, fs_hz);
    if x.len() < w2 {
        return Err(QrsError::SignalTooShort {
            len: x.len(),
            window: w2,
        });
    }

    let energy: Vec<f64> = x.iter().map(|&v| if v > 0.0 { v * v } else { 0.0 }).collect();
    let ma_qrs = centered_mean(&energy, w1);
    let ma_beat = centered_mean(&energy, w2);
    let offset = cfg.offset * energy.iter().sum::<f64>() / energy.len() as f64;

    let mut indices: Vec<usize> = Vec::new();
    let push_block = |start: usize, end: usize, indices: &mut Vec<usize>| {
        if end - start < w1 {
            return;
        }
        let peak = (start..end)
            .reduce(|best, i| if x[i] > x[best] { i } else { best })
            .expect("block is non-empty");
        // Neighbouring blocks can still resolve to peaks closer than one QRS
        // width; keep the taller one.
        if let Some(&prev) = indices.last() {
            if peak - prev < w1 {
                if x[peak] > x[prev] {
                    *indices.last_mut().unwrap() = peak;
                }
                return;
            }
        }
        indices.push(peak);
    };

    let mut block_start = None;
    for i in 0..x.len() {
        let active = ma_qrs[i] > ma_beat[i] + offset;
        match (active, block_start) {
            (true, None) => block_start = Some(i),
            (false, Some(s)) => {
                push_block(s, i, &mut indices);
                block_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = block_start {
        push_block(s, x.len(), &mut indices);
    }

    Ok(PeakList { indices, fs_hz })
}

pub fn peaks_to_rr(p: &PeakList) -> Result<RrSeries, QrsError> {
    if p.len() < 2 {
        return Err(QrsError::TooFewPeaks(p.len()));
    }
    RrSeries::from_peak_times(p.times_ms())
}
