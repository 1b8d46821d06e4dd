//! Heart rate variability features of one analysis window.
//!
//! Twenty-two features in three groups: time domain statistics of the RR
//! intervals and their successive differences (including the histogram-based
//! TINN and triangular index), spectral band powers of the evenly resampled
//! RR series, and Poincaré plot descriptors.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qrs::RrSeries;

pub const NUM_FEATURES: usize = 22;

/// Column names in feature-vector order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "HR", "MeanNN", "MedianNN", "MadNN", "StdNN", "CVNN", "IQRNN", "RMSSD", "StdSD", "pNN50",
    "pNN20", "TINN", "HTI", "LF", "HF", "LF_HF", "LFn", "HFn", "SD1", "SD2", "SD1_SD2", "S",
];

pub const LF_BAND_HZ: (f64, f64) = (0.04, 0.15);
pub const HF_BAND_HZ: (f64, f64) = (0.15, 0.4);

/// Consistency constant making the MAD comparable to a standard deviation.
const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Error, PartialEq)]
pub enum HrvError {
    #[error("need at least {needed} RR intervals, got {got}")]
    TooFewIntervals { needed: usize, got: usize },
    #[error("RR series spans {span_s:.1} s, spectral features need at least {needed_s} s")]
    ShortSpan { span_s: f64, needed_s: f64 },
    #[error("LF + HF power is zero")]
    ZeroTotalPower,
    #[error("HF power is zero, LF/HF undefined")]
    ZeroHfPower,
    #[error("SD2 is zero, SD1/SD2 undefined")]
    ZeroSd2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvConfig {
    /// Histogram bin width for TINN and HTI.
    pub hist_bin_ms: f64,
    /// Rate of the uniform grid the RR series is interpolated onto.
    pub interp_hz: f64,
    pub min_spectral_span_s: f64,
}

impl Default for HrvConfig {
    fn default() -> Self {
        HrvConfig {
            hist_bin_ms: 1000.0 / 128.0,
            interp_hz: 4.0,
            min_spectral_span_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDomain {
    pub hr: f64,
    pub mean_nn: f64,
    pub median_nn: f64,
    pub mad_nn: f64,
    pub std_nn: f64,
    pub cvnn: f64,
    pub iqr_nn: f64,
    pub rmssd: f64,
    pub std_sd: f64,
    pub pnn50: f64,
    pub pnn20: f64,
    pub tinn: f64,
    pub hti: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDomain {
    pub lf: f64,
    pub hf: f64,
    pub lf_hf: f64,
    pub lfn: f64,
    pub hfn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poincare {
    pub sd1: f64,
    pub sd2: f64,
    /// `None` when SD2 is zero.
    pub sd1_sd2: Option<f64>,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub hr: f64,
    pub mean_nn: f64,
    pub median_nn: f64,
    pub mad_nn: f64,
    pub std_nn: f64,
    pub cvnn: f64,
    pub iqr_nn: f64,
    pub rmssd: f64,
    pub std_sd: f64,
    pub pnn50: f64,
    pub pnn20: f64,
    pub tinn: f64,
    pub hti: f64,
    pub lf: f64,
    pub hf: f64,
    pub lf_hf: f64,
    pub lfn: f64,
    pub hfn: f64,
    pub sd1: f64,
    pub sd2: f64,
    pub sd1_sd2: f64,
    pub s: f64,
}

impl HrvFeatures {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.hr,
            self.mean_nn,
            self.median_nn,
            self.mad_nn,
            self.std_nn,
            self.cvnn,
            self.iqr_nn,
            self.rmssd,
            self.std_sd,
            self.pnn50,
            self.pnn20,
            self.tinn,
            self.hti,
            self.lf,
            self.hf,
            self.lf_hf,
            self.lfn,
            self.hfn,
            self.sd1,
            self.sd2,
            self.sd1_sd2,
            self.s,
        ]
    }

    pub fn from_array(v: [f64; NUM_FEATURES]) -> Self {
        HrvFeatures {
            hr: v[0],
            mean_nn: v[1],
            median_nn: v[2],
            mad_nn: v[3],
            std_nn: v[4],
            cvnn: v[5],
            iqr_nn: v[6],
            rmssd: v[7],
            std_sd: v[8],
            pnn50: v[9],
            pnn20: v[10],
            tinn: v[11],
            hti: v[12],
            lf: v[13],
            hf: v[14],
            lf_hf: v[15],
            lfn: v[16],
            hfn: v[17],
            sd1: v[18],
            sd2: v[19],
            sd1_sd2: v[20],
            s: v[21],
        }
    }
}

fn require(rr: &RrSeries, needed: usize) -> Result<(), HrvError> {
    if rr.len() < needed {
        return Err(HrvError::TooFewIntervals {
            needed,
            got: rr.len(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn successive_differences(rr: &[f64]) -> Vec<f64> {
    rr.windows(2).map(|w| w[1] - w[0]).collect()
}

/// RR histogram; bin `i` covers `[(first + i) w, (first + i + 1) w)`.
struct Histogram {
    first: i64,
    width: f64,
    counts: Vec<usize>,
}

impl Histogram {
    fn new(rr: &[f64], width: f64) -> Self {
        let key = |v: f64| (v / width).floor() as i64;
        let (lo, hi) = rr
            .iter()
            .fold((i64::MAX, i64::MIN), |(lo, hi), &v| (lo.min(key(v)), hi.max(key(v))));
        let mut counts = vec![0; (hi - lo + 1) as usize];
        for &v in rr {
            counts[(key(v) - lo) as usize] += 1;
        }
        Histogram {
            first: lo,
            width,
            counts,
        }
    }

    fn edge(&self, j: usize) -> f64 {
        (self.first + j as i64) as f64 * self.width
    }

    fn center(&self, i: usize) -> f64 {
        (self.first as f64 + i as f64 + 0.5) * self.width
    }

    /// First bin holding the maximum count.
    fn modal_bin(&self) -> usize {
        let max = *self.counts.iter().max().expect("non-empty histogram");
        self.counts.iter().position(|&c| c == max).unwrap()
    }

    /// Base width `M - N` of the triangle best fitting the histogram in the
    /// least-squares sense. The apex sits on the modal bin; `N` and `M` range
    /// over bin edges left and right of it.
    fn triangular_width(&self) -> f64 {
        let apex = self.modal_bin();
        let apex_t = self.center(apex);
        let apex_h = self.counts[apex] as f64;
        let nb = self.counts.len();

        let mut best: Option<(f64, f64)> = None;
        for left_edge in 0..=apex {
            let n = self.edge(left_edge);
            for right_edge in apex + 1..=nb {
                let m = self.edge(right_edge);
                let err: f64 = self
                    .counts
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let t = self.center(i);
                        let q = if t <= n || t >= m {
                            0.0
                        } else if t <= apex_t {
                            apex_h * (t - n) / (apex_t - n)
                        } else {
                            apex_h * (m - t) / (m - apex_t)
                        };
                        (c as f64 - q).powi(2)
                    })
                    .sum();
                // Ties within rounding keep the earlier (narrower-left) candidate.
                let better = match best {
                    None => true,
                    Some((e, _)) => err < e - 1e-9 * e.max(1.0),
                };
                if better {
                    best = Some((err, m - n));
                }
            }
        }
        best.map(|(_, w)| w).unwrap_or(0.0)
    }
}

pub fn time_domain(rr: &RrSeries, window_s: f64, cfg: &HrvConfig) -> Result<TimeDomain, HrvError> {
    require(rr, 2)?;
    let x = rr.rr_ms();
    let n = x.len();
    let sorted = sorted_copy(x);

    let mean_nn = mean(x);
    let median_nn = quantile_sorted(&sorted, 0.5);
    let abs_dev = sorted_copy(&x.iter().map(|v| (v - median_nn).abs()).collect::<Vec<_>>());
    let mad_nn = MAD_SCALE * quantile_sorted(&abs_dev, 0.5);
    let std_nn = sample_std(x);
    let iqr_nn = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);

    let d = successive_differences(x);
    let rmssd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    let std_sd = if d.len() > 1 { sample_std(&d) } else { 0.0 };
    let pct_over = |thr: f64| 100.0 * d.iter().filter(|v| v.abs() > thr).count() as f64 / d.len() as f64;

    let hist = Histogram::new(x, cfg.hist_bin_ms);
    let hti = n as f64 / hist.counts[hist.modal_bin()] as f64;

    Ok(TimeDomain {
        hr: rr.num_peaks() as f64 * 60.0 / window_s,
        mean_nn,
        median_nn,
        mad_nn,
        std_nn,
        cvnn: std_nn / mean_nn,
        iqr_nn,
        rmssd,
        std_sd,
        pnn50: pct_over(50.0),
        pnn20: pct_over(20.0),
        tinn: hist.triangular_width(),
        hti,
    })
}

/// RR values (each attached to the peak closing its interval) linearly
/// interpolated onto a uniform grid starting at the first such peak.
fn resample_rr(rr: &RrSeries, fs_hz: f64) -> Vec<f64> {
    let t = &rr.peak_times_ms()[1..];
    let v = rr.rr_ms();
    let step = 1000.0 / fs_hz;
    let count = ((t[t.len() - 1] - t[0]) / step).floor() as usize + 1;
    (0..count)
        .map(|k| {
            let g = t[0] + k as f64 * step;
            // Segment [t[i], t[i + 1]] containing g.
            let i = t.partition_point(|&ti| ti < g).saturating_sub(1).min(t.len() - 2);
            v[i] + (g - t[i]) / (t[i + 1] - t[i]) * (v[i + 1] - v[i])
        })
        .collect()
}

/// One-sided Hann-windowed periodogram as (frequencies, density).
fn periodogram(x: &[f64], fs_hz: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let m = mean(x);
    let window: Vec<f64> = (0..n)
        .map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / (n - 1) as f64).cos())
        .collect();
    let power: f64 = window.iter().map(|w| w * w).sum();
    let mut buf: Vec<Complex64> = x
        .iter()
        .zip(&window)
        .map(|(v, w)| Complex64::new((v - m) * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let freqs = (0..=half).map(|k| k as f64 * fs_hz / n as f64).collect();
    let psd = buf[..=half]
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let p = c.norm_sqr() / (fs_hz * power);
            let edge = k == 0 || (n.is_multiple_of(2) && k == half);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    (freqs, psd)
}

/// Trapezoidal integral over the bins whose frequency lies in `[lo, hi]`.
fn band_power(freqs: &[f64], psd: &[f64], (lo, hi): (f64, f64)) -> f64 {
    let inside = |f: f64| f >= lo && f <= hi;
    freqs
        .windows(2)
        .zip(psd.windows(2))
        .filter(|(f, _)| inside(f[0]) && inside(f[1]))
        .map(|(f, p)| 0.5 * (f[1] - f[0]) * (p[0] + p[1]))
        .sum()
}

pub fn frequency_domain(rr: &RrSeries, cfg: &HrvConfig) -> Result<FrequencyDomain, HrvError> {
    require(rr, 10)?;
    let t = rr.peak_times_ms();
    let span_s = (t[t.len() - 1] - t[0]) / 1000.0;
    if span_s < cfg.min_spectral_span_s {
        return Err(HrvError::ShortSpan {
            span_s,
            needed_s: cfg.min_spectral_span_s,
        });
    }
    let x = rr.rr_ms();
    if x.iter().all(|&v| v == x[0]) {
        return Err(HrvError::ZeroTotalPower);
    }
    let grid = resample_rr(rr, cfg.interp_hz);
    let (freqs, psd) = periodogram(&grid, cfg.interp_hz);
    let lf = band_power(&freqs, &psd, LF_BAND_HZ);
    let hf = band_power(&freqs, &psd, HF_BAND_HZ);
    let total = lf + hf;
    if !(total > 0.0) {
        return Err(HrvError::ZeroTotalPower);
    }
    if !(hf > 0.0) {
        return Err(HrvError::ZeroHfPower);
    }
    Ok(FrequencyDomain {
        lf,
        hf,
        lf_hf: lf / hf,
        lfn: lf / total,
        hfn: hf / total,
    })
}

pub fn poincare(rr: &RrSeries) -> Result<Poincare, HrvError> {
    require(rr, 3)?;
    let x = rr.rr_ms();
    let std_nn = sample_std(x);
    let sd1 = sample_std(&successive_differences(x)) / 2f64.sqrt();
    let sd2 = (2.0 * std_nn * std_nn - sd1 * sd1).max(0.0).sqrt();
    Ok(Poincare {
        sd1,
        sd2,
        sd1_sd2: (sd2 > 0.0).then(|| sd1 / sd2),
        s: PI * sd1 * sd2,
    })
}

pub fn extract_features(
    rr: &RrSeries,
    window_s: f64,
    cfg: &HrvConfig,
) -> Result<HrvFeatures, HrvError> {
    let td = time_domain(rr, window_s, cfg)?;
    let fd = frequency_domain(rr, cfg)?;
    let pc = poincare(rr)?;
    Ok(HrvFeatures {
        hr: td.hr,
        mean_nn: td.mean_nn,
        median_nn: td.median_nn,
        mad_nn: td.mad_nn,
        std_nn: td.std_nn,
        cvnn: td.cvnn,
        iqr_nn: td.iqr_nn,
        rmssd: td.rmssd,
        std_sd: td.std_sd,
        pnn50: td.pnn50,
        pnn20: td.pnn20,
        tinn: td.tinn,
        hti: td.hti,
        lf: fd.lf,
        hf: fd.hf,
        lf_hf: fd.lf_hf,
        lfn: fd.lfn,
        hfn: fd.hfn,
        sd1: pc.sd1,
        sd2: pc.sd2,
        sd1_sd2: pc.sd1_sd2.ok_or(HrvError::ZeroSd2)?,
        s: pc.s,
    })
}
