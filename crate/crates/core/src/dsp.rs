//! Resampling and QRS-band filtering.
//!
//! The band-pass is a Butterworth design: an analog low-pass prototype of
//! order `N` is shifted to a band-pass (2N poles), mapped to the z-plane by
//! the bilinear transform with pre-warped band edges, and factored into
//! second-order sections. Filtering is forward-backward by default so that
//! R-peak locations are not delayed.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Manifest, Recording};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid band [{low_hz}, {high_hz}] Hz at fs = {fs_hz} Hz")]
    InvalidBand { low_hz: f64, high_hz: f64, fs_hz: f64 },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("cannot resample {from_hz} Hz up to {to_hz} Hz")]
    UpsampleRequested { from_hz: f64, to_hz: f64 },
    #[error("invalid target rate {0} Hz")]
    InvalidRate(f64),
    #[error("empty signal")]
    EmptySignal,
}

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    fn run(&self, x: &mut [f64]) {
        // Direct form II transposed.
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandpassDesign {
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs_hz: f64,
    pub order: usize,
    pub sections: Vec<Biquad>,
    /// Samples until the impulse response envelope falls below 1e-6 of its peak.
    pub impulse_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    #[default]
    ZeroPhase,
    Causal,
}

/// Order-2 prototype band-pass, the configuration used throughout the pipeline.
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs_hz: f64) -> Result<BandpassDesign, DspError> {
    design_butterworth_bandpass(2, low_hz, high_hz, fs_hz)
}

pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs_hz: f64,
) -> Result<BandpassDesign, DspError> {
    let valid = low_hz.is_finite()
        && high_hz.is_finite()
        && fs_hz.is_finite()
        && low_hz > 0.0
        && low_hz < high_hz
        && high_hz < fs_hz / 2.0;
    if !valid {
        return Err(DspError::InvalidBand {
            low_hz,
            high_hz,
            fs_hz,
        });
    }
    if order == 0 {
        return Err(DspError::InvalidOrder);
    }

    let fs2 = 2.0 * fs_hz;
    let warp = |f: f64| fs2 * (PI * f / fs_hz).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let n = order as i64;
    let mut analog_poles = Vec::with_capacity(2 * order);
    for m in (-n + 1..n).step_by(2) {
        let p = -Complex64::from_polar(1.0, PI * m as f64 / (2.0 * n as f64));
        let half = p * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        analog_poles.push(half + root);
        analog_poles.push(half - root);
    }

    // Bilinear map; the N analog zeros at s = 0 land on z = 1 and the N at
    // infinity on z = -1, so every section's numerator is 1 - z^-2.
    let mut gain = Complex64::new(bw.powi(order as i32), 0.0) * fs2.powi(order as i32);
    let mut digital_poles = Vec::with_capacity(analog_poles.len());
    for &p in &analog_poles {
        gain /= fs2 - p;
        digital_poles.push((fs2 + p) / (fs2 - p));
    }
    let gain = gain.re;

    let sections = pair_poles(&digital_poles)
        .into_iter()
        .enumerate()
        .map(|(i, (a1, a2))| {
            let g = if i == 0 { gain } else { 1.0 };
            Biquad {
                b0: g,
                b1: 0.0,
                b2: -g,
                a1,
                a2,
            }
        })
        .collect();

    let mut design = BandpassDesign {
        low_hz,
        high_hz,
        fs_hz,
        order,
        sections,
        impulse_len: 0,
    };
    design.impulse_len = design.effective_impulse_len();
    Ok(design)
}

/// Groups poles into real second-order denominators `(a1, a2)`.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    const IMAG_EPS: f64 = 1e-12;
    let mut out = Vec::new();
    let mut reals = Vec::new();
    for p in poles {
        if p.im > IMAG_EPS {
            out.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= IMAG_EPS {
            reals.push(p.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    for pair in reals.chunks(2) {
        match *pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2)),
            [r] => out.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

impl BandpassDesign {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.fs_hz);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |h, s| h * s.response(z_inv))
    }

    pub fn magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.poles().iter().all(|p| p.norm() < 1.0))
    }

    fn effective_impulse_len(&self) -> usize {
        let max_len = (60.0 * self.fs_hz).ceil() as usize;
        let mut h = vec![0.0; max_len];
        h[0] = 1.0;
        for s in &self.sections {
            s.run(&mut h);
        }
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let last = h.iter().rposition(|v| v.abs() > 1e-6 * peak).unwrap_or(0);
        last + 1
    }

    fn run_cascade(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }
}

/// Zero-phase band-pass filtering.
pub fn filter_signal(x: &[f64], d: &BandpassDesign) -> Result<Vec<f64>, DspError> {
    apply_filter(x, d, FilterMode::ZeroPhase)
}

pub fn apply_filter(x: &[f64], d: &BandpassDesign, mode: FilterMode) -> Result<Vec<f64>, DspError> {
    if x.is_empty() {
        return Err(DspError::EmptySignal);
    }
    match mode {
        FilterMode::Causal => {
            let mut y = x.to_vec();
            d.run_cascade(&mut y);
            Ok(y)
        }
        FilterMode::ZeroPhase => {
            let n = x.len();
            let pad = (3 * d.impulse_len).min(n - 1);
            let mut ext = Vec::with_capacity(n + 2 * pad);
            // Odd reflection keeps the padded signal continuous in value and slope.
            let (first, last) = (x[0], x[n - 1]);
            ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
            ext.extend_from_slice(x);
            ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

            d.run_cascade(&mut ext);
            ext.reverse();
            d.run_cascade(&mut ext);
            ext.reverse();
            Ok(ext[pad..pad + n].to_vec())
        }
    }
}

/// Windowed-sinc (Hamming) low-pass taps, unit DC gain, odd length.
fn lowpass_fir(cutoff_hz: f64, transition_hz: f64, fs_hz: f64) -> Vec<f64> {
    let mut len = (3.3 * fs_hz / transition_hz).ceil() as usize;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let mid = (len / 2) as f64;
    let fc = cutoff_hz / fs_hz;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let k = i as f64 - mid;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Sample `i` of `x` extended past both ends by odd reflection
/// (`2 x[0] - x[-i]`), clamped for signals shorter than the reach.
fn odd_extended(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    if i < 0 {
        2.0 * x[0] - x[(-i).min(n - 1) as usize]
    } else if i >= n {
        2.0 * x[(n - 1) as usize] - x[(2 * (n - 1) - i).max(0) as usize]
    } else {
        x[i as usize]
    }
}

/// Output length for a rate change, tolerant of float noise in exact ratios.
pub fn resampled_len(n_in: usize, fs_in: f64, target_hz: f64) -> usize {
    (n_in as f64 * target_hz / fs_in + 1e-9).floor() as usize
}

/// Anti-aliased downsampling of a sample stream.
///
/// A symmetric FIR low-pass (cutoff `0.45 * target_hz`) is evaluated at the
/// source samples bracketing each output instant `k / target_hz`, and the
/// output is linearly interpolated between them.
pub fn resample_samples(x: &[f64], fs_in: f64, target_hz: f64) -> Result<Vec<f64>, DspError> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(DspError::InvalidRate(target_hz));
    }
    if target_hz > fs_in {
        return Err(DspError::UpsampleRequested {
            from_hz: fs_in,
            to_hz: target_hz,
        });
    }
    if target_hz == fs_in {
        return Ok(x.to_vec());
    }
    let n_out = resampled_len(x.len(), fs_in, target_hz);
    if n_out == 0 {
        return Ok(Vec::new());
    }
    let taps = lowpass_fir(0.45 * target_hz, 0.1 * target_hz, fs_in);
    let half = (taps.len() / 2) as isize;
    let n = x.len();
    let filtered_at = |i: usize| -> f64 {
        let i = i as isize;
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * odd_extended(x, i + k as isize - half))
            .sum()
    };

    let ratio = fs_in / target_hz;
    Ok((0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let y0 = filtered_at(i0.min(n - 1));
            if frac == 0.0 || i0 + 1 >= n {
                y0
            } else {
                y0 + frac * (filtered_at(i0 + 1) - y0)
            }
        })
        .collect())
}

/// Resamples a recording; condition times are kept in seconds and only
/// clipped where the shorter output no longer covers them.
pub fn resample(r: &Recording, target_hz: f64) -> Result<Recording, DspError> {
    let fs_in = r.fs_hz();
    let out = resample_samples(&r.samples_f64(), fs_in, target_hz)?;
    let num_samples = out.len() as u64;
    let duration = num_samples as f64 / target_hz;
    let conditions = r
        .manifest
        .conditions
        .iter()
        .filter(|c| c.start_s < duration)
        .map(|c| {
            let mut c = c.clone();
            c.end_s = c.end_s.min(duration);
            c
        })
        .collect();
    Ok(Recording {
        manifest: Manifest {
            sampling_rate_hz: target_hz,
            num_samples,
            conditions,
            ..r.manifest.clone()
        },
        samples: out.into_iter().map(|v| v as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Condition, ConditionInterval};

    /// Least-squares fit of `a sin(wt) + b cos(wt) + c`; returns (amplitude, phase).
    fn fit_sine(y: &[f64], f_hz: f64, fs: f64) -> (f64, f64) {
        let w = 2.0 * PI * f_hz / fs;
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, v) in y.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += v * s;
            yc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        ((a * a + b * b).sqrt(), b.atan2(a))
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn qrs_band() -> BandpassDesign {
        design_bandpass(8.0, 20.0, 256.0).unwrap()
    }

    #[test]
    fn bandpass_cutoffs() {
        let d = qrs_band();
        assert_eq!(d.sections.len(), 2);
        assert!(d.is_stable());
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        for f in [8.0, 20.0] {
            let m = d.magnitude(f);
            assert!((m - inv_sqrt2).abs() <= 0.02 * inv_sqrt2, "|H({f})| = {m}");
        }
        assert!(d.magnitude((8.0f64 * 20.0).sqrt()) >= 0.99);
        assert!(d.magnitude(50.0) < 0.1);
        assert!(d.magnitude(0.0) < 1e-12);
    }

    #[test]
    fn higher_order_designs_are_stable() {
        for order in 1..=6 {
            let d = design_butterworth_bandpass(order, 0.5, 40.0, 256.0).unwrap();
            assert!(d.is_stable(), "order {order}");
            let m = d.magnitude((0.5f64 * 40.0).sqrt());
            assert!((m - 1.0).abs() < 0.05, "order {order}: {m}");
        }
    }

    #[test]
    fn invalid_bands() {
        assert!(matches!(design_bandpass(20.0, 8.0, 256.0), Err(DspError::InvalidBand { .. })));
        assert!(matches!(design_bandpass(0.0, 8.0, 256.0), Err(DspError::InvalidBand { .. })));
        assert!(matches!(design_bandpass(8.0, 128.0, 256.0), Err(DspError::InvalidBand { .. })));
        assert!(matches!(design_bandpass(f64::NAN, 20.0, 256.0), Err(DspError::InvalidBand { .. })));
    }

    #[test]
    fn dc_is_removed() {
        let d = qrs_band();
        let x = vec![3.7; 4096];
        let y = filter_signal(&x, &d).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.iter().all(|v| v.abs() < 1e-9 * 3.7), "{:?}", y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn passband_sine_keeps_phase() {
        let d = qrs_band();
        let x = sine(12.0, 256.0, 256 * 20);
        let y = filter_signal(&x, &d).unwrap();
        let (amp, phase) = fit_sine(&y, 12.0, 256.0);
        assert!(amp >= 0.98, "amplitude {amp}");
        assert!(phase.abs() < 1e-3, "phase {phase}");
    }

    #[test]
    fn baseline_wander_attenuated() {
        let d = qrs_band();
        let x = sine(0.3, 256.0, 256 * 60);
        let y = filter_signal(&x, &d).unwrap();
        let (amp, _) = fit_sine(&y, 0.3, 256.0);
        assert!(amp < 0.02, "amplitude {amp}");
    }

    #[test]
    fn causal_mode_delays() {
        let d = qrs_band();
        let x = sine(12.0, 256.0, 256 * 20);
        let y = apply_filter(&x, &d, FilterMode::Causal).unwrap();
        let (_, phase) = fit_sine(&y[1024..], 12.0, 256.0);
        assert!(phase.abs() > 0.1);
    }

    #[test]
    fn empty_signal() {
        assert_eq!(filter_signal(&[], &qrs_band()), Err(DspError::EmptySignal));
        assert_eq!(filter_signal(&[1.0], &qrs_band()).unwrap().len(), 1);
    }

    #[test]
    fn filter_is_linear() {
        let d = qrs_band();
        let x: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        let z: Vec<f64> = (0..3000).map(|i| (i as f64 * 0.37).sin() * 20.0).collect();
        let (a, b) = (2.5, -0.75);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let fm = filter_signal(&mix, &d).unwrap();
        let fx = filter_signal(&x, &d).unwrap();
        let fz = filter_signal(&z, &d).unwrap();
        let scale = fm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..mix.len() {
            let expect = a * fx[i] + b * fz[i];
            assert!((fm[i] - expect).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zero_phase_cross_correlation_peaks_at_zero_lag() {
        let d = qrs_band();
        let fs = 256.0;
        let x: Vec<f64> = (0..4096)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 10.0 * t).sin() + 0.6 * (2.0 * PI * 14.3 * t + 0.4).sin() + 0.3 * (2.0 * PI * 17.1 * t).cos()
            })
            .collect();
        let y = filter_signal(&x, &d).unwrap();
        let xcorr = |lag: isize| -> f64 {
            (300..x.len() - 300)
                .map(|i| x[i] * y[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn resample_lengths() {
        assert_eq!(resample_samples(&vec![0.0; 2048], 2048.0, 256.0).unwrap().len(), 256);
        assert_eq!(resample_samples(&vec![0.0; 7000], 700.0, 256.0).unwrap().len(), 2560);
        assert_eq!(
            resample_samples(&[0.0; 10], 256.0, 512.0),
            Err(DspError::UpsampleRequested { from_hz: 256.0, to_hz: 512.0 })
        );
        for n in [1usize, 17, 999, 7001, 20480] {
            let out = resampled_len(n, 700.0, 256.0);
            assert!((out as f64 / 256.0 - n as f64 / 700.0).abs() < 1.0 / 256.0);
        }
    }

    #[test]
    fn resample_preserves_sine() {
        let (fs_in, fs_out) = (700.0, 256.0);
        let x = sine(5.0, fs_in, 7000);
        let y = resample_samples(&x, fs_in, fs_out).unwrap();
        let errs: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(k, v)| (v - (2.0 * PI * 5.0 * k as f64 / fs_out).sin()).abs())
            .collect();
        let err = errs.iter().cloned().fold(0.0f64, f64::max);
        assert!(err < 0.01, "max error {err}");
    }

    #[test]
    fn resample_recording_keeps_conditions() {
        let manifest = Manifest {
            subject_id: "S".into(),
            dataset_id: "swell".into(),
            sampling_rate_hz: 2048.0,
            num_samples: 2048 * 4,
            conditions: vec![ConditionInterval { label: Condition::Neutral, start_s: 0.5, end_s: 4.0 }],
        };
        let r = Recording::new(manifest, vec![0.0; 2048 * 4]).unwrap();
        let out = resample(&r, 256.0).unwrap();
        assert_eq!(out.manifest.num_samples, 1024);
        assert_eq!(out.samples.len(), 1024);
        assert_eq!(out.manifest.conditions, r.manifest.conditions);
        assert!(out.manifest.validate().is_ok());
    }
}
