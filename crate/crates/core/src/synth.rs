//! Synthetic ECG with exact ground truth.
//!
//! Beat-to-beat intervals follow a mean RR modulated by two sinusoids (a
//! slow ~0.1 Hz and a respiratory ~0.25 Hz component) plus Gaussian jitter.
//! Each beat is drawn as Gaussian P, R and T waves; baseline wander,
//! powerline hum and white noise are added before a sensor gain and offset.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, Condition, ConditionInterval, IngestError, Manifest, Recording};
use crate::qrs::RrSeries;
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Io(#[from] IngestError),
}

/// Quiet lead-in of generated recordings so no beat is cut by the signal edge.
const LEAD_IN_MS: f64 = 300.0;

/// Floor on generated intervals; keeps extreme jitter draws physiological.
const MIN_RR_MS: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    /// Relative depth of the sinusoidal RR modulation.
    pub depth: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub white_sigma: f64,
    pub wander_amp: f64,
    pub wander_hz: f64,
    pub powerline_amp: f64,
    pub powerline_hz: f64,
}

impl NoiseProfile {
    pub const NONE: NoiseProfile = NoiseProfile {
        white_sigma: 0.0,
        wander_amp: 0.0,
        wander_hz: 0.3,
        powerline_amp: 0.0,
        powerline_hz: 50.0,
    };

    pub fn scaled(&self, k: f64) -> NoiseProfile {
        NoiseProfile {
            white_sigma: self.white_sigma * k,
            wander_amp: self.wander_amp * k,
            powerline_amp: self.powerline_amp * k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub mean_rr_ms: f64,
    /// Overall RR standard deviation; the jitter makes up whatever the two
    /// modulations do not already contribute.
    pub sdnn_target_ms: f64,
    pub lf: Modulation,
    pub hf: Modulation,
    pub noise: NoiseProfile,
    pub gain: f64,
    pub offset: f64,
    pub seed: u64,
}

impl SubjectProfile {
    /// Noise-free unit-gain profile with a steady rhythm.
    pub fn steady(mean_rr_ms: f64, seed: u64) -> Self {
        SubjectProfile {
            mean_rr_ms,
            sdnn_target_ms: 0.0,
            lf: Modulation { depth: 0.0, freq_hz: 0.1 },
            hf: Modulation { depth: 0.0, freq_hz: 0.25 },
            noise: NoiseProfile::NONE,
            gain: 1.0,
            offset: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidProfile(m.into()));
        let fields = [
            self.mean_rr_ms,
            self.sdnn_target_ms,
            self.lf.depth,
            self.lf.freq_hz,
            self.hf.depth,
            self.hf.freq_hz,
            self.noise.white_sigma,
            self.noise.wander_amp,
            self.noise.powerline_amp,
            self.gain,
            self.offset,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.mean_rr_ms <= 300.0 {
            return bad("mean_rr_ms must exceed 300");
        }
        if self.lf.depth < 0.0 || self.hf.depth < 0.0 || self.sdnn_target_ms < 0.0 {
            return bad("depths and sdnn must be non-negative");
        }
        if self.noise.white_sigma < 0.0 || self.noise.wander_amp < 0.0 || self.noise.powerline_amp < 0.0 {
            return bad("noise amplitudes must be non-negative");
        }
        if self.gain == 0.0 {
            return bad("gain must be non-zero");
        }
        Ok(())
    }

    fn jitter_sigma(&self) -> f64 {
        let modulated = self.mean_rr_ms.powi(2) * (self.lf.depth.powi(2) + self.hf.depth.powi(2)) / 2.0;
        (self.sdnn_target_ms.powi(2) - modulated).max(0.0).sqrt()
    }

    fn next_rr(&self, t_ms: f64, rng: &mut ChaCha8Rng) -> f64 {
        let t = t_ms / 1000.0;
        let modulation = 1.0
            + self.lf.depth * (2.0 * PI * self.lf.freq_hz * t).sin()
            + self.hf.depth * (2.0 * PI * self.hf.freq_hz * t).sin();
        let sigma = self.jitter_sigma();
        let jitter = if sigma > 0.0 {
            Normal::new(0.0, sigma).unwrap().sample(rng)
        } else {
            0.0
        };
        (self.mean_rr_ms * modulation + jitter).max(MIN_RR_MS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub peak_times_ms: Vec<f64>,
    pub peak_indices: Vec<usize>,
    pub rr_ms: Vec<f64>,
    pub segments: Vec<ConditionInterval>,
}

/// Beat train starting at t = 0, extended while the next beat stays within `duration_s`.
pub fn gen_rr(profile: &SubjectProfile, duration_s: f64) -> Result<RrSeries, SynthError> {
    profile.validate()?;
    if !(duration_s > 0.0) {
        return Err(SynthError::InvalidProfile("duration must be positive".into()));
    }
    let mut rng = seed::rng(profile.seed, &["rr"]);
    let times = beat_times(0.0, duration_s * 1000.0, |_| profile, &mut rng);
    RrSeries::from_peak_times(times)
        .map_err(|_| SynthError::InvalidProfile("duration shorter than one beat".into()))
}

fn beat_times<'a>(
    start_ms: f64,
    end_ms: f64,
    profile_at: impl Fn(f64) -> &'a SubjectProfile,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut t = start_ms;
    let mut times = vec![t];
    loop {
        let rr = profile_at(t).next_rr(t, rng);
        if t + rr > end_ms {
            break;
        }
        t += rr;
        times.push(t);
    }
    times
}

/// Clean waveform and additive noise, both before sensor gain and offset.
#[derive(Debug, Clone)]
pub struct EcgComponents {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
}

impl EcgComponents {
    /// Ratio of mean-removed clean power to noise power.
    pub fn snr_db(&self) -> f64 {
        let power = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
        };
        10.0 * (power(&self.clean) / power(&self.noise)).log10()
    }
}

struct Wave {
    offset_ms: f64,
    amp: f64,
    sigma_ms: f64,
}

const BEAT_WAVES: [Wave; 3] = [
    Wave { offset_ms: -160.0, amp: 0.15, sigma_ms: 25.0 },
    // QRS: FWHM about 20 ms.
    Wave { offset_ms: 0.0, amp: 1.0, sigma_ms: 8.5 },
    Wave { offset_ms: 250.0, amp: 0.3, sigma_ms: 40.0 },
];

pub fn render_components(
    peak_times_ms: &[f64],
    fs_hz: f64,
    n_samples: usize,
    noise: &NoiseProfile,
    rng: &mut ChaCha8Rng,
) -> EcgComponents {
    let mut clean = vec![0.0; n_samples];
    for &t in peak_times_ms {
        for w in &BEAT_WAVES {
            let center = (t + w.offset_ms) * fs_hz / 1000.0;
            let sigma = w.sigma_ms * fs_hz / 1000.0;
            let lo = (center - 5.0 * sigma).floor().max(0.0) as usize;
            let hi = ((center + 5.0 * sigma).ceil().max(0.0) as usize).min(n_samples);
            for (i, v) in clean.iter_mut().enumerate().take(hi).skip(lo) {
                let z = (i as f64 - center) / sigma;
                *v += w.amp * (-0.5 * z * z).exp();
            }
        }
    }

    let wander_phase = rng.gen_range(0.0..2.0 * PI);
    let line_phase = rng.gen_range(0.0..2.0 * PI);
    let white = Normal::new(0.0, noise.white_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let noise: Vec<f64> = (0..n_samples)
        .map(|i| {
            let t = i as f64 / fs_hz;
            let mut v = noise.wander_amp * (2.0 * PI * noise.wander_hz * t + wander_phase).sin()
                + noise.powerline_amp * (2.0 * PI * noise.powerline_hz * t + line_phase).sin();
            if noise.white_sigma > 0.0 {
                v += white.sample(rng);
            }
            v
        })
        .collect();
    EcgComponents { clean, noise }
}

fn compose(c: &EcgComponents, gain: f64, offset: f64) -> Vec<f64> {
    c.clean
        .iter()
        .zip(&c.noise)
        .map(|(s, n)| gain * (s + n) + offset)
        .collect()
}

fn peak_indices(peak_times_ms: &[f64], fs_hz: f64, n_samples: usize) -> Vec<usize> {
    peak_times_ms
        .iter()
        .map(|t| (t * fs_hz / 1000.0).round() as usize)
        .filter(|&i| i < n_samples)
        .collect()
}

/// The signal spans up to one further interval past the last peak.
pub fn gen_ecg_components(
    rr: &RrSeries,
    fs_hz: f64,
    profile: &SubjectProfile,
) -> Result<(EcgComponents, GroundTruth), SynthError> {
    profile.validate()?;
    if !(fs_hz >= 128.0) {
        return Err(SynthError::InvalidProfile(format!("fs_hz must be at least 128, got {fs_hz}")));
    }
    let times = rr.peak_times_ms();
    let total_ms = times[times.len() - 1] + rr.rr_ms()[rr.len() - 1];
    let n = (total_ms / 1000.0 * fs_hz).round() as usize;
    let mut rng = seed::rng(profile.seed, &["ecg"]);
    let components = render_components(times, fs_hz, n, &profile.noise, &mut rng);
    let truth = GroundTruth {
        peak_times_ms: times.to_vec(),
        peak_indices: peak_indices(times, fs_hz, n),
        rr_ms: rr.rr_ms().to_vec(),
        segments: Vec::new(),
    };
    Ok((components, truth))
}

pub fn gen_ecg(
    rr: &RrSeries,
    fs_hz: f64,
    profile: &SubjectProfile,
) -> Result<(Vec<f64>, GroundTruth), SynthError> {
    let (c, truth) = gen_ecg_components(rr, fs_hz, profile)?;
    Ok((compose(&c, profile.gain, profile.offset), truth))
}

/// Heart rhythm parameters of one class before per-subject variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub mean_rr_ms: f64,
    pub sdnn_ms: f64,
    pub lf_depth: f64,
    pub hf_depth: f64,
}

impl ClassProfile {
    pub const NO_STRESS: ClassProfile = ClassProfile {
        mean_rr_ms: 900.0,
        sdnn_ms: 50.0,
        lf_depth: 0.03,
        hf_depth: 0.04,
    };
    pub const STRESS: ClassProfile = ClassProfile {
        mean_rr_ms: 680.0,
        sdnn_ms: 25.0,
        lf_depth: 0.03,
        hf_depth: 0.012,
    };
}

/// Recording device characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub gain: f64,
    pub offset: f64,
    pub noise: NoiseProfile,
}

impl SensorProfile {
    /// Unit-scale chest strap.
    pub const A: SensorProfile = SensorProfile {
        gain: 1.0,
        offset: 0.0,
        noise: NoiseProfile {
            white_sigma: 0.02,
            wander_amp: 0.3,
            wander_hz: 0.3,
            powerline_amp: 0.05,
            powerline_hz: 50.0,
        },
    };
    /// Raw-count amplifier with a DC offset and a noisier mix.
    pub const B: SensorProfile = SensorProfile {
        gain: 850.0,
        offset: 2048.0,
        noise: NoiseProfile {
            white_sigma: 0.04,
            wander_amp: 0.6,
            wander_hz: 0.22,
            powerline_amp: 0.1,
            powerline_hz: 50.0,
        },
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub dataset_id: String,
    pub n_subjects: usize,
    pub fs_hz: f64,
    pub seed: u64,
    pub sensor: SensorProfile,
    /// Consecutive conditions and their durations in seconds.
    pub layout: Vec<(Condition, f64)>,
    pub no_stress: ClassProfile,
    pub stress: ClassProfile,
}

impl DatasetSpec {
    /// Baseline / stress / amusement sessions on sensor A.
    pub fn sensor_a(dataset_id: &str, n_subjects: usize, seed: u64) -> Self {
        DatasetSpec {
            dataset_id: dataset_id.into(),
            n_subjects,
            fs_hz: 256.0,
            seed,
            sensor: SensorProfile::A,
            layout: vec![
                (Condition::Baseline, 420.0),
                (Condition::TsstStress, 300.0),
                (Condition::Amusement, 240.0),
            ],
            no_stress: ClassProfile::NO_STRESS,
            stress: ClassProfile::STRESS,
        }
    }

    /// Office-task sessions (neutral, e-mail interruptions, time pressure) on sensor B.
    pub fn sensor_b(dataset_id: &str, n_subjects: usize, seed: u64) -> Self {
        DatasetSpec {
            dataset_id: dataset_id.into(),
            n_subjects,
            fs_hz: 256.0,
            seed,
            sensor: SensorProfile::B,
            layout: vec![
                (Condition::Neutral, 420.0),
                (Condition::EmailInterruption, 300.0),
                (Condition::Neutral, 240.0),
                (Condition::TimePressure, 240.0),
            ],
            no_stress: ClassProfile::NO_STRESS,
            stress: ClassProfile::STRESS,
        }
    }

    pub fn subject_id(&self, i: usize) -> String {
        format!("S{:02}", i + 1)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_subjects < 2 {
            return Err(SynthError::InvalidProfile("need at least 2 subjects".into()));
        }
        if self.layout.is_empty() || self.layout.iter().any(|(_, d)| !(*d > 0.0)) {
            return Err(SynthError::InvalidProfile("layout needs positive durations".into()));
        }
        for (c, _) in &self.layout {
            ingest::map_condition(c, &self.dataset_id)
                .map_err(|e| SynthError::InvalidProfile(e.to_string()))?;
        }
        Ok(())
    }
}

/// One subject of a synthetic dataset together with its ground truth.
pub fn gen_subject(spec: &DatasetSpec, index: usize) -> Result<(Recording, GroundTruth), SynthError> {
    spec.validate()?;
    let subject_id = spec.subject_id(index);
    let mut rng = seed::rng(spec.seed, &["subject", &spec.dataset_id, &subject_id]);
    // Individual differences the user-specific normalization has to absorb.
    let rate_factor = rng.gen_range(0.88..1.12);
    let var_factor = rng.gen_range(0.8..1.25);
    let lf_hz = rng.gen_range(0.08..0.12);
    let hf_hz = rng.gen_range(0.2..0.33);

    let profile_for = |class: &ClassProfile| SubjectProfile {
        mean_rr_ms: class.mean_rr_ms * rate_factor,
        sdnn_target_ms: class.sdnn_ms * var_factor,
        lf: Modulation { depth: class.lf_depth * var_factor, freq_hz: lf_hz },
        hf: Modulation { depth: class.hf_depth * var_factor, freq_hz: hf_hz },
        noise: spec.sensor.noise,
        gain: spec.sensor.gain,
        offset: spec.sensor.offset,
        seed: 0,
    };

    let mut segments = Vec::with_capacity(spec.layout.len());
    let mut profiles = Vec::with_capacity(spec.layout.len());
    let mut start = 0.0;
    for (c, d) in &spec.layout {
        segments.push(ConditionInterval { label: c.clone(), start_s: start, end_s: start + d });
        let class = match ingest::map_condition(c, &spec.dataset_id).expect("validated") {
            ingest::BinaryLabel::NoStress => &spec.no_stress,
            ingest::BinaryLabel::Stress => &spec.stress,
        };
        profiles.push(profile_for(class));
        start += d;
    }
    for p in &profiles {
        p.validate()?;
    }
    let total_s = start;
    let n = (total_s * spec.fs_hz).round() as usize;

    let profile_at = |t_ms: f64| {
        let t = t_ms / 1000.0;
        let k = segments.iter().position(|s| t < s.end_s).unwrap_or(segments.len() - 1);
        &profiles[k]
    };
    let first_beat_ms = LEAD_IN_MS + rng.gen_range(0.0..profiles[0].mean_rr_ms);
    let times = beat_times(first_beat_ms, total_s * 1000.0, profile_at, &mut rng);
    let components = render_components(&times, spec.fs_hz, n, &spec.sensor.noise, &mut rng);
    let samples = compose(&components, spec.sensor.gain, spec.sensor.offset);

    let manifest = Manifest {
        subject_id,
        dataset_id: spec.dataset_id.clone(),
        sampling_rate_hz: spec.fs_hz,
        num_samples: n as u64,
        conditions: segments.clone(),
    };
    let recording = Recording::new(manifest, samples.into_iter().map(|v| v as f32).collect())
        .map_err(SynthError::InvalidProfile)?;
    let rr_ms = times.windows(2).map(|w| w[1] - w[0]).collect();
    let truth = GroundTruth {
        peak_indices: peak_indices(&times, spec.fs_hz, n),
        peak_times_ms: times,
        rr_ms,
        segments,
    };
    Ok((recording, truth))
}

pub fn gen_dataset_recordings(spec: &DatasetSpec) -> Result<Vec<(Recording, GroundTruth)>, SynthError> {
    (0..spec.n_subjects).map(|i| gen_subject(spec, i)).collect()
}

/// Writes every subject of `spec` as a canonical directory under `out_dir`.
pub fn gen_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<Vec<Recording>, SynthError> {
    let out_dir = out_dir.as_ref();
    let mut out = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let (r, _) = gen_subject(spec, i)?;
        ingest::write_recording(out_dir.join(&r.manifest.subject_id), &r)?;
        out.push(r);
    }
    Ok(out)
}
