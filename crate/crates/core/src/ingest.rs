//! Canonical on-disk recording format and condition labelling.
//!
//! A recording lives in its own directory:
//!
//! ```text
//! <subject>/
//!   manifest.json   subject/dataset ids, sampling rate, sample count, condition intervals
//!   ecg.f32le       raw little-endian f32 samples, no header
//! ```
//!
//! Condition labels are stored as snake_case strings (`baseline`, `amusement`,
//! `tsst_stress`, `neutral`, `email_interruption`, `time_pressure`); any other
//! string is read back as [`Condition::Other`].

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SIGNAL_FILE: &str = "ecg.f32le";

pub const WESAD: &str = "wesad";
pub const SWELL: &str = "swell";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("{path}: manifest declares {expected} samples but the signal file holds {actual_bytes} bytes")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        actual_bytes: u64,
    },
    #[error("condition {condition} has no binary label in dataset {dataset}")]
    UnmappedCondition { condition: Condition, dataset: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Experimental condition of a labelled interval.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Condition {
    Baseline,
    Amusement,
    TsstStress,
    Neutral,
    EmailInterruption,
    TimePressure,
    Other(String),
}

impl Condition {
    pub fn as_str(&self) -> &str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Amusement => "amusement",
            Condition::TsstStress => "tsst_stress",
            Condition::Neutral => "neutral",
            Condition::EmailInterruption => "email_interruption",
            Condition::TimePressure => "time_pressure",
            Condition::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Condition {
        match s {
            "baseline" => Condition::Baseline,
            "amusement" => Condition::Amusement,
            "tsst_stress" => Condition::TsstStress,
            "neutral" => Condition::Neutral,
            "email_interruption" => Condition::EmailInterruption,
            "time_pressure" => Condition::TimePressure,
            other => Condition::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Condition::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionInterval {
    pub label: Condition,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subject_id: String,
    pub dataset_id: String,
    pub sampling_rate_hz: f64,
    pub num_samples: u64,
    pub conditions: Vec<ConditionInterval>,
}

impl Manifest {
    pub fn duration_s(&self) -> f64 {
        self.num_samples as f64 / self.sampling_rate_hz
    }

    /// Checks the structural invariants; returns a human-readable reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(format!(
                "sampling_rate_hz must be positive, got {}",
                self.sampling_rate_hz
            ));
        }
        if self.subject_id.is_empty() {
            return Err("subject_id is empty".into());
        }
        let duration = self.duration_s();
        for c in &self.conditions {
            if !(c.start_s.is_finite() && c.end_s.is_finite()) {
                return Err(format!("condition {} has non-finite bounds", c.label));
            }
            if c.start_s < 0.0 || c.start_s >= c.end_s {
                return Err(format!(
                    "condition {} has invalid bounds [{}, {})",
                    c.label, c.start_s, c.end_s
                ));
            }
            // Tolerate float noise from converters that compute end = n / fs.
            if c.end_s > duration + 1e-9 * duration.max(1.0) {
                return Err(format!(
                    "condition {} ends at {} s past the signal end at {} s",
                    c.label, c.end_s, duration
                ));
            }
        }
        let mut sorted: Vec<&ConditionInterval> = self.conditions.iter().collect();
        sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for pair in sorted.windows(2) {
            if pair[1].start_s < pair[0].end_s {
                return Err(format!(
                    "conditions {} and {} overlap",
                    pair[0].label, pair[1].label
                ));
            }
        }
        Ok(())
    }
}

/// Single-channel ECG recording of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub manifest: Manifest,
    pub samples: Vec<f32>,
}

impl Recording {
    pub fn new(manifest: Manifest, samples: Vec<f32>) -> Result<Self, String> {
        if manifest.num_samples != samples.len() as u64 {
            return Err(format!(
                "manifest declares {} samples, got {}",
                manifest.num_samples,
                samples.len()
            ));
        }
        manifest.validate()?;
        Ok(Recording { manifest, samples })
    }

    pub fn fs_hz(&self) -> f64 {
        self.manifest.sampling_rate_hz
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NoStress,
    Stress,
}

impl BinaryLabel {
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::NoStress => 0,
            BinaryLabel::Stress => 1,
        }
    }

    pub fn from_index(i: usize) -> BinaryLabel {
        if i == 0 {
            BinaryLabel::NoStress
        } else {
            BinaryLabel::Stress
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::NoStress => "no_stress",
            BinaryLabel::Stress => "stress",
        }
    }

    pub fn parse(s: &str) -> Option<BinaryLabel> {
        match s {
            "no_stress" => Some(BinaryLabel::NoStress),
            "stress" => Some(BinaryLabel::Stress),
            _ => None,
        }
    }

    /// 1.0 for stress, 0.0 otherwise.
    pub fn target(self) -> f64 {
        self.index() as f64
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary stress label of a condition.
///
/// `wesad` and `swell` accept only their own three conditions. Any other
/// dataset id (synthetic or user-defined data) accepts all six named
/// conditions with their natural labels.
pub fn map_condition(c: &Condition, dataset_id: &str) -> Result<BinaryLabel, IngestError> {
    use BinaryLabel::*;
    use Condition::*;
    let label = match (dataset_id, c) {
        (WESAD, Baseline | Amusement) => Some(NoStress),
        (WESAD, TsstStress) => Some(Stress),
        (SWELL, Neutral) => Some(NoStress),
        (SWELL, EmailInterruption | TimePressure) => Some(Stress),
        (WESAD | SWELL, _) => None,
        (_, Baseline | Amusement | Neutral) => Some(NoStress),
        (_, TsstStress | EmailInterruption | TimePressure) => Some(Stress),
        (_, Other(_)) => None,
    };
    label.ok_or_else(|| IngestError::UnmappedCondition {
        condition: c.clone(),
        dataset: dataset_id.to_string(),
    })
}

/// The resting condition whose first minutes supply normalization parameters.
pub fn is_baseline_condition(c: &Condition, dataset_id: &str) -> bool {
    match dataset_id {
        WESAD => *c == Condition::Baseline,
        SWELL => *c == Condition::Neutral,
        _ => matches!(c, Condition::Baseline | Condition::Neutral),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_recording(dir: impl AsRef<Path>) -> Result<Recording, IngestError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let signal_path = dir.join(SIGNAL_FILE);
    if !manifest_path.is_file() {
        return Err(IngestError::MissingFile(manifest_path));
    }
    if !signal_path.is_file() {
        return Err(IngestError::MissingFile(signal_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| IngestError::MalformedManifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
    manifest
        .validate()
        .map_err(|reason| IngestError::MalformedManifest {
            path: manifest_path.clone(),
            reason,
        })?;

    let bytes = fs::read(&signal_path).map_err(io_err(&signal_path))?;
    if bytes.len() % 4 != 0 || (bytes.len() / 4) as u64 != manifest.num_samples {
        return Err(IngestError::LengthMismatch {
            path: signal_path,
            expected: manifest.num_samples,
            actual_bytes: bytes.len() as u64,
        });
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Recording { manifest, samples })
}

/// Writes `r` in the canonical format, creating `dir` if needed.
pub fn write_recording(dir: impl AsRef<Path>, r: &Recording) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&r.manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    let signal_path = dir.join(SIGNAL_FILE);
    let file = fs::File::create(&signal_path).map_err(io_err(&signal_path))?;
    let mut w = BufWriter::new(file);
    for v in &r.samples {
        w.write_all(&v.to_le_bytes()).map_err(io_err(&signal_path))?;
    }
    w.flush().map_err(io_err(&signal_path))?;
    Ok(())
}

/// Loads every subject directory (one containing a manifest) under `root`,
/// sorted by directory name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Recording>, IngestError> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(load_recording).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(n: u64, fs: f64, conditions: Vec<ConditionInterval>) -> Manifest {
        Manifest {
            subject_id: "S2".into(),
            dataset_id: WESAD.into(),
            sampling_rate_hz: fs,
            num_samples: n,
            conditions,
        }
    }

    fn interval(label: Condition, start_s: f64, end_s: f64) -> ConditionInterval {
        ConditionInterval {
            label,
            start_s,
            end_s,
        }
    }

    #[test]
    fn loads_written_recording() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(7000, 700.0, vec![interval(Condition::Baseline, 0.0, 10.0)]);
        let samples: Vec<f32> = (0..7000).map(|i| (i as f32 * 0.01).sin()).collect();
        let r = Recording::new(m, samples).unwrap();
        write_recording(tmp.path(), &r).unwrap();
        let back = load_recording(tmp.path()).unwrap();
        assert_eq!(back.samples.len(), 7000);
        assert_eq!(back, r);
    }

    #[test]
    fn length_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(99, 10.0, vec![]);
        let r = Recording::new(m, vec![0.5; 99]).unwrap();
        write_recording(tmp.path(), &r).unwrap();
        let mut m2 = r.manifest.clone();
        m2.num_samples = 100;
        fs::write(
            tmp.path().join(MANIFEST_FILE),
            serde_json::to_string(&m2).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            load_recording(tmp.path()),
            Err(IngestError::LengthMismatch { expected: 100, .. })
        ));
    }

    #[test]
    fn overlapping_conditions_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(
            1000,
            10.0,
            vec![
                interval(Condition::Baseline, 0.0, 50.0),
                interval(Condition::TsstStress, 40.0, 90.0),
            ],
        );
        fs::write(tmp.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        fs::write(tmp.path().join(SIGNAL_FILE), vec![0u8; 4000]).unwrap();
        assert!(matches!(
            load_recording(tmp.path()),
            Err(IngestError::MalformedManifest { .. })
        ));
    }

    #[test]
    fn condition_past_end_rejected() {
        let m = manifest(100, 10.0, vec![interval(Condition::Baseline, 0.0, 10.5)]);
        assert!(m.validate().is_err());
        let m = manifest(100, 10.0, vec![interval(Condition::Baseline, 3.0, 3.0)]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn missing_files() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_recording(tmp.path()),
            Err(IngestError::MissingFile(_))
        ));
        let m = manifest(0, 10.0, vec![]);
        fs::write(tmp.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            load_recording(tmp.path()),
            Err(IngestError::MissingFile(p)) if p.ends_with(SIGNAL_FILE)
        ));
    }

    #[test]
    fn garbage_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join(MANIFEST_FILE), "{not json").unwrap();
        fs::write(tmp.path().join(SIGNAL_FILE), b"").unwrap();
        assert!(matches!(
            load_recording(tmp.path()),
            Err(IngestError::MalformedManifest { .. })
        ));
    }

    #[test]
    fn label_mapping() {
        use BinaryLabel::*;
        use Condition::*;
        let cases = [
            (Baseline, WESAD, NoStress),
            (Amusement, WESAD, NoStress),
            (TsstStress, WESAD, Stress),
            (Neutral, SWELL, NoStress),
            (EmailInterruption, SWELL, Stress),
            (TimePressure, SWELL, Stress),
        ];
        for (c, d, want) in cases {
            assert_eq!(map_condition(&c, d).unwrap(), want, "{c} in {d}");
        }
        assert!(map_condition(&Other("meditation".into()), WESAD).is_err());
        assert!(map_condition(&Neutral, WESAD).is_err());
        assert!(map_condition(&TsstStress, SWELL).is_err());
        assert_eq!(map_condition(&Neutral, "synth-b").unwrap(), NoStress);
        assert!(map_condition(&Other("x".into()), "synth-b").is_err());
    }

    #[test]
    fn condition_strings() {
        let json = r#"{"label":"meditation","start_s":0.0,"end_s":1.0}"#;
        let c: ConditionInterval = serde_json::from_str(json).unwrap();
        assert_eq!(c.label, Condition::Other("meditation".into()));
        let c: ConditionInterval =
            serde_json::from_str(r#"{"label":"tsst_stress","start_s":0.0,"end_s":1.0}"#).unwrap();
        assert_eq!(c.label, Condition::TsstStress);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn canonical_round_trip(
            bits in proptest::collection::vec(any::<u32>(), 0..400),
            fs in 1.0f64..4096.0,
        ) {
            // Arbitrary bit patterns, NaN payloads included, must survive.
            let samples: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let n = samples.len() as u64;
            let end = n as f64 / fs;
            let conditions = if n > 0 {
                vec![interval(Condition::Neutral, 0.0, end / 2.0), interval(Condition::Other("q".into()), end / 2.0, end)]
            } else {
                vec![]
            };
            let m = manifest(n, fs, conditions);
            let r = Recording { manifest: m, samples };
            let tmp = tempfile::tempdir().unwrap();
            write_recording(tmp.path(), &r).unwrap();
            let back = load_recording(tmp.path()).unwrap();
            prop_assert_eq!(&back.manifest, &r.manifest);
            let a: Vec<u32> = back.samples.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, bits);
        }
    }
}
