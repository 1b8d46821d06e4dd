use hrv_stress::dsp::{design_bandpass, filter_signal};
use hrv_stress::hrv::{frequency_domain, time_domain, HrvConfig};
use hrv_stress::ingest::{map_condition, BinaryLabel};
use hrv_stress::qrs::{detect_r_peaks, RrSeries};
use hrv_stress::synth::*;

fn detect(x: &[f64], fs: f64) -> Vec<usize> {
    let d = design_bandpass(8.0, 20.0, fs).unwrap();
    detect_r_peaks(&filter_signal(x, &d).unwrap(), fs).unwrap().indices
}

/// Matches each truth peak to at most one detection within `tol` samples.
fn match_counts(truth: &[usize], found: &[usize], tol: usize) -> usize {
    let mut j = 0;
    let mut hits = 0;
    for &t in truth {
        while j < found.len() && found[j] + tol < t {
            j += 1;
        }
        if j < found.len() && found[j] <= t + tol {
            hits += 1;
            j += 1;
        }
    }
    hits
}

#[test]
fn clean_signal_peaks_within_two_samples() {
    let mut p = SubjectProfile::steady(820.0, 4);
    p.sdnn_target_ms = 40.0;
    p.hf.depth = 0.04;
    let rr = gen_rr(&p, 120.0).unwrap().shifted(400.0).unwrap();
    let (x, truth) = gen_ecg(&rr, 256.0, &p).unwrap();
    let found = detect(&x, 256.0);
    assert_eq!(found.len(), truth.peak_indices.len());
    for (f, t) in found.iter().zip(&truth.peak_indices) {
        assert!(f.abs_diff(*t) <= 2, "{f} vs {t}");
    }
}

#[test]
fn gain_does_not_move_peaks() {
    let mut p = SubjectProfile::steady(700.0, 8);
    p.sdnn_target_ms = 30.0;
    p.noise = SensorProfile::A.noise;
    let rr = gen_rr(&p, 60.0).unwrap();
    let (a, _) = gen_ecg(&rr, 256.0, &p).unwrap();
    p.gain = 2.0;
    let (b, _) = gen_ecg(&rr, 256.0, &p).unwrap();
    assert_eq!(detect(&a, 256.0), detect(&b, 256.0));
}

#[test]
fn one_beat_per_second() {
    let p = SubjectProfile { noise: SensorProfile::A.noise, ..SubjectProfile::steady(1000.0, 2) };
    let rr = gen_rr(&p, 60.0).unwrap().shifted(500.0).unwrap();
    let (x, truth) = gen_ecg(&rr, 256.0, &p).unwrap();
    let found = detect(&x, 256.0);
    assert!((60..=62).contains(&found.len()), "{}", found.len());
    let times: Vec<f64> = found.iter().map(|&i| i as f64 * 1000.0 / 256.0).collect();
    for t in &truth.peak_times_ms {
        let nearest = times.iter().map(|s| (s - t).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest <= 10.0);
    }
}

#[test]
fn heavy_wander_still_detected() {
    let mut p = SubjectProfile::steady(750.0, 21);
    p.sdnn_target_ms = 45.0;
    p.noise = SensorProfile::A.noise;
    p.noise.wander_amp *= 5.0;
    let rr = gen_rr(&p, 300.0).unwrap().shifted(300.0).unwrap();
    let (x, truth) = gen_ecg(&rr, 256.0, &p).unwrap();
    let found = detect(&x, 256.0);
    let hits = match_counts(&truth.peak_indices, &found, 3) as f64;
    assert!(hits / truth.peak_indices.len() as f64 >= 0.99);
    assert!(hits / found.len() as f64 >= 0.99);
}

#[test]
fn respiratory_modulation_lands_in_hf() {
    let mut p = SubjectProfile::steady(850.0, 6);
    p.hf = Modulation { depth: 0.05, freq_hz: 0.25 };
    p.sdnn_target_ms = 0.05 * 850.0 / 2f64.sqrt();
    let rr = gen_rr(&p, 120.0).unwrap();
    let f = frequency_domain(&rr, &HrvConfig::default()).unwrap();
    assert!(f.hfn >= 0.9, "HFn {}", f.hfn);
}

#[test]
fn stress_windows_have_lower_rmssd() {
    let spec = DatasetSpec::sensor_a("wesad", 12, 77);
    let cfg = HrvConfig::default();
    let (mut lower, mut total) = (0, 0);
    for (rec, truth) in gen_dataset_recordings(&spec).unwrap() {
        let rmssd_in = |label: BinaryLabel| -> Vec<f64> {
            let mut out = Vec::new();
            for seg in &rec.manifest.conditions {
                if map_condition(&seg.label, &spec.dataset_id).unwrap() != label {
                    continue;
                }
                let mut w = seg.start_s;
                while w + 60.0 <= seg.end_s {
                    let t: Vec<f64> = truth
                        .peak_times_ms
                        .iter()
                        .copied()
                        .filter(|&t| t >= w * 1000.0 && t < (w + 60.0) * 1000.0)
                        .collect();
                    let rr = RrSeries::from_peak_times(t).unwrap();
                    out.push(time_domain(&rr, 60.0, &cfg).unwrap().rmssd);
                    w += 60.0;
                }
            }
            out
        };
        let calm = rmssd_in(BinaryLabel::NoStress);
        let stress = rmssd_in(BinaryLabel::Stress);
        for (c, s) in calm.iter().zip(&stress) {
            total += 1;
            if s < c {
                lower += 1;
            }
        }
    }
    assert!(lower as f64 >= 0.9 * total as f64, "{lower}/{total}");
}

#[test]
fn dataset_written_and_reloaded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::sensor_a("wesad", 12, 1);
    let mut small = spec.clone();
    small.layout = vec![
        (hrv_stress::ingest::Condition::Baseline, 30.0),
        (hrv_stress::ingest::Condition::TsstStress, 30.0),
    ];
    let written = gen_dataset(&small, dir.path()).unwrap();
    let loaded = hrv_stress::ingest::load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 12);
    assert_eq!(loaded, written);
    let other = DatasetSpec { seed: 2, ..small };
    let (b, _) = gen_subject(&other, 0).unwrap();
    assert_ne!(b.samples, written[0].samples);
    assert_eq!(b.manifest, written[0].manifest);
}
