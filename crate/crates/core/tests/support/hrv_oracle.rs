//! Direct-formula HRV reference used as an oracle. Recomputes every
//! feature from its textbook definition without calling into the library.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    let mut ss = 0.0;
    for x in v {
        ss += (x - m) * (x - m);
    }
    (ss / (v.len() - 1) as f64).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    // insertion sort, deliberately naive
    for i in 1..s.len() {
        let mut j = i;
        while j > 0 && s[j - 1] > s[j] {
            s.swap(j - 1, j);
            j -= 1;
        }
    }
    s
}

fn median(v: &[f64]) -> f64 {
    let s = sorted(v);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn quantile(v: &[f64], p: f64) -> f64 {
    let s = sorted(v);
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[lo] + (pos - lo as f64) * (s[lo + 1] - s[lo])
}

fn histogram(rr: &[f64], w: f64) -> (i64, Vec<usize>) {
    let keys: Vec<i64> = rr.iter().map(|x| (x / w).floor() as i64).collect();
    let lo = *keys.iter().min().unwrap();
    let hi = *keys.iter().max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for k in keys {
        counts[(k - lo) as usize] += 1;
    }
    (lo, counts)
}

fn tinn(rr: &[f64], w: f64) -> f64 {
    let (lo, counts) = histogram(rr, w);
    let nb = counts.len();
    let mut x = 0;
    for i in 0..nb {
        if counts[i] > counts[x] {
            x = i;
        }
    }
    let apex_t = (lo as f64 + x as f64 + 0.5) * w;
    let apex_h = counts[x] as f64;
    let mut best = f64::INFINITY;
    let mut best_width = 0.0;
    for n in 0..=x {
        for m in (x + 1)..=nb {
            let left = (lo + n as i64) as f64 * w;
            let right = (lo + m as i64) as f64 * w;
            let mut err = 0.0;
            for (i, &c) in counts.iter().enumerate() {
                let t = (lo as f64 + i as f64 + 0.5) * w;
                let q = if t <= left || t >= right {
                    0.0
                } else if t <= apex_t {
                    apex_h * (t - left) / (apex_t - left)
                } else {
                    apex_h * (right - t) / (right - apex_t)
                };
                err += (c as f64 - q).powi(2);
            }
            if best.is_infinite() || err < best - 1e-9 * best.max(1.0) {
                best = err;
                best_width = right - left;
            }
        }
    }
    best_width
}

/// Naive-DFT Hann periodogram of the 4 Hz linearly resampled series.
fn band_powers(times: &[f64], rr: &[f64], fs: f64) -> (f64, f64) {
    // rr[i] is attached to the peak that closes it.
    let t: Vec<f64> = times[1..].to_vec();
    let step = 1000.0 / fs;
    let count = ((t[t.len() - 1] - t[0]) / step).floor() as usize + 1;
    let mut grid = Vec::new();
    for k in 0..count {
        let g = t[0] + k as f64 * step;
        let mut seg = 0;
        while seg + 2 < t.len() && t[seg + 1] < g {
            seg += 1;
        }
        let frac = (g - t[seg]) / (t[seg + 1] - t[seg]);
        grid.push(rr[seg] + frac * (rr[seg + 1] - rr[seg]));
    }
    let m = mean(&grid);
    let l = grid.len();
    let mut wsum = 0.0;
    let mut xw = vec![0.0; l];
    for j in 0..l {
        let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / (l - 1) as f64).cos();
        wsum += w * w;
        xw[j] = (grid[j] - m) * w;
    }
    let mut freqs = Vec::new();
    let mut psd = Vec::new();
    for k in 0..=l / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in xw.iter().enumerate() {
            let ang = -2.0 * PI * ((j * k) % l) as f64 / l as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        let mut p = (re * re + im * im) / (fs * wsum);
        let nyquist = l % 2 == 0 && k == l / 2;
        if k != 0 && !nyquist {
            p *= 2.0;
        }
        freqs.push(k as f64 * fs / l as f64);
        psd.push(p);
    }
    let integrate = |a: f64, b: f64| {
        let mut s = 0.0;
        for k in 0..freqs.len() - 1 {
            let inside = |f: f64| f >= a && f <= b;
            if inside(freqs[k]) && inside(freqs[k + 1]) {
                s += 0.5 * (freqs[k + 1] - freqs[k]) * (psd[k] + psd[k + 1]);
            }
        }
        s
    };
    (integrate(0.04, 0.15), integrate(0.15, 0.4))
}

pub fn features(times: &[f64], window_s: f64, bin_ms: f64, interp_hz: f64) -> [f64; 22] {
    let rr: Vec<f64> = (1..times.len()).map(|i| times[i] - times[i - 1]).collect();
    let n = rr.len();
    let d: Vec<f64> = (1..n).map(|i| rr[i] - rr[i - 1]).collect();

    let hr = times.len() as f64 * 60.0 / window_s;
    let mean_nn = mean(&rr);
    let median_nn = median(&rr);
    let abs_dev: Vec<f64> = rr.iter().map(|x| (x - median_nn).abs()).collect();
    let mad_nn = 1.4826 * median(&abs_dev);
    let std_nn = sample_std(&rr);
    let cvnn = std_nn / mean_nn;
    let iqr_nn = quantile(&rr, 0.75) - quantile(&rr, 0.25);
    let mut sq = 0.0;
    for x in &d {
        sq += x * x;
    }
    let rmssd = (sq / d.len() as f64).sqrt();
    let std_sd = sample_std(&d);
    let over = |thr: f64| d.iter().filter(|x| x.abs() > thr).count() as f64;
    let pnn50 = 100.0 * over(50.0) / d.len() as f64;
    let pnn20 = 100.0 * over(20.0) / d.len() as f64;
    let (_, counts) = histogram(&rr, bin_ms);
    let hti = n as f64 / *counts.iter().max().unwrap() as f64;
    let tinn = tinn(&rr, bin_ms);

    let (lf, hf) = band_powers(times, &rr, interp_hz);
    let lf_hf = lf / hf;
    let lfn = lf / (lf + hf);
    let hfn = hf / (lf + hf);

    // Poincaré: SD1 from the spread of (rr[i+1] - rr[i]) / sqrt 2.
    let perp: Vec<f64> = (0..n - 1).map(|i| (rr[i + 1] - rr[i]) / 2f64.sqrt()).collect();
    let sd1 = sample_std(&perp);
    let sd2 = (2.0 * std_nn * std_nn - sd1 * sd1).max(0.0).sqrt();
    let s = PI * sd1 * sd2;

    [
        hr, mean_nn, median_nn, mad_nn, std_nn, cvnn, iqr_nn, rmssd, std_sd, pnn50, pnn20,
        tinn, hti, lf, hf, lf_hf, lfn, hfn, sd1, sd2, sd1 / sd2, s,
    ]
}

/// Random peak-time series of about one minute in one of four styles.
pub fn random_times(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.gen_range(450.0..1200.0);
    let style = rng.gen_range(0..4);
    let mut t = rng.gen_range(0.0..2000.0);
    let mut times = vec![t];
    let mut walk: f64 = 0.0;
    while t - times[0] < 58_000.0 {
        let rr = match style {
            0 => base + rng.gen_range(-40.0..40.0),
            1 => {
                walk += rng.gen_range(-15.0..15.0);
                walk = walk.clamp(-200.0, 200.0);
                base + walk
            }
            2 => base + 60.0 * (t / 1000.0 * 0.25 * std::f64::consts::TAU).sin() + rng.gen_range(-5.0..5.0),
            _ => {
                // Quantized to a 256 Hz sample grid, as detector output is.
                let r: f64 = base + rng.gen_range(-80.0..80.0);
                (r * 0.256).round() / 0.256
            }
        };
        t += rr;
        times.push(t);
    }
    times
}
