//! Reference implementations that share no code with the library.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use vocalid::eval::{ConfusionMatrix2x2, ScoredTrial};

/// Direct O(N^2) DFT of every Hamming-windowed, zero-padded frame, one-sided,
/// row-major `[frames x (n_fft/2+1)]` as `(re, im)`.
pub fn naive_stft(x: &[f64], n_fft: usize, win: usize, hop: usize) -> Vec<(f64, f64)> {
    let w: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
        .collect();
    let twiddle: Vec<(f64, f64)> = (0..n_fft)
        .map(|m| {
            let a = -2.0 * PI * m as f64 / n_fft as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let n_frames = (x.len() - win) / hop + 1;
    let mut out = Vec::with_capacity(n_frames * (n_fft / 2 + 1));
    for t in 0..n_frames {
        let frame: Vec<f64> = (0..win).map(|n| x[t * hop + n] * w[n]).collect();
        for k in 0..=n_fft / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in frame.iter().enumerate() {
                let (c, s) = twiddle[(k * n) % n_fft];
                re += v * c;
                im += v * s;
            }
            out.push((re, im));
        }
    }
    out
}

/// `(2 * wins + ties) / (2 * P * N)` over all target/nontarget pairs.
pub fn pair_count_auc(trials: &[ScoredTrial]) -> f64 {
    let pos: Vec<f64> = trials.iter().filter(|t| t.target).map(|t| t.score).collect();
    let neg: Vec<f64> = trials.iter().filter(|t| !t.target).map(|t| t.score).collect();
    let mut twice: u128 = 0;
    for &p in &pos {
        for &n in &neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64
}

/// EER from a sweep of `steps + 1` evenly spaced thresholds spanning the
/// scores, linearly interpolating FPR and FNR between the two grid points
/// where their difference changes sign. Exact when no two distinct scores
/// fall between adjacent grid points.
pub fn grid_eer(trials: &[ScoredTrial], steps: usize) -> f64 {
    let mut pos: Vec<f64> = trials.iter().filter(|t| t.target).map(|t| t.score).collect();
    let mut neg: Vec<f64> = trials.iter().filter(|t| !t.target).map(|t| t.score).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let lo = pos[0].min(neg[0]);
    let hi = pos[pos.len() - 1].max(neg[neg.len() - 1]);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    // Thresholds ascend from above the maximum down to the minimum, so walk
    // them from the top: accept iff score >= threshold.
    let (mut ip, mut ineg) = (pos.len(), neg.len());
    let rates = |ip: usize, ineg: usize| ((neg.len() - ineg) as f64 / nn, ip as f64 / np);
    let (mut prev_fpr, mut prev_fnr) = (0.0, 1.0);
    for j in 0..=steps + 1 {
        let thr = if j == 0 { f64::INFINITY } else { hi - (hi - lo) * (j - 1) as f64 / steps as f64 };
        while ip > 0 && pos[ip - 1] >= thr {
            ip -= 1;
        }
        while ineg > 0 && neg[ineg - 1] >= thr {
            ineg -= 1;
        }
        let (fpr, fnr) = rates(ip, ineg);
        if fpr - fnr >= 0.0 {
            if fpr == fnr {
                return fpr;
            }
            let (ga, gb) = (prev_fpr - prev_fnr, fpr - fnr);
            let t = -ga / (gb - ga);
            return prev_fpr + t * (fpr - prev_fpr);
        }
        (prev_fpr, prev_fnr) = (fpr, fnr);
    }
    unreachable!("the lowest threshold accepts everything")
}

/// Confusion counts by direct enumeration.
pub fn enumerate_confusion(trials: &[ScoredTrial], threshold: f64) -> ConfusionMatrix2x2 {
    let count = |pred: bool, truth: bool| {
        trials.iter().filter(|t| (t.score >= threshold) == pred && t.target == truth).count() as u64
    };
    ConfusionMatrix2x2 { tp: count(true, true), fp: count(true, false), tn: count(false, false), fn_: count(false, true) }
}

const PROFILE_BANDS: usize = 48;

/// Long-term spectral profile: mean power in log-spaced bands from 600 Hz to
/// 6 kHz, above the accompaniment register, over the louder half of the
/// frames, in dB, mean-removed.
pub fn spectral_profile(x: &[f64], sample_rate: f64) -> Vec<f64> {
    let n = 1024;
    let hop = 512;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let edges: Vec<f64> = (0..=PROFILE_BANDS)
        .map(|b| 600.0 * (6000.0f64 / 600.0).powf(b as f64 / PROFILE_BANDS as f64))
        .collect();
    let mut frames: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= x.len() {
        for (i, slot) in buf.iter_mut().enumerate() {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            *slot = Complex64::new(x[start + i] * w, 0.0);
        }
        fft.process(&mut buf);
        let mut bands = vec![0.0; PROFILE_BANDS];
        let mut energy = 0.0;
        for (k, c) in buf.iter().enumerate().take(n / 2) {
            let f = k as f64 * sample_rate / n as f64;
            energy += c.norm_sqr();
            if let Some(b) = edges.windows(2).position(|e| f >= e[0] && f < e[1]) {
                bands[b] += c.norm_sqr();
            }
        }
        frames.push((energy, bands));
        start += hop;
    }
    frames.sort_by(|a, b| b.0.total_cmp(&a.0));
    let keep = &frames[..frames.len().div_ceil(2)];
    let mut profile: Vec<f64> = (0..PROFILE_BANDS)
        .map(|b| 10.0 * (keep.iter().map(|f| f.1[b]).sum::<f64>() / keep.len() as f64 + 1e-12).log10())
        .collect();
    let mean = profile.iter().sum::<f64>() / PROFILE_BANDS as f64;
    profile.iter_mut().for_each(|v| *v -= mean);
    profile
}

/// Label of the nearest class centroid by Euclidean distance.
pub fn nearest_centroid(centroids: &[(String, Vec<f64>)], x: &[f64]) -> String {
    let d = |c: &[f64]| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    centroids
        .iter()
        .min_by(|a, b| d(&a.1).total_cmp(&d(&b.1)))
        .map(|c| c.0.clone())
        .expect("at least one centroid")
}
