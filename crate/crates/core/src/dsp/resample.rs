//! Band-limited polyphase resampling with a Kaiser-windowed sinc kernel.

use super::AudioClip;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 12.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resample `clip` to `target_hz`. A same-rate call returns an identical clip.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if target_hz == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if clip.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if clip.sample_rate_hz == target_hz {
        return Ok(clip.clone());
    }
    Ok(AudioClip {
        samples: resample_ratio(&clip.samples, clip.sample_rate_hz, target_hz),
        sample_rate_hz: target_hz,
        source_id: clip.source_id.clone(),
    })
}

/// Resample raw samples from `from_hz` to `to_hz`.
///
/// Output length is `round(len * to / from)`. Each polyphase branch is
/// normalised to unit DC gain.
pub fn resample_ratio(samples: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    assert!(from_hz > 0 && to_hz > 0, "sample rates must be positive");
    if from_hz == to_hz {
        return samples.to_vec();
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let up = to_hz as u64 / g; // phases
    let down = from_hz as u64 / g;
    let cutoff = (to_hz as f64 / from_hz as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let reach = half_width.ceil() as i64;
    let taps = (2 * reach) as usize;
    let i0_beta = bessel_i0(KAISER_BETA);

    // bank[phase][t] weights x[i + t - reach + 1] for output position i + phase/up
    let mut bank = vec![0.0f64; up as usize * taps];
    for phase in 0..up as usize {
        let frac = phase as f64 / up as f64;
        let row = &mut bank[phase * taps..(phase + 1) * taps];
        for (t, w) in row.iter_mut().enumerate() {
            let j = t as i64 - reach + 1;
            let d = frac - j as f64;
            let r = d / half_width;
            if r.abs() < 1.0 {
                let kaiser = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                *w = cutoff * sinc(cutoff * d) * kaiser;
            }
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= sum);
    }

    let n_in = samples.len() as u128;
    let n_out = ((n_in * to_hz as u128 + from_hz as u128 / 2) / from_hz as u128) as usize;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out as u64 {
        let pos = m * down;
        let base = (pos / up) as i64;
        let phase = (pos % up) as usize;
        let row = &bank[phase * taps..(phase + 1) * taps];
        let first = base - reach + 1;
        let mut acc = 0.0;
        for (t, &w) in row.iter().enumerate() {
            let idx = first + t as i64;
            if idx >= 0 && (idx as usize) < samples.len() {
                acc += w * samples[idx as usize];
            }
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dft_peak_hz(x: &[f64], rate: f64) -> f64 {
        // naive DFT magnitude scan over positive frequencies
        let n = x.len();
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0 as f64 * rate / n as f64
    }

    #[test]
    fn same_rate_is_bit_identical() {
        let clip = AudioClip::new((0..1000).map(|i| (i as f64 * 0.37).sin() * 0.3).collect(), 16000, "a").unwrap();
        assert_eq!(resample(&clip, 16000).unwrap(), clip);
    }

    #[test]
    fn zero_target_rejected() {
        let clip = AudioClip::new(vec![0.0; 10], 16000, "a").unwrap();
        assert!(matches!(resample(&clip, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tone_frequency_survives_downsampling() {
        let x: Vec<f64> = (0..4800).map(|i| (2.0 * PI * 1000.0 * i as f64 / 48000.0).sin()).collect();
        let y = resample_ratio(&x, 48000, 16000);
        assert_eq!(y.len(), 1600);
        // skip filter edge transients
        let body = &y[200..1400];
        let peak = dft_peak_hz(body, 16000.0);
        let bin = 16000.0 / body.len() as f64;
        assert!((peak - 1000.0).abs() <= bin, "peak at {peak} Hz");
    }

    #[test]
    fn dc_preserved_away_from_edges() {
        let x = vec![0.7; 44100];
        let y = resample_ratio(&x, 44100, 16000);
        assert!((y.len() as i64 - 16000).abs() <= 1);
        for &v in &y[100..y.len() - 100] {
            assert!((v - 0.7).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn length_rule() {
        for (len, from, to) in [(1001usize, 44100u32, 16000u32), (7, 8000, 16000), (16000, 17960, 16000)] {
            let y = resample_ratio(&vec![0.1; len], from, to);
            let expect = (len as f64 * to as f64 / from as f64).round() as i64;
            assert!((y.len() as i64 - expect).abs() <= 1);
        }
    }
}
