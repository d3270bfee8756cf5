use serde::{Deserialize, Serialize};

use super::stft::{for_each_frame, StftConfig};
use super::AudioClip;
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min_hz: f64,
    /// Upper edge; `None` means Nyquist.
    pub f_max_hz: Option<f64>,
    /// Floor applied to mel power before the log.
    pub log_floor: f64,
    /// Per-band mean/variance normalisation over time. Off by default.
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            f_min_hz: 0.0,
            f_max_hz: None,
            log_floor: 1e-10,
            normalize: false,
        }
    }
}

/// Triangular filters, row-major `[n_mels x n_bins]`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
    pub center_hz: Vec<f64>,
    /// Nonzero bin range `[start, end)` of each filter.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Apply to one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, slot) in out.iter_mut().enumerate() {
            let (s, e) = self.spans[m];
            let row = self.row(m);
            *slot = (s..e).map(|k| row[k] * power[k]).sum();
        }
    }
}

/// Build HTK-style triangular mel filters without area normalisation.
pub fn mel_filterbank(cfg: &MelConfig, stft_cfg: &StftConfig, sample_rate_hz: u32) -> Result<MelFilterbank> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let f_max = cfg.f_max_hz.unwrap_or(nyquist);
    if cfg.n_mels == 0 {
        return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
    }
    if !(cfg.f_min_hz >= 0.0 && cfg.f_min_hz < f_max && f_max <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "mel range [{}, {f_max}] invalid for Nyquist {nyquist}",
            cfg.f_min_hz
        )));
    }
    let n_bins = stft_cfg.n_bins();
    let mel_lo = hz_to_mel(cfg.f_min_hz);
    let mel_hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / stft_cfg.n_fft as f64;
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    let mut spans = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        let (mut first, mut last) = (usize::MAX, 0);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let v = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            if v > 0.0 {
                *w = v;
                first = first.min(k);
                last = k;
            }
        }
        if first == usize::MAX {
            return Err(Error::DegenerateFilterbank { filter: m });
        }
        spans.push((first, last + 1));
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        weights,
        center_hz: edges[1..=cfg.n_mels].to_vec(),
        spans,
    })
}

/// Log-mel features, row-major `[n_frames x n_mels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMelSpectrogram {
    pub n_frames: usize,
    pub n_mels: usize,
    pub frames: Vec<f64>,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub frame_rate_hz: f64,
}

impl LogMelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Copy `n` frames starting at `start`.
    pub fn crop(&self, start: usize, n: usize) -> Result<LogMelSpectrogram> {
        if start + n > self.n_frames {
            return Err(Error::TooShort {
                needed: start + n,
                got: self.n_frames,
            });
        }
        Ok(LogMelSpectrogram {
            n_frames: n,
            frames: self.frames[start * self.n_mels..(start + n) * self.n_mels].to_vec(),
            ..self.clone()
        })
    }
}

pub fn log_mel(clip: &AudioClip, stft_cfg: &StftConfig, mel_cfg: &MelConfig) -> Result<LogMelSpectrogram> {
    let fb = mel_filterbank(mel_cfg, stft_cfg, clip.sample_rate_hz)?;
    let n_mels = mel_cfg.n_mels;
    let floor_log = mel_cfg.log_floor.ln();
    let mut frames = Vec::new();
    let mut power = vec![0.0; stft_cfg.n_bins()];
    let mut mel = vec![0.0; n_mels];
    let n_frames = for_each_frame(&clip.samples, stft_cfg, |_, spec| {
        for (p, c) in power.iter_mut().zip(spec) {
            *p = c.norm_sqr();
        }
        fb.apply(&power, &mut mel);
        frames.extend(mel.iter().map(|&e| {
            if e > mel_cfg.log_floor {
                e.ln()
            } else {
                floor_log
            }
        }));
    })?;
    if mel_cfg.normalize {
        normalize_bands(&mut frames, n_frames, n_mels);
    }
    Ok(LogMelSpectrogram {
        n_frames,
        n_mels,
        frames,
        stft: *stft_cfg,
        mel: *mel_cfg,
        frame_rate_hz: clip.sample_rate_hz as f64 / stft_cfg.hop_length as f64,
    })
}

fn normalize_bands(frames: &mut [f64], n_frames: usize, n_mels: usize) {
    for m in 0..n_mels {
        let mean = (0..n_frames).map(|t| frames[t * n_mels + m]).sum::<f64>() / n_frames as f64;
        let var = (0..n_frames)
            .map(|t| (frames[t * n_mels + m] - mean).powi(2))
            .sum::<f64>()
            / n_frames as f64;
        let inv = 1.0 / (var.sqrt() + 1e-8);
        for t in 0..n_frames {
            let v = &mut frames[t * n_mels + m];
            *v = (*v - mean) * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_700_hz() {
        let expected = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0) - expected).abs() < 1e-12);
        assert!((expected - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn centers_increase_and_rows_unimodal() {
        let fb = mel_filterbank(&MelConfig::default(), &StftConfig::default(), 16000).unwrap();
        assert!(fb.center_hz.windows(2).all(|w| w[0] < w[1]));
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            let peak = row.iter().enumerate().fold(0, |b, (i, &w)| if w > row[b] { i } else { b });
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn bins_between_first_and_last_center_are_covered() {
        let fb = mel_filterbank(&MelConfig::default(), &StftConfig::default(), 16000).unwrap();
        let bin_hz = 16000.0 / 512.0;
        let (lo, hi) = (fb.center_hz[0], fb.center_hz[fb.n_mels - 1]);
        for k in 0..fb.n_bins {
            let f = k as f64 * bin_hz;
            if f >= lo && f <= hi {
                let total: f64 = (0..fb.n_mels).map(|m| fb.row(m)[k]).sum();
                assert!(total > 0.0, "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn too_many_mels_is_degenerate() {
        let cfg = MelConfig {
            n_mels: 256,
            ..Default::default()
        };
        assert!(matches!(
            mel_filterbank(&cfg, &StftConfig::default(), 16000),
            Err(Error::DegenerateFilterbank { .. })
        ));
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let clip = AudioClip::new(vec![0.0; 4000], 16000, "s").unwrap();
        let lm = log_mel(&clip, &StftConfig::default(), &MelConfig::default()).unwrap();
        assert!(lm.frames.iter().all(|&v| v == 1e-10f64.ln()));
    }

    #[test]
    fn ten_seconds_shape() {
        let clip = AudioClip::new(vec![0.01; 160_000], 16000, "s").unwrap();
        let lm = log_mel(&clip, &StftConfig::default(), &MelConfig::default()).unwrap();
        assert_eq!((lm.n_frames, lm.n_mels), (998, 80));
        assert_eq!(lm.frame_rate_hz, 100.0);
    }
}
