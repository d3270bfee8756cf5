use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_length: 400,
            hop_length: 160,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.win_length || self.win_length > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "need 0 < hop ({}) <= win ({}) <= n_fft ({})",
                self.hop_length, self.win_length, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Number of fully covered frames, or `None` when the signal is shorter than a window.
pub fn frame_count(len: usize, cfg: &StftConfig) -> Option<usize> {
    (len >= cfg.win_length).then(|| (len - cfg.win_length) / cfg.hop_length + 1)
}

/// One-sided complex STFT, row-major `[n_frames x n_bins]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Walk every frame of `samples`, handing the one-sided spectrum to `visit`.
pub(crate) fn for_each_frame(
    samples: &[f64],
    cfg: &StftConfig,
    mut visit: impl FnMut(usize, &[Complex64]),
) -> Result<usize> {
    cfg.validate()?;
    let n_frames = frame_count(samples.len(), cfg).ok_or(Error::TooShort {
        needed: cfg.win_length,
        got: samples.len(),
    })?;
    let window = hamming(cfg.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let n_bins = cfg.n_bins();
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        let frame = &samples[start..start + cfg.win_length];
        for (slot, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex64::new(x * w, 0.0);
        }
        buf[cfg.win_length..].fill(Complex64::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        visit(t, &buf[..n_bins]);
    }
    Ok(n_frames)
}

/// Short-time Fourier transform of a clip.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    let n_bins = cfg.n_bins();
    let mut data = Vec::new();
    let n_frames = for_each_frame(&clip.samples, cfg, |_, spec| data.extend_from_slice(spec))?;
    Ok(Spectrogram { n_frames, n_bins, data })
}
