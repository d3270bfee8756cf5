//! Audio ingestion and log-mel feature extraction.
//!
//! The feature front-end is fixed at 16 kHz input, a 512-point FFT over
//! 400-sample Hamming frames with a 160-sample hop, and 80 HTK-style mel
//! bands. Frames are only emitted when fully covered by the signal.

mod mel;
mod resample;
mod stft;
mod wav;

pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, LogMelSpectrogram, MelConfig, MelFilterbank};
pub use resample::{resample, resample_ratio};
pub use stft::{frame_count, hamming, stft, Spectrogram, StftConfig};
pub use wav::{encode_pcm16, load_wav, read_wav, write_wav_f32, write_wav_pcm16};

use crate::error::{Error, Result};

/// Sample rate every clip is brought to before feature extraction.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// A mono buffer of samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Sub-clip `[start, start + len)` in samples, clamped to the clip.
    pub fn slice(&self, start: usize, len: usize) -> AudioClip {
        let start = start.min(self.samples.len());
        let end = (start + len).min(self.samples.len());
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            source_id: self.source_id.clone(),
        }
    }

    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Load a WAV file and bring it to 16 kHz.
pub fn ingest(path: impl AsRef<std::path::Path>) -> Result<AudioClip> {
    let clip = load_wav(path)?;
    resample(&clip, TARGET_SAMPLE_RATE)
}
