use serde::{Deserialize, Serialize};

use super::{DiscriminatorArch, EmbedderArch, ModelKind};
use crate::error::{Error, Result};

/// Optimisation and data regime for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub augment_prob: f64,
    pub pitch_shift_semitones: f64,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Random training windows drawn per track and epoch (embedder only).
    pub windows_per_track: usize,
    pub seed: u64,
    pub d_arch: DiscriminatorArch,
    pub s_arch: EmbedderArch,
}

impl TrainConfig {
    /// Full-scale regime: batch 64, cosine 1e-4 to 1e-7, patience 10,
    /// augmentation with probability 0.35.
    pub fn reference(kind: ModelKind) -> Self {
        Self {
            batch_size: 64,
            lr_start: 1e-4,
            lr_end: 1e-7,
            weight_decay: match kind {
                ModelKind::Discriminator => 1e-4,
                ModelKind::Embedder => 1e-5,
            },
            patience: 10,
            max_epochs: 100,
            augment_prob: 0.35,
            pitch_shift_semitones: 2.0,
            snr_db_min: 5.0,
            snr_db_max: 20.0,
            windows_per_track: 1,
            seed: 0,
            d_arch: DiscriminatorArch::default(),
            s_arch: EmbedderArch::default(),
        }
    }

    /// Desk-scale regime for the small synthetic corpus: smaller batches, a
    /// larger initial step, and an epoch cap.
    pub fn desk(kind: ModelKind) -> Self {
        let base = Self::reference(kind);
        match kind {
            ModelKind::Discriminator => Self {
                batch_size: 16,
                lr_start: 3e-3,
                lr_end: 1e-5,
                max_epochs: 12,
                ..base
            },
            ModelKind::Embedder => Self {
                batch_size: 16,
                lr_start: 3e-3,
                lr_end: 1e-5,
                max_epochs: 30,
                windows_per_track: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end < self.lr_start) {
            return bad("learning rates must satisfy 0 < lr_end < lr_start");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return bad("augment_prob must lie in [0, 1]");
        }
        if !(self.pitch_shift_semitones >= 0.0 && self.pitch_shift_semitones <= 12.0) {
            return bad("pitch_shift_semitones must lie in [0, 12]");
        }
        if !(self.snr_db_min <= self.snr_db_max) {
            return bad("snr_db_min must not exceed snr_db_max");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.windows_per_track == 0 {
            return bad("max_epochs, patience and windows_per_track must be positive");
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_start` at step 0 to `lr_end` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + phase.cos()))
}
