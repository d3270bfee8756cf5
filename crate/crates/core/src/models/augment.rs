//! Waveform-domain training augmentation: background beds, stationary or
//! impulsive noise, and pitch shifting.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainConfig;
use crate::dsp::{ingest, resample_ratio, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Background recordings mixed under training windows.
#[derive(Debug, Clone, Default)]
pub struct AugmentAssets {
    pub beds: Vec<Vec<f64>>,
}

impl AugmentAssets {
    /// Every `.wav` directly inside `dir`, in file-name order, at 16 kHz.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let beds = paths
            .iter()
            .map(|p| ingest(p).map(|c| c.samples))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { beds: beds.into_iter().filter(|b| crate::dsp::mean_power(b) > 0.0).collect() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    None,
    Background { bed: usize, snr_db: f64 },
    StationaryNoise { snr_db: f64 },
    ImpulsiveNoise { snr_db: f64 },
    PitchShift { semitones: f64 },
}

static MISSING_BEDS_WARNED: AtomicBool = AtomicBool::new(false);

/// With probability `augment_prob` applies exactly one augmentation, chosen
/// uniformly among background mix, noise, and pitch shift. The output has the
/// input's length.
pub fn augment(samples: &[f64], cfg: &TrainConfig, rng: &mut impl Rng, assets: &AugmentAssets) -> (Vec<f64>, Augmentation) {
    augment_with_stem(samples, None, cfg, rng, assets)
}

/// As [`augment`], but a background mix is laid under a window of the
/// untrimmed `stem` when one is given, so that the result resembles a full
/// mix: music continues through the vocal pauses that trimming removed.
pub fn augment_with_stem(
    samples: &[f64],
    stem: Option<&[f32]>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    assets: &AugmentAssets,
) -> (Vec<f64>, Augmentation) {
    if cfg.augment_prob <= 0.0 || rng.random::<f64>() >= cfg.augment_prob {
        return (samples.to_vec(), Augmentation::None);
    }
    let snr = |rng: &mut dyn rand::RngCore| {
        if cfg.snr_db_max > cfg.snr_db_min {
            rng.random_range(cfg.snr_db_min..cfg.snr_db_max)
        } else {
            cfg.snr_db_min
        }
    };
    let mut choice = rng.random_range(0..3u8);
    if choice == 0 && assets.beds.is_empty() {
        if !MISSING_BEDS_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("no background assets available; background augmentation falls back to noise");
        }
        choice = 1;
    }
    match choice {
        0 => {
            let bed = rng.random_range(0..assets.beds.len());
            let snr_db = snr(rng);
            let src = &assets.beds[bed];
            let start = rng.random_range(0..src.len());
            let noise: Vec<f64> = (0..samples.len()).map(|i| src[(start + i) % src.len()]).collect();
            let vocals: Vec<f64> = match stem.filter(|s| !s.is_empty()) {
                Some(st) => {
                    let at = rng.random_range(0..st.len().saturating_sub(samples.len()).max(1));
                    (0..samples.len()).map(|i| st[(at + i) % st.len()] as f64).collect()
                }
                None => samples.to_vec(),
            };
            (mix_at_snr(&vocals, &noise, snr_db), Augmentation::Background { bed, snr_db })
        }
        1 => {
            let snr_db = snr(rng);
            if rng.random::<bool>() {
                let noise: Vec<f64> = (0..samples.len()).map(|_| StandardNormal.sample(rng)).collect();
                (mix_at_snr(samples, &noise, snr_db), Augmentation::StationaryNoise { snr_db })
            } else {
                let noise = clicks(samples.len(), rng);
                (mix_at_snr(samples, &noise, snr_db), Augmentation::ImpulsiveNoise { snr_db })
            }
        }
        _ => {
            let semitones = rng.random_range(-cfg.pitch_shift_semitones..=cfg.pitch_shift_semitones);
            (pitch_shift(samples, semitones), Augmentation::PitchShift { semitones })
        }
    }
}

/// Sparse decaying clicks at roughly 20 per second.
fn clicks(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let n = (len as f64 / TARGET_SAMPLE_RATE as f64 * 20.0).ceil() as usize;
    for _ in 0..n.max(1) {
        let at = rng.random_range(0..len);
        let amp: f64 = rng.random_range(-1.0..1.0);
        for (k, v) in out[at..len.min(at + 32)].iter_mut().enumerate() {
            *v += amp * (-(k as f64) / 6.0).exp();
        }
    }
    out
}

/// `signal + g * noise` with `g` chosen so that the signal-to-noise power
/// ratio is `snr_db`. A silent signal or noise is returned unchanged.
pub fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Vec<f64> {
    let ps = crate::dsp::mean_power(signal);
    let pn = crate::dsp::mean_power(&noise[..signal.len().min(noise.len())]);
    if ps <= 0.0 || pn <= 0.0 {
        return signal.to_vec();
    }
    let g = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    signal
        .iter()
        .enumerate()
        .map(|(i, &s)| s + g * noise.get(i).copied().unwrap_or(0.0))
        .collect()
}

/// Raises pitch by `semitones` by resampling, then crops or loop-pads back
/// to the input length. Duration is not preserved inside the window.
pub fn pitch_shift(samples: &[f64], semitones: f64) -> Vec<f64> {
    let from = (TARGET_SAMPLE_RATE as f64 * 2f64.powf(semitones / 12.0)).round() as u32;
    let shifted = resample_ratio(samples, from, TARGET_SAMPLE_RATE);
    if shifted.is_empty() {
        return samples.to_vec();
    }
    (0..samples.len()).map(|i| shifted[i % shifted.len()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_augmentation_is_identity() {
        let mut cfg = TrainConfig::reference(ModelKind::Embedder);
        cfg.augment_prob = 0.0;
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin()).collect();
        let (y, a) = augment(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0), &AugmentAssets::default());
        assert_eq!(a, Augmentation::None);
        assert_eq!(x, y);
    }

    #[test]
    fn missing_beds_fall_back_to_noise() {
        let mut cfg = TrainConfig::reference(ModelKind::Embedder);
        cfg.augment_prob = 1.0;
        cfg.pitch_shift_semitones = 0.0;
        let x = vec![0.1; 1000];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (y, a) = augment(&x, &cfg, &mut rng, &AugmentAssets::default());
            assert!(!matches!(a, Augmentation::Background { .. } | Augmentation::None));
            assert_eq!(y.len(), x.len());
        }
    }

    #[test]
    fn background_mix_uses_the_untrimmed_stem() {
        let mut cfg = TrainConfig::reference(ModelKind::Embedder);
        cfg.augment_prob = 1.0;
        cfg.snr_db_min = 60.0;
        cfg.snr_db_max = 60.0;
        let assets = AugmentAssets { beds: vec![vec![0.5; 4000]] };
        let x = vec![0.1; 1000];
        let stem = vec![-0.3f32; 3000];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = false;
        for _ in 0..30 {
            let (y, a) = augment_with_stem(&x, Some(&stem), &cfg, &mut rng, &assets);
            assert_eq!(y.len(), x.len());
            if matches!(a, Augmentation::Background { .. }) {
                seen = true;
                assert!(y.iter().all(|v| (v + 0.3).abs() < 1e-3));
            }
        }
        assert!(seen);
    }
}
