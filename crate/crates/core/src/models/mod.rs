//! The two networks: the light CNN discriminator `D` (authentic vs deepfake)
//! and the TDNN singer embedder `S`, plus everything needed to train them.

mod augment;
mod config;
mod sampler;
mod train;

pub use augment::{augment, augment_with_stem, mix_at_snr, pitch_shift, AugmentAssets, Augmentation};
pub use config::{cosine_lr, TrainConfig};
pub use sampler::BalancedSampler;
pub use train::{load_row_clip, load_tracks, train, train_on_tracks, EpochLog, TrainOutcome, TrainingExample, TrainingTrack, LOG_HEADER};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{log_mel, AudioClip, LogMelSpectrogram, MelConfig, StftConfig, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::archive::{fingerprint_of, WeightArchive};
use crate::nn::{LayerSpec, Network, Padding, Tensor};

/// Analysis window fed to both networks.
pub const WINDOW_SECONDS: f64 = 10.0;
pub const WINDOW_SAMPLES: usize = 160_000;
/// Frames in one window with the default front-end: `(160000 - 400) / 160 + 1`.
pub const WINDOW_FRAMES: usize = 998;
pub const N_MELS: usize = 80;
/// Windows drawn from each track at inference.
pub const INFERENCE_WINDOWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Discriminator,
    Embedder,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Discriminator => "discriminator",
            ModelKind::Embedder => "embedder",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    /// Output channels of the four conv layers; each is halved by MFM.
    pub conv_channels: [usize; 4],
    /// Width of the hidden dense layer before its MFM.
    pub hidden: usize,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        Self {
            conv_channels: [8, 8, 16, 16],
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderArch {
    pub channels: usize,
    pub se_bottleneck: usize,
    pub attention_dim: usize,
    pub embedding_dim: usize,
}

impl Default for EmbedderArch {
    fn default() -> Self {
        Self {
            channels: 24,
            se_bottleneck: 8,
            attention_dim: 16,
            embedding_dim: 64,
        }
    }
}

fn named(layers: Vec<(&str, LayerSpec)>) -> Vec<(String, LayerSpec)> {
    layers.into_iter().map(|(n, s)| (n.to_string(), s)).collect()
}

/// `[B, 1, 80, T]` log-mel in, `[B, 1]` deepfake probability out.
pub fn discriminator_specs(arch: &DiscriminatorArch) -> Result<Vec<(String, LayerSpec)>> {
    if arch.conv_channels.iter().any(|c| c % 2 != 0 || *c == 0) || arch.hidden % 2 != 0 || arch.hidden == 0 {
        return Err(Error::Config("discriminator widths must be positive and even".into()));
    }
    let mut layers = vec![("input_norm".to_string(), LayerSpec::Batchnorm { channels: 1 })];
    let mut c_in = 1;
    for (i, &c) in arch.conv_channels.iter().enumerate() {
        let k = i + 1;
        layers.push((
            format!("conv{k}"),
            LayerSpec::Conv2d { in_channels: c_in, out_channels: c, kernel: 3, stride: 1, padding: Padding::Same },
        ));
        layers.push((format!("mfm{k}"), LayerSpec::Mfm));
        layers.push((format!("pool{k}"), LayerSpec::MaxPool2d { kernel: 2, stride: 2 }));
        c_in = c / 2;
    }
    let mel_bins = N_MELS >> arch.conv_channels.len();
    layers.extend(named(vec![
        ("time_pool", LayerSpec::MeanPool),
        ("fc1", LayerSpec::Dense { in_features: c_in * mel_bins, out_features: arch.hidden }),
        ("mfm_fc", LayerSpec::Mfm),
        ("head", LayerSpec::Dense { in_features: arch.hidden / 2, out_features: 1 }),
        ("sigmoid", LayerSpec::Sigmoid),
    ]));
    Ok(layers)
}

/// `[B, 80, T]` log-mel in, `[B, n_classes]` singer posteriors out; the
/// `embedding` layer's linear output is the singer embedding.
pub fn embedder_specs(arch: &EmbedderArch, n_classes: usize) -> Result<Vec<(String, LayerSpec)>> {
    if n_classes < 2 {
        return Err(Error::InvalidTask(format!("embedder needs at least 2 singer classes, got {n_classes}")));
    }
    let c = arch.channels;
    Ok(named(vec![
        ("input_norm", LayerSpec::Batchnorm { channels: N_MELS }),
        ("tdnn1", LayerSpec::DilatedTdnnBlock { in_channels: N_MELS, out_channels: c, kernel: 5, dilation: 1 }),
        ("tdnn2", LayerSpec::DilatedTdnnBlock { in_channels: c, out_channels: c, kernel: 3, dilation: 2 }),
        ("tdnn3", LayerSpec::DilatedTdnnBlock { in_channels: c, out_channels: c, kernel: 3, dilation: 3 }),
        ("se", LayerSpec::SeBlock { channels: c, bottleneck: arch.se_bottleneck }),
        ("pool", LayerSpec::AttentiveStatsPool { channels: c, attention_dim: arch.attention_dim }),
        ("embedding", LayerSpec::Dense { in_features: 2 * c, out_features: arch.embedding_dim }),
        ("classifier", LayerSpec::Dense { in_features: arch.embedding_dim, out_features: n_classes }),
        ("softmax", LayerSpec::Softmax),
    ]))
}

/// Name of the layer whose output is the singer embedding.
pub const EMBEDDING_LAYER: &str = "embedding";

/// Log-mel of a window with the fixed front-end, transposed to mel-major
/// `[80, T]` single-precision network input.
pub fn window_features(clip: &AudioClip) -> Result<Vec<f32>> {
    if clip.sample_rate_hz != TARGET_SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!(
            "network input must be {TARGET_SAMPLE_RATE} Hz, got {}",
            clip.sample_rate_hz
        )));
    }
    let lm = log_mel(clip, &StftConfig::default(), &MelConfig::default())?;
    Ok(mel_major(&lm))
}

pub(crate) fn mel_major(lm: &LogMelSpectrogram) -> Vec<f32> {
    let (t, m) = (lm.n_frames, lm.n_mels);
    let mut out = vec![0.0f32; t * m];
    for ti in 0..t {
        for (mi, &v) in lm.frame(ti).iter().enumerate() {
            out[mi * t + ti] = v as f32;
        }
    }
    out
}

/// Stacks equally sized mel-major windows into a batch tensor for `kind`.
pub fn batch_tensor(kind: ModelKind, windows: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let b = windows.len();
    let per = windows.first().map(Vec::len).unwrap_or(0);
    if b == 0 || per % N_MELS != 0 || windows.iter().any(|w| w.len() != per) {
        return Err(Error::shape("feature batch", "non-empty windows of equal [80, T] size", b));
    }
    let t = per / N_MELS;
    let data: Vec<f32> = windows.iter().flatten().copied().collect();
    let shape = match kind {
        ModelKind::Discriminator => vec![b, 1, N_MELS, t],
        ModelKind::Embedder => vec![b, N_MELS, t],
    };
    Tensor::new(shape, data)
}

fn dims_of(archive: &WeightArchive, name: &str) -> Option<Vec<usize>> {
    archive.tensors.iter().find(|t| t.name == name).map(|t| t.shape.clone())
}

/// How per-window discriminator outputs become a track score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// Mean of window probabilities.
    Prob,
    /// Sigmoid of the mean window logit.
    Logit,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" => Ok(Aggregate::Prob),
            "logit" => Ok(Aggregate::Logit),
            other => Err(Error::Config(format!("aggregate must be prob or logit, got {other:?}"))),
        }
    }
}

/// Bounds on window probabilities, so that a threshold of exactly 1 passes
/// and exactly 0 rejects every track.
pub const PROB_CLAMP: f64 = 1e-7;

pub struct Discriminator {
    pub net: Network<f32>,
    pub arch: DiscriminatorArch,
    pub fingerprint: u32,
}

impl Discriminator {
    pub fn new(net: Network<f32>, arch: DiscriminatorArch) -> Self {
        let fingerprint = fingerprint_of(&WeightArchive::from_network(&net).encode());
        Self { net, arch, fingerprint }
    }

    pub fn from_archive(archive: &WeightArchive, fingerprint: u32) -> Result<Self> {
        let mut arch = DiscriminatorArch::default();
        for (i, c) in arch.conv_channels.iter_mut().enumerate() {
            if let Some(d) = dims_of(archive, &format!("conv{}.weight", i + 1)) {
                *c = d[0];
            }
        }
        if let Some(d) = dims_of(archive, "fc1.weight") {
            arch.hidden = d[0];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::build(&discriminator_specs(&arch)?, &mut rng)?;
        archive.apply_to(&mut net)?;
        Ok(Self { net, arch, fingerprint })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (archive, fp) = crate::nn::read_archive(path)?;
        Self::from_archive(&archive, fp)
    }

    /// Deepfake probability per window, each clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn window_probabilities(&self, windows: &[Vec<f32>]) -> Result<Vec<f64>> {
        let y = self.net.infer(&batch_tensor(ModelKind::Discriminator, windows)?)?;
        Ok(y.data().iter().map(|&p| (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).collect())
    }

    pub fn window_logits(&self, windows: &[Vec<f32>]) -> Result<Vec<f64>> {
        let n = self.net.len() - 1;
        let y = self.net.infer_until(
            &batch_tensor(ModelKind::Discriminator, windows)?,
            &self.net.specs()[n - 1].0,
        )?;
        Ok(y.data().iter().map(|&z| z as f64).collect())
    }

    /// Track score from its windows.
    pub fn score(&self, windows: &[Vec<f32>], aggregate: Aggregate) -> Result<(f64, Vec<f64>)> {
        let probs = self.window_probabilities(windows)?;
        let score = match aggregate {
            Aggregate::Prob => probs.iter().sum::<f64>() / probs.len() as f64,
            Aggregate::Logit => {
                let z = self.window_logits(windows)?;
                let m = z.iter().sum::<f64>() / z.len() as f64;
                (1.0 / (1.0 + (-m).exp())).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
            }
        };
        Ok((score, probs))
    }
}

pub struct Embedder {
    pub net: Network<f32>,
    pub arch: EmbedderArch,
    pub n_classes: usize,
    pub fingerprint: u32,
}

impl Embedder {
    pub fn new(net: Network<f32>, arch: EmbedderArch, n_classes: usize) -> Self {
        let fingerprint = fingerprint_of(&WeightArchive::from_network(&net).encode());
        Self { net, arch, n_classes, fingerprint }
    }

    /// Random-initialised embedder, mainly for tests and tooling.
    pub fn random(arch: EmbedderArch, n_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::build(&embedder_specs(&arch, n_classes)?, &mut rng)?;
        Ok(Self::new(net, arch, n_classes))
    }

    pub fn from_archive(archive: &WeightArchive, fingerprint: u32) -> Result<Self> {
        let mut arch = EmbedderArch::default();
        let mut n_classes = 2;
        if let Some(d) = dims_of(archive, "tdnn1.conv.weight") {
            arch.channels = d[0];
        }
        if let Some(d) = dims_of(archive, "se.fc1.weight") {
            arch.se_bottleneck = d[0];
        }
        if let Some(d) = dims_of(archive, "pool.w1") {
            arch.attention_dim = d[0];
        }
        if let Some(d) = dims_of(archive, "embedding.weight") {
            arch.embedding_dim = d[0];
        }
        if let Some(d) = dims_of(archive, "classifier.weight") {
            n_classes = d[0].max(2);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::build(&embedder_specs(&arch, n_classes)?, &mut rng)?;
        archive.apply_to(&mut net)?;
        Ok(Self { net, arch, n_classes, fingerprint })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (archive, fp) = crate::nn::read_archive(path)?;
        Self::from_archive(&archive, fp)
    }

    pub fn dim(&self) -> usize {
        self.arch.embedding_dim
    }

    /// One embedding per window.
    pub fn embed_windows(&self, windows: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
        let y = self.net.infer_until(&batch_tensor(ModelKind::Embedder, windows)?, EMBEDDING_LAYER)?;
        Ok(y.data().chunks(self.dim()).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }

    /// Class posteriors per window.
    pub fn classify_windows(&self, windows: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
        let y = self.net.infer(&batch_tensor(ModelKind::Embedder, windows)?)?;
        Ok(y.data().chunks(self.n_classes).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminator_maps_a_window_batch_to_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = discriminator_specs(&DiscriminatorArch::default()).unwrap();
        let net = Network::<f32>::build(&specs, &mut rng).unwrap();
        let x = Tensor::full(vec![2, 1, N_MELS, 64], 0.5f32);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert!(y.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn embedder_exposes_embedding_and_posteriors() {
        let e = Embedder::random(EmbedderArch::default(), 3, 1).unwrap();
        let w = vec![vec![0.1f32; N_MELS * 40], vec![-0.2f32; N_MELS * 40]];
        let emb = e.embed_windows(&w).unwrap();
        assert_eq!((emb.len(), emb[0].len()), (2, 64));
        let post = e.classify_windows(&w).unwrap();
        assert!((post[0].iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn embedder_needs_two_classes() {
        assert!(matches!(
            embedder_specs(&EmbedderArch::default(), 1),
            Err(Error::InvalidTask(_))
        ));
    }

    #[test]
    fn ten_second_window_has_998_frames() {
        let clip = AudioClip::new(vec![0.01; WINDOW_SAMPLES], TARGET_SAMPLE_RATE, "w").unwrap();
        assert_eq!(window_features(&clip).unwrap().len(), N_MELS * WINDOW_FRAMES);
    }
}
