use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    augment_with_stem, batch_tensor, cosine_lr, discriminator_specs, embedder_specs, window_features, AugmentAssets,
    BalancedSampler, Discriminator, Embedder, ModelKind, TrainConfig, INFERENCE_WINDOWS, WINDOW_SAMPLES,
};
use crate::dsp::{ingest, AudioClip, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::identity::window_offsets;
use crate::manifest::{Manifest, ManifestRow, Split, Variant};
use crate::nn::{bce_with_logits, save_weights, softmax_cross_entropy, AdamW, Mode, Network};
use crate::vad::{detect_activity, trim_nonvocal, VadConfig};

/// One labelled training track, already at 16 kHz and trimmed when it is a
/// vocals stem.
#[derive(Debug, Clone)]
pub struct TrainingTrack {
    pub track_id: String,
    /// Singer class (embedder) or 0 authentic / 1 deepfake (discriminator).
    pub label: usize,
    pub samples: Vec<f32>,
    /// Untrimmed stem when `samples` is VAD-trimmed, otherwise empty.
    pub stem: Vec<f32>,
}

/// A feature window and its label.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    /// Mel-major `[80, 998]` log-mel window.
    pub features: Vec<f32>,
    pub label: usize,
    pub track_id: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
    pub val_loss: f64,
}

pub const LOG_HEADER: &str = "epoch\tstep\tlr\ttrain_loss\tval_metric\tval_loss";

pub struct TrainOutcome {
    pub kind: ModelKind,
    pub network: Network<f32>,
    pub classes: Vec<String>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub config: TrainConfig,
}

impl TrainOutcome {
    /// Tab-separated training log: comment lines with the run identity, a
    /// header, then one row per epoch.
    pub fn log_text(&self) -> String {
        let mut out = format!("# kind={} seed={}\n", self.kind, self.config.seed);
        if !self.classes.is_empty() {
            let _ = writeln!(out, "# classes={}", self.classes.join(","));
        }
        let _ = writeln!(out, "# best_epoch={} best_val_metric={:.6}", self.best_epoch, self.best_metric);
        out.push_str(LOG_HEADER);
        out.push('\n');
        for e in &self.log {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}",
                e.epoch, e.step, e.lr, e.train_loss, e.val_metric, e.val_loss
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<u32> {
        save_weights(&self.network, path)
    }

    pub fn into_discriminator(self) -> Discriminator {
        Discriminator::new(self.network, self.config.d_arch)
    }

    pub fn into_embedder(self) -> Embedder {
        let n = self.classes.len();
        Embedder::new(self.network, self.config.s_arch, n)
    }
}

/// Audio of a manifest row; vocal stems are trimmed to their active regions,
/// falling back to the untrimmed stem when no activity is found.
pub fn load_row_clip(manifest: &Manifest, row: &ManifestRow, vad: &VadConfig) -> Result<AudioClip> {
    let clip = ingest(manifest.resolve(row))?;
    if row.variant != Variant::Vocals {
        return Ok(clip);
    }
    let mask = detect_activity(&clip, vad)?;
    match trim_nonvocal(&clip, &mask, vad.crossfade_ms) {
        Ok(t) => Ok(t.clip),
        Err(Error::EmptyResult(_)) => {
            log::warn!("{}: no vocal activity found, using untrimmed audio", row.path);
            Ok(clip)
        }
        Err(e) => Err(e),
    }
}

fn load_track(manifest: &Manifest, row: &ManifestRow, label: usize, vad: &VadConfig) -> Result<TrainingTrack> {
    let clip = load_row_clip(manifest, row, vad)?;
    let stem = match row.variant {
        Variant::Vocals => ingest(manifest.resolve(row))?.samples.iter().map(|&v| v as f32).collect(),
        Variant::Fullmix => Vec::new(),
    };
    Ok(TrainingTrack {
        track_id: row.path.clone(),
        label,
        samples: clip.samples.iter().map(|&v| v as f32).collect(),
        stem,
    })
}

/// Train and validation tracks for `kind`, with the class list (singer ids
/// for the embedder, `["authentic", "deepfake"]` for the discriminator).
/// The embedder only sees authentic tracks.
pub fn load_tracks(
    manifest: &Manifest,
    kind: ModelKind,
    vad: &VadConfig,
) -> Result<(Vec<TrainingTrack>, Vec<TrainingTrack>, Vec<String>)> {
    let classes = match kind {
        ModelKind::Discriminator => vec!["authentic".to_string(), "deepfake".to_string()],
        ModelKind::Embedder => manifest.singers(Split::Train),
    };
    let label_of = |row: &ManifestRow| -> Option<usize> {
        match kind {
            ModelKind::Discriminator => Some(usize::from(row.is_deepfake())),
            ModelKind::Embedder if row.is_deepfake() => None,
            ModelKind::Embedder => classes.iter().position(|c| *c == row.singer_id),
        }
    };
    let mut out = Vec::new();
    for split in [Split::Train, Split::Val] {
        let rows: Vec<(&ManifestRow, usize)> =
            manifest.split(split).filter_map(|r| label_of(r).map(|l| (r, l))).collect();
        let tracks = rows
            .par_iter()
            .map(|(row, label)| load_track(manifest, row, *label, vad))
            .collect::<Result<Vec<_>>>()?;
        out.push(tracks);
    }
    let val = out.pop().unwrap_or_default();
    let train = out.pop().unwrap_or_default();
    Ok((train, val, classes))
}

/// `WINDOW_SAMPLES` samples from `offset`, looping short tracks.
fn window_at(samples: &[f32], offset: usize) -> Vec<f64> {
    if samples.len() >= offset + WINDOW_SAMPLES {
        samples[offset..offset + WINDOW_SAMPLES].iter().map(|&v| v as f64).collect()
    } else {
        (0..WINDOW_SAMPLES).map(|i| samples[(offset + i) % samples.len()] as f64).collect()
    }
}

fn features_of(samples: Vec<f64>, track_id: &str) -> Result<Vec<f32>> {
    window_features(&AudioClip::new(samples, TARGET_SAMPLE_RATE, track_id)?)
}

/// A random, optionally augmented training window drawn with its own seed.
fn draw_example(
    track: &TrainingTrack,
    seed: u64,
    cfg: &TrainConfig,
    assets: &AugmentAssets,
) -> Result<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = track.samples.len().saturating_sub(WINDOW_SAMPLES);
    let offset = if span > 0 { rng.random_range(0..=span) } else { 0 };
    let (samples, _) = augment_with_stem(&window_at(&track.samples, offset), Some(&track.stem), cfg, &mut rng, assets);
    Ok(TrainingExample {
        features: features_of(samples, &track.track_id)?,
        label: track.label,
        track_id: track.track_id.clone(),
        offset,
    })
}

/// Evenly spaced inference windows of every validation track.
fn validation_windows(val: &[TrainingTrack]) -> Result<Vec<Vec<Vec<f32>>>> {
    val.par_iter()
        .map(|t| {
            window_offsets(t.samples.len(), WINDOW_SAMPLES, INFERENCE_WINDOWS)
                .into_iter()
                .map(|o| features_of(window_at(&t.samples, o), &t.track_id))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

const EVAL_CHUNK: usize = 16;

fn infer_chunked(net: &Network<f32>, kind: ModelKind, windows: &[Vec<f32>]) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for chunk in windows.chunks(EVAL_CHUNK) {
        out.extend_from_slice(net.infer(&batch_tensor(kind, chunk)?)?.data());
    }
    Ok(out)
}

/// Validation score: the headline metric, with mean window cross-entropy as
/// the tie-break once the metric saturates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ValScore {
    metric: f64,
    loss: f64,
}

impl ValScore {
    fn beats(&self, other: &ValScore) -> bool {
        self.metric > other.metric || (self.metric == other.metric && self.loss < other.loss)
    }
}

fn nll(p: f64) -> f64 {
    -p.clamp(1e-7, 1.0).ln()
}

/// Balanced accuracy of track-level decisions (mean window probability ≥ 0.5).
fn discriminator_metric(net: &Network<f32>, val: &[TrainingTrack], windows: &[Vec<Vec<f32>>]) -> Result<ValScore> {
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    let (mut loss, mut n) = (0.0, 0usize);
    for (t, w) in val.iter().zip(windows) {
        let p = infer_chunked(net, ModelKind::Discriminator, w)?;
        let mean = p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64;
        for &v in &p {
            loss += nll(if t.label == 1 { v as f64 } else { 1.0 - v as f64 });
            n += 1;
        }
        total[t.label] += 1;
        if usize::from(mean >= 0.5) == t.label {
            correct[t.label] += 1;
        }
    }
    let rates: Vec<f64> = (0..2).filter(|&c| total[c] > 0).map(|c| correct[c] as f64 / total[c] as f64).collect();
    Ok(ValScore { metric: rates.iter().sum::<f64>() / rates.len() as f64, loss: loss / n as f64 })
}

/// Fraction of validation windows whose arg-max class is the track's singer.
fn embedder_metric(
    net: &Network<f32>,
    n_classes: usize,
    val: &[TrainingTrack],
    windows: &[Vec<Vec<f32>>],
) -> Result<ValScore> {
    let (mut hits, mut n, mut loss) = (0usize, 0usize, 0.0);
    for (t, w) in val.iter().zip(windows) {
        let post = infer_chunked(net, ModelKind::Embedder, w)?;
        for row in post.chunks(n_classes) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            hits += usize::from(best == t.label);
            loss += nll(row[t.label] as f64);
            n += 1;
        }
    }
    Ok(ValScore { metric: hits as f64 / n as f64, loss: loss / n as f64 })
}

/// Trains `kind` from a manifest's train and val splits.
pub fn train(kind: ModelKind, manifest: &Manifest, cfg: &TrainConfig, assets: &AugmentAssets) -> Result<TrainOutcome> {
    let (train_tracks, val_tracks, classes) = load_tracks(manifest, kind, &VadConfig::default())?;
    train_on_tracks(kind, &train_tracks, &val_tracks, classes, cfg, assets)
}

/// Trains `kind` on prepared tracks. Returns the weights of the best
/// validation epoch.
pub fn train_on_tracks(
    kind: ModelKind,
    train: &[TrainingTrack],
    val: &[TrainingTrack],
    classes: Vec<String>,
    cfg: &TrainConfig,
    assets: &AugmentAssets,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Config("no validation tracks; the manifest needs a val split".into()));
    }
    if train.is_empty() {
        return Err(Error::Config("no training tracks".into()));
    }
    let n_classes = classes.len();
    if kind == ModelKind::Embedder && n_classes < 2 {
        return Err(Error::InvalidTask(format!("need at least 2 singers, got {n_classes}")));
    }
    if let Some(t) = train.iter().chain(val).find(|t| t.label >= n_classes || t.samples.is_empty()) {
        return Err(Error::InvalidArgument(format!("track {} has label {} or no audio", t.track_id, t.label)));
    }

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.random());
    let specs = match kind {
        ModelKind::Discriminator => discriminator_specs(&cfg.d_arch)?,
        ModelKind::Embedder => embedder_specs(&cfg.s_arch, n_classes)?,
    };
    let mut net = Network::<f32>::build(&specs, &mut init_rng)?;
    let logits_depth = net.len() - 1;
    let mut opt = AdamW::new(cfg.weight_decay);

    let mut sampler = match kind {
        ModelKind::Discriminator => {
            let idx = |l: usize| (0..train.len()).filter(|&i| train[i].label == l).collect::<Vec<_>>();
            Some(BalancedSampler::new(idx(0), idx(1), cfg.batch_size)?)
        }
        ModelKind::Embedder => None,
    };
    let pool = train.len() * cfg.windows_per_track;
    let steps_per_epoch = match &sampler {
        Some(s) => s.batches_per_epoch(),
        None => pool / cfg.batch_size + usize::from(pool % cfg.batch_size >= 2),
    };
    if steps_per_epoch == 0 {
        return Err(Error::Config("training set too small for one batch".into()));
    }
    let total_steps = steps_per_epoch * cfg.max_epochs;

    let val_windows = validation_windows(val)?;
    let metric = |net: &Network<f32>| match kind {
        ModelKind::Discriminator => discriminator_metric(net, val, &val_windows),
        ModelKind::Embedder => embedder_metric(net, n_classes, val, &val_windows),
    };

    let mut log = Vec::new();
    let mut best: Option<(usize, ValScore, Vec<Vec<f32>>)> = None;
    let mut step = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let batches: Vec<Vec<usize>> = match sampler.as_mut() {
            Some(s) => (0..steps_per_epoch)
                .map(|_| s.next_batch(&mut master).into_iter().map(|(i, _)| i).collect())
                .collect(),
            None => {
                let mut order: Vec<usize> = (0..pool).map(|k| k % train.len()).collect();
                order.shuffle(&mut master);
                order.chunks(cfg.batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
            }
        };
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr_start;
        for batch in &batches {
            let seeds: Vec<u64> = batch.iter().map(|_| master.random()).collect();
            let examples = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| draw_example(&train[i], seed, cfg, assets))
                .collect::<Result<Vec<_>>>()?;
            let feats: Vec<Vec<f32>> = examples.iter().map(|e| e.features.clone()).collect();
            let x = batch_tensor(kind, &feats)?;
            net.zero_grad();
            let logits = net.forward_to(&x, Mode::Train, logits_depth)?;
            let (loss, grad) = match kind {
                ModelKind::Discriminator => {
                    let y: Vec<f64> = examples.iter().map(|e| e.label as f64).collect();
                    bce_with_logits(&logits, &y)?
                }
                ModelKind::Embedder => {
                    let y: Vec<usize> = examples.iter().map(|e| e.label).collect();
                    softmax_cross_entropy(&logits, &y)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::State(format!("non-finite training loss at step {step}")));
            }
            net.backward(&grad)?;
            lr = cosine_lr(step.min(total_steps), total_steps, cfg)?;
            opt.step(&mut net, lr);
            step += 1;
            loss_sum += loss;
        }
        let val = metric(&net)?;
        let train_loss = loss_sum / batches.len() as f64;
        log::info!("{kind} epoch {epoch}: loss {train_loss:.4} val {:.4}/{:.4} lr {lr:.3e}", val.metric, val.loss);
        log.push(EpochLog { epoch, step, lr, train_loss, val_metric: val.metric, val_loss: val.loss });
        if best.as_ref().is_none_or(|(_, b, _)| val.beats(b)) {
            best = Some((epoch, val, net.snapshot()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val, snapshot) = best.expect("at least one epoch ran");
    let best_metric = best_val.metric;
    net.restore(&snapshot)?;
    let classes = match kind {
        ModelKind::Discriminator => Vec::new(),
        ModelKind::Embedder => classes,
    };
    Ok(TrainOutcome {
        kind,
        network: net,
        classes,
        log,
        best_epoch,
        best_metric,
        config: cfg.clone(),
    })
}
