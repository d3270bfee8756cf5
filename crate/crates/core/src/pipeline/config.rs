//! Settings file: one `key = value` per line, `#` starts a comment.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `seed` | master seed for training and corpus synthesis | 0 |
//! | `threads` | worker threads (0 = all cores) | 0 |
//! | `preset` | training regime, `desk` or `reference`; applied before other keys | desk |
//! | `tau` | stage-1 threshold in [0, 1] | 0.5 |
//! | `aggregate` | window aggregation, `prob` or `logit` | prob |
//! | `windows` | inference windows per track | 5 |
//! | `d_weights`, `s_weights`, `db`, `output` | file paths | unset |
//! | `train.d.<field>`, `train.s.<field>` | any `TrainConfig` scalar | preset |
//! | `synth.<field>` | any `SynthCorpusSpec` field | built-in |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::synth::SynthCorpusSpec;
use crate::error::{Error, Result};
use crate::models::{Aggregate, ModelKind, TrainConfig, INFERENCE_WINDOWS};

/// Parses `key = value` lines. Keys must be unique.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
        }
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Stage-1/stage-2 inference settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub d_weights: Option<PathBuf>,
    pub s_weights: Option<PathBuf>,
    pub db: Option<PathBuf>,
    /// Tracks with mean deepfake probability `>= tau` stop at stage 1.
    pub tau: f64,
    pub aggregate: Aggregate,
    pub windows: usize,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_weights: None,
            s_weights: None,
            db: None,
            tau: 0.5,
            aggregate: Aggregate::Prob,
            windows: INFERENCE_WINDOWS,
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.windows == 0 {
            return Err(Error::Config("windows must be positive".into()));
        }
        Ok(())
    }

    /// The weight and db paths, all of which must exist.
    pub fn required_files(&self) -> Result<(&Path, &Path, &Path)> {
        fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
            let p = p.as_deref().ok_or_else(|| Error::Config(format!("{key} is not set")))?;
            if !p.is_file() {
                return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
            }
            Ok(p)
        }
        Ok((need(&self.d_weights, "d_weights")?, need(&self.s_weights, "s_weights")?, need(&self.db, "db")?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub threads: usize,
    pub pipeline: PipelineConfig,
    pub train_d: TrainConfig,
    pub train_s: TrainConfig,
    pub synth: SynthCorpusSpec,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            pipeline: PipelineConfig::default(),
            train_d: TrainConfig::desk(ModelKind::Discriminator),
            train_s: TrainConfig::desk(ModelKind::Embedder),
            synth: SynthCorpusSpec::default(),
        }
    }
}

fn set_train(cfg: &mut TrainConfig, field: &str, key: &str, v: &str) -> Result<()> {
    match field {
        "batch_size" => cfg.batch_size = parse(key, v)?,
        "lr_start" => cfg.lr_start = parse(key, v)?,
        "lr_end" => cfg.lr_end = parse(key, v)?,
        "weight_decay" => cfg.weight_decay = parse(key, v)?,
        "patience" => cfg.patience = parse(key, v)?,
        "max_epochs" => cfg.max_epochs = parse(key, v)?,
        "augment_prob" => cfg.augment_prob = parse(key, v)?,
        "pitch_shift_semitones" => cfg.pitch_shift_semitones = parse(key, v)?,
        "snr_db_min" => cfg.snr_db_min = parse(key, v)?,
        "snr_db_max" => cfg.snr_db_max = parse(key, v)?,
        "windows_per_track" => cfg.windows_per_track = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

fn set_synth(spec: &mut SynthCorpusSpec, field: &str, key: &str, v: &str) -> Result<()> {
    match field {
        "n_singers" => spec.n_singers = parse(key, v)?,
        "tracks_per_singer" => spec.tracks_per_singer = parse(key, v)?,
        "duration_s" => spec.duration_s = parse(key, v)?,
        "silence_fraction" => spec.silence_fraction = parse(key, v)?,
        "hq_train_per_singer" => spec.hq_train_per_singer = parse(key, v)?,
        "hq_val_per_singer" => spec.hq_val_per_singer = parse(key, v)?,
        "hq_test_per_singer" => spec.hq_test_per_singer = parse(key, v)?,
        "lq_train_per_singer" => spec.lq_train_per_singer = parse(key, v)?,
        "lq_val_per_singer" => spec.lq_val_per_singer = parse(key, v)?,
        "lq_test_per_singer" => spec.lq_test_per_singer = parse(key, v)?,
        "hq_perturbation" => spec.hq_perturbation = parse(key, v)?,
        "lq_perturbation" => spec.lq_perturbation = parse(key, v)?,
        "bed_snr_db" => spec.bed_snr_db = parse(key, v)?,
        "n_beds" => spec.n_beds = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

impl Settings {
    /// Applies one setting. `seed` also reseeds both training runs and the
    /// corpus.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.set_seed(parse(key, v)?),
            "threads" => self.threads = parse(key, v)?,
            "preset" => {
                let (d, s) = match v {
                    "desk" => (TrainConfig::desk(ModelKind::Discriminator), TrainConfig::desk(ModelKind::Embedder)),
                    "reference" => (TrainConfig::reference(ModelKind::Discriminator), TrainConfig::reference(ModelKind::Embedder)),
                    _ => return Err(Error::Config(format!("preset must be desk or reference, got {v:?}"))),
                };
                self.train_d = TrainConfig { seed: self.seed, ..d };
                self.train_s = TrainConfig { seed: self.seed, ..s };
            }
            "tau" => self.pipeline.tau = parse(key, v)?,
            "aggregate" => self.pipeline.aggregate = v.parse()?,
            "windows" => self.pipeline.windows = parse(key, v)?,
            "d_weights" => self.pipeline.d_weights = Some(v.into()),
            "s_weights" => self.pipeline.s_weights = Some(v.into()),
            "db" => self.pipeline.db = Some(v.into()),
            "output" => self.pipeline.output = Some(v.into()),
            _ => {
                if let Some(f) = key.strip_prefix("train.d.") {
                    set_train(&mut self.train_d, f, key, v)?
                } else if let Some(f) = key.strip_prefix("train.s.") {
                    set_train(&mut self.train_s, f, key, v)?
                } else if let Some(f) = key.strip_prefix("synth.") {
                    set_synth(&mut self.synth, f, key, v)?
                } else {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train_d.seed = seed;
        self.train_s.seed = seed;
        self.synth.seed = seed;
    }

    /// Defaults overridden by `text`; `preset` and `seed` apply first so
    /// that individual fields can refine them.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut out = Settings::default();
        for first in ["seed", "preset"] {
            if let Some(v) = kv.get(first) {
                out.set(first, v)?;
            }
        }
        for (k, v) in kv.iter().filter(|(k, _)| *k != "seed" && *k != "preset") {
            out.set(k, v)?;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.train_d.validate()?;
        self.train_s.validate()?;
        self.synth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies_in_order() {
        let s = Settings::from_text(
            "# comment\nseed = 7\ntrain.d.max_epochs = 3\npreset = reference\ntau=0.25\nsynth.n_singers = 4 # trailing\n",
        )
        .unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.train_d.seed, 7);
        assert_eq!(s.synth.seed, 7);
        assert_eq!(s.train_d.max_epochs, 3);
        assert_eq!(s.train_d.batch_size, 64);
        assert_eq!(s.pipeline.tau, 0.25);
        assert_eq!(s.synth.n_singers, 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Settings::from_text("tau = 1.5").is_err());
        assert!(Settings::from_text("nonsense = 1").is_err());
        assert!(Settings::from_text("tau = 0.1\ntau = 0.2").is_err());
        assert!(Settings::from_text("just words").is_err());
        assert!(Settings::from_text("aggregate = median").is_err());
        assert!(Settings::from_text("synth.n_singers = 1").is_err());
    }

    #[test]
    fn missing_files_are_reported() {
        let cfg = PipelineConfig { d_weights: Some("/nonexistent/d.vpw".into()), ..Default::default() };
        assert!(matches!(cfg.required_files(), Err(Error::Config(_))));
    }
}
