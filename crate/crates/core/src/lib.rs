//! Two-stage singing-voice likeness identification.
//!
//! Stage one is a light CNN discriminator that flags synthetic vocals; tracks
//! it accepts as authentic go to stage two, an attentive-pooling TDNN
//! embedder matched against enrolled singer profiles by cosine distance.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod identity;
pub(crate) mod io;
pub mod manifest;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod vad;

pub use dsp::AudioClip;
pub use error::{Error, Result};
pub use identity::{Embedding, ProfileDb, SingerProfile, TrackVerdict};
pub use manifest::{Manifest, ManifestRow};
pub use models::{Discriminator, Embedder, ModelKind, TrainConfig};
pub use pipeline::{PipelineConfig, Settings, SynthCorpusSpec};
