//! Singer identification: track embeddings, the enrolled-profile database,
//! and cosine nearest-neighbour ranking.
//!
//! Profile database layout (integers little-endian u64 unless noted):
//! `"VPD1"`, version byte, u32 embedder fingerprint, dim, profile count, then
//! per profile the singer id (length + UTF-8), enrollment count, number of
//! track ids and each id (length + UTF-8), and `dim` f32 reference values;
//! finally a u32 CRC32 of every preceding byte.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::io::{atomic_write, put_str, put_u64, verify_crc, ByteReader};
use crate::models::{window_features, Embedder, INFERENCE_WINDOWS, WINDOW_SECONDS};

pub const DB_MAGIC: &[u8; 4] = b"VPD1";
pub const DB_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub track_id: String,
    pub fingerprint: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage1Label {
    Authentic,
    Deepfake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSinger {
    pub singer_id: String,
    pub distance: f64,
}

/// Outcome of the two-stage pipeline for one track. `ranking` is empty and
/// `predicted_singer` absent when stage 2 did not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackVerdict {
    pub track_id: String,
    /// Mean deepfake probability over the windows.
    pub stage1_score: f64,
    pub stage1_label: Stage1Label,
    pub window_scores: Vec<f64>,
    pub predicted_singer: Option<String>,
    pub distance_to_best: Option<f64>,
    /// All profiles by ascending distance.
    pub ranking: Vec<RankedSinger>,
    pub windows_used: usize,
    /// Set when the track could not be processed; all other fields are then
    /// placeholders.
    pub error: Option<String>,
}

impl TrackVerdict {
    pub fn failed(track_id: &str, error: &Error) -> Self {
        Self {
            track_id: track_id.to_string(),
            stage1_score: 0.0,
            stage1_label: Stage1Label::Authentic,
            window_scores: Vec::new(),
            predicted_singer: None,
            distance_to_best: None,
            ranking: Vec::new(),
            windows_used: 0,
            error: Some(error.to_string()),
        }
    }

    pub fn reached_stage2(&self) -> bool {
        self.error.is_none() && self.predicted_singer.is_some()
    }
}

/// Start offsets of `n` windows of `win` samples spread evenly over a signal
/// of `len` samples: `round(i * (len - win) / (n - 1))`. Signals no longer
/// than a window give `n` windows at 0.
pub fn window_offsets(len: usize, win: usize, n: usize) -> Vec<usize> {
    let span = len.saturating_sub(win);
    if n <= 1 || span == 0 {
        return vec![0; n];
    }
    (0..n)
        .map(|i| (i as f64 * span as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

pub fn extract_windows(clip: &AudioClip, n: usize, dur_s: f64) -> Result<Vec<AudioClip>> {
    if n == 0 || !(dur_s > 0.0) {
        return Err(Error::InvalidArgument(format!("need n > 0 and a positive duration, got {n}, {dur_s}")));
    }
    let win = (dur_s * clip.sample_rate_hz as f64).round() as usize;
    if clip.len() < win {
        return Err(Error::TooShort { needed: win, got: clip.len() });
    }
    Ok(window_offsets(clip.len(), win, n)
        .into_iter()
        .map(|o| clip.slice(o, win))
        .collect())
}

/// Network features of the standard inference windows of a track.
pub fn track_window_features(clip: &AudioClip) -> Result<Vec<Vec<f32>>> {
    extract_windows(clip, INFERENCE_WINDOWS, WINDOW_SECONDS)?
        .par_iter()
        .map(window_features)
        .collect()
}

/// Mean of per-window embeddings, unnormalised.
pub fn embed_windows(track_id: &str, windows: &[Vec<f32>], embedder: &Embedder) -> Result<Embedding> {
    let per = embedder.embed_windows(windows)?;
    let mut mean = vec![0.0; embedder.dim()];
    for e in &per {
        mean.iter_mut().zip(e).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= per.len() as f64);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::State(format!("non-finite embedding for {track_id}")));
    }
    Ok(Embedding {
        vector: mean,
        track_id: track_id.to_string(),
        fingerprint: embedder.fingerprint,
    })
}

pub fn embed_track(clip: &AudioClip, embedder: &Embedder) -> Result<Embedding> {
    embed_windows(&clip.source_id, &track_window_features(clip)?, embedder)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 - a.b / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine distance", a.len(), b.len()));
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let (na2, nb2) = (sq(a), sq(b));
    if na2 == 0.0 || nb2 == 0.0 || !na2.is_finite() || !nb2.is_finite() {
        return Err(Error::UndefinedDistance);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // sqrt(n^2) == n exactly, so identical vectors give exactly 0.
    Ok((1.0 - dot / (na2 * nb2).sqrt()).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingerProfile {
    pub singer_id: String,
    /// Unit-norm mean of the enrolled track embeddings, at storage precision.
    pub reference: Vec<f32>,
    pub count: usize,
    pub track_ids: Vec<String>,
}

impl SingerProfile {
    pub fn reference_f64(&self) -> Vec<f64> {
        self.reference.iter().map(|&v| v as f64).collect()
    }
}

/// Enrolled singer profiles for one embedder.
///
/// Lookups take `&self` and may run concurrently; enrollment takes
/// `&mut self` and replaces a profile in one assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDb {
    pub fingerprint: u32,
    pub dim: usize,
    profiles: BTreeMap<String, SingerProfile>,
}

impl ProfileDb {
    pub fn new(fingerprint: u32, dim: usize) -> Self {
        Self {
            fingerprint,
            dim,
            profiles: BTreeMap::new(),
        }
    }

    pub fn for_embedder(embedder: &Embedder) -> Self {
        Self::new(embedder.fingerprint, embedder.dim())
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Profiles in singer-id order.
    pub fn profiles(&self) -> impl Iterator<Item = &SingerProfile> {
        self.profiles.values()
    }

    pub fn get(&self, singer_id: &str) -> Option<&SingerProfile> {
        self.profiles.get(singer_id)
    }

    /// Errors unless embeddings from `fingerprint` with `dim` entries match this db.
    pub fn check_fingerprint(&self, fingerprint: u32, dim: usize) -> Result<()> {
        if fingerprint != self.fingerprint || dim != self.dim {
            return Err(Error::IncompatibleDb(format!(
                "database built for embedder {:08x} (dim {}), got {fingerprint:08x} (dim {dim})",
                self.fingerprint, self.dim
            )));
        }
        Ok(())
    }

    /// Builds the profile from track embeddings and replaces any existing
    /// profile for `singer_id`.
    pub fn enroll_embeddings(&mut self, singer_id: &str, embeddings: &[Embedding]) -> Result<&SingerProfile> {
        if singer_id.is_empty() {
            return Err(Error::InvalidArgument("empty singer id".into()));
        }
        let first = embeddings
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("no tracks to enroll for {singer_id}")))?;
        for e in embeddings {
            self.check_fingerprint(e.fingerprint, e.vector.len())?;
        }
        let mut mean = vec![0.0; first.vector.len()];
        for e in embeddings {
            mean.iter_mut().zip(&e.vector).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= embeddings.len() as f64);
        let n = norm(&mean);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::UndefinedDistance);
        }
        let profile = SingerProfile {
            singer_id: singer_id.to_string(),
            reference: mean.iter().map(|v| (v / n) as f32).collect(),
            count: embeddings.len(),
            track_ids: embeddings.iter().map(|e| e.track_id.clone()).collect(),
        };
        self.profiles.insert(singer_id.to_string(), profile);
        Ok(&self.profiles[singer_id])
    }

    /// Moves every profile of `other` into this db, replacing same-id
    /// profiles.
    pub fn merge(&mut self, other: ProfileDb) -> Result<()> {
        self.check_fingerprint(other.fingerprint, other.dim)?;
        self.profiles.extend(other.profiles);
        Ok(())
    }

    /// Every profile ranked by ascending cosine distance to `query`; equal
    /// distances are ordered by singer id.
    pub fn rank(&self, query: &[f64]) -> Result<Vec<(String, f64)>> {
        if self.profiles.is_empty() {
            return Err(Error::NoReferences);
        }
        let mut ranked = self
            .profiles
            .values()
            .map(|p| Ok((p.singer_id.clone(), cosine_distance(query, &p.reference_f64())?)))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked)
    }

    pub fn identify_embedding(&self, e: &Embedding) -> Result<Vec<(String, f64)>> {
        self.check_fingerprint(e.fingerprint, e.vector.len())?;
        self.rank(&e.vector)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DB_MAGIC);
        out.push(DB_VERSION);
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        put_u64(&mut out, self.dim as u64);
        put_u64(&mut out, self.profiles.len() as u64);
        for p in self.profiles.values() {
            put_str(&mut out, &p.singer_id);
            put_u64(&mut out, p.count as u64);
            put_u64(&mut out, p.track_ids.len() as u64);
            for t in &p.track_ids {
                put_str(&mut out, t);
            }
            for v in &p.reference {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let body = verify_crc(bytes, DB_MAGIC, DB_VERSION)?;
        let mut r = ByteReader::new(&body[5..]);
        let fingerprint = r.u32()?;
        let dim = r.u64()? as usize;
        let n = r.u64()? as usize;
        let mut db = Self::new(fingerprint, dim);
        for _ in 0..n {
            let singer_id = r.string()?;
            let count = r.u64()? as usize;
            let n_tracks = r.u64()? as usize;
            let track_ids = (0..n_tracks).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
            let reference = r.f32s(dim)?;
            if count == 0 {
                return Err(Error::CorruptArchive(format!("profile {singer_id:?} has no enrollments")));
            }
            db.profiles.insert(
                singer_id.clone(),
                SingerProfile {
                    singer_id,
                    reference,
                    count,
                    track_ids,
                },
            );
        }
        r.finish()?;
        if db.profiles.len() != n {
            return Err(Error::CorruptArchive("duplicate singer ids".into()));
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Embeds each clip and enrolls the singer from them.
pub fn enroll<'a>(
    singer_id: &str,
    clips: &[AudioClip],
    embedder: &Embedder,
    db: &'a mut ProfileDb,
) -> Result<&'a SingerProfile> {
    db.check_fingerprint(embedder.fingerprint, embedder.dim())?;
    let embeddings = clips
        .iter()
        .map(|c| embed_track(c, embedder))
        .collect::<Result<Vec<_>>>()?;
    db.enroll_embeddings(singer_id, &embeddings)
}

pub fn identify(clip: &AudioClip, embedder: &Embedder, db: &ProfileDb) -> Result<Vec<(String, f64)>> {
    if db.is_empty() {
        return Err(Error::NoReferences);
    }
    db.identify_embedding(&embed_track(clip, embedder)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64], id: &str) -> Embedding {
        Embedding { vector: v.to_vec(), track_id: id.into(), fingerprint: 7 }
    }

    #[test]
    fn offsets_follow_even_spacing() {
        let sr = 16_000;
        let w = 10 * sr;
        assert_eq!(window_offsets(50 * sr, w, 5), vec![0, 10 * sr, 20 * sr, 30 * sr, 40 * sr]);
        assert_eq!(window_offsets(10 * sr, w, 5), vec![0; 5]);
        assert_eq!(window_offsets(18 * sr, w, 5), vec![0, 2 * sr, 4 * sr, 6 * sr, 8 * sr]);
    }

    #[test]
    fn short_clip_is_rejected() {
        let clip = AudioClip::new(vec![0.0; 1000], 16_000, "c").unwrap();
        assert!(matches!(extract_windows(&clip, 5, 10.0), Err(Error::TooShort { .. })));
    }

    #[test]
    fn distance_reference_values() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::UndefinedDistance)));
    }

    #[test]
    fn profile_is_normalised_mean() {
        let mut db = ProfileDb::new(7, 2);
        let p = db.enroll_embeddings("s", &[emb(&[3.0, 0.0], "a"), emb(&[0.0, 1.0], "b")]).unwrap();
        let (u, v) = ([3.0, 0.0], [0.0, 1.0]);
        let s = [u[0] + v[0], u[1] + v[1]];
        let n = (s[0] * s[0] + s[1] * s[1]) as f64;
        assert!((p.reference[0] as f64 - s[0] / n.sqrt()).abs() < 1e-7);
        assert_eq!(p.count, 2);
        assert_eq!(p.track_ids, vec!["a", "b"]);
    }

    #[test]
    fn ranking_orders_by_distance_then_id() {
        let mut db = ProfileDb::new(7, 2);
        db.enroll_embeddings("b", &[emb(&[1.0, 0.0], "1")]).unwrap();
        db.enroll_embeddings("a", &[emb(&[1.0, 0.0], "2")]).unwrap();
        db.enroll_embeddings("c", &[emb(&[0.0, 1.0], "3")]).unwrap();
        let r = db.rank(&[2.0, 0.1]).unwrap();
        let ids: Vec<&str> = r.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(matches!(ProfileDb::new(7, 2).rank(&[1.0, 0.0]), Err(Error::NoReferences)));
    }

    #[test]
    fn foreign_fingerprint_is_rejected() {
        let mut db = ProfileDb::new(7, 2);
        let mut e = emb(&[1.0, 0.0], "x");
        e.fingerprint = 8;
        assert!(matches!(db.enroll_embeddings("s", &[e]), Err(Error::IncompatibleDb(_))));
    }

    #[test]
    fn database_round_trip_and_corruption() {
        let mut db = ProfileDb::new(7, 2);
        db.enroll_embeddings("s1", &[emb(&[0.3, 0.4], "t1"), emb(&[0.1, -0.4], "t2")]).unwrap();
        db.enroll_embeddings("s2", &[emb(&[-1.0, 0.2], "t3")]).unwrap();
        let bytes = db.encode();
        let back = ProfileDb::decode(&bytes).unwrap();
        assert_eq!(back, db);
        assert_eq!(back.encode(), bytes);
        let mut bad = bytes.clone();
        bad[12] ^= 1;
        assert!(matches!(ProfileDb::decode(&bad), Err(Error::CorruptArchive(_))));
        assert!(matches!(ProfileDb::decode(&bytes[..bytes.len() - 3]), Err(Error::CorruptArchive(_))));
    }
}
