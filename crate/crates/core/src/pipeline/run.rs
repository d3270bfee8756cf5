use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::eval::{
    compare_pipelines, confusion_at, per_algorithm_report, AlgorithmRow, ComparisonReport, ConfusionMatrix2x2,
    ScoredTrial, TrialProtocol,
};
use crate::identity::{embed_track, embed_windows, extract_windows, ProfileDb, RankedSinger, Stage1Label, TrackVerdict};
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::models::{load_row_clip, window_features, Discriminator, Embedder, WINDOW_SECONDS};
use crate::vad::VadConfig;

/// Both stages on one clip.
pub fn process_clip(
    track_id: &str,
    clip: &AudioClip,
    d: &Discriminator,
    s: &Embedder,
    db: &ProfileDb,
    cfg: &PipelineConfig,
) -> Result<TrackVerdict> {
    let windows = extract_windows(clip, cfg.windows, WINDOW_SECONDS)?
        .iter()
        .map(window_features)
        .collect::<Result<Vec<_>>>()?;
    let (score, window_scores) = d.score(&windows, cfg.aggregate)?;
    let mut verdict = TrackVerdict {
        track_id: track_id.to_string(),
        stage1_score: score,
        stage1_label: Stage1Label::Deepfake,
        window_scores,
        predicted_singer: None,
        distance_to_best: None,
        ranking: Vec::new(),
        windows_used: windows.len(),
        error: None,
    };
    if score >= cfg.tau {
        return Ok(verdict);
    }
    verdict.stage1_label = Stage1Label::Authentic;
    let ranking = db.identify_embedding(&embed_windows(track_id, &windows, s)?)?;
    verdict.predicted_singer = ranking.first().map(|r| r.0.clone());
    verdict.distance_to_best = ranking.first().map(|r| r.1);
    verdict.ranking = ranking
        .into_iter()
        .map(|(singer_id, distance)| RankedSinger { singer_id, distance })
        .collect();
    Ok(verdict)
}

/// Runs both stages over `rows`. A track that cannot be processed yields a
/// verdict carrying its error; the run fails only when every track does.
/// Verdicts are ordered by track id.
pub fn run_on_rows(
    manifest: &Manifest,
    rows: &[&ManifestRow],
    cfg: &PipelineConfig,
    d: &Discriminator,
    s: &Embedder,
    db: &ProfileDb,
) -> Result<Vec<TrackVerdict>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyResult("no tracks to process".into()));
    }
    db.check_fingerprint(s.fingerprint, s.dim())?;
    let vad = VadConfig::default();
    let mut verdicts: Vec<TrackVerdict> = rows
        .par_iter()
        .map(|row| {
            load_row_clip(manifest, row, &vad)
                .and_then(|clip| process_clip(&row.path, &clip, d, s, db, cfg))
                .unwrap_or_else(|e| {
                    log::warn!("{}: {e}", row.path);
                    TrackVerdict::failed(&row.path, &e)
                })
        })
        .collect();
    verdicts.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    if let Some(first) = verdicts.iter().find_map(|v| v.error.as_ref()) {
        if verdicts.iter().all(|v| v.error.is_some()) {
            return Err(Error::EmptyResult(format!("all {} tracks failed; first: {first}", verdicts.len())));
        }
    }
    Ok(verdicts)
}

/// Runs both stages over the manifest's test split.
pub fn run_pipeline(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    d: &Discriminator,
    s: &Embedder,
    db: &ProfileDb,
) -> Result<Vec<TrackVerdict>> {
    let rows: Vec<&ManifestRow> = manifest.split(Split::Test).collect();
    run_on_rows(manifest, &rows, cfg, d, s, db)
}

/// Builds a profile db from the authentic rows of `split`, one profile per
/// singer.
pub fn enroll_from_manifest(manifest: &Manifest, split: Split, s: &Embedder) -> Result<ProfileDb> {
    let vad = VadConfig::default();
    let rows: Vec<&ManifestRow> = manifest.split(split).filter(|r| !r.is_deepfake()).collect();
    if rows.is_empty() {
        return Err(Error::EmptyResult(format!("no authentic {split} tracks to enroll")));
    }
    let embeddings = rows
        .par_iter()
        .map(|row| {
            let clip = load_row_clip(manifest, row, &vad)?;
            let mut e = embed_track(&clip, s)?;
            e.track_id = row.path.clone();
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut db = ProfileDb::for_embedder(s);
    for singer in manifest.singers(split) {
        let mine: Vec<_> = rows
            .iter()
            .zip(&embeddings)
            .filter(|(r, _)| r.singer_id == singer)
            .map(|(_, e)| e.clone())
            .collect();
        db.enroll_embeddings(&singer, &mine)?;
    }
    Ok(db)
}

/// The verdicts a run at `tau` would have produced, derived from a run with
/// a higher threshold: tracks scoring `>= tau` lose their stage-2 results.
pub fn apply_threshold(verdicts: &[TrackVerdict], tau: f64) -> Vec<TrackVerdict> {
    verdicts
        .iter()
        .map(|v| {
            let mut v = v.clone();
            if v.error.is_none() && v.stage1_score >= tau {
                v.stage1_label = Stage1Label::Deepfake;
                v.predicted_singer = None;
                v.distance_to_best = None;
                v.ranking.clear();
            }
            v
        })
        .collect()
}

/// Identification trials of the verdicts that reached stage 2; tracks
/// rejected at stage 1 or failed contribute none.
pub fn stage2_trials(verdicts: &[TrackVerdict], db: &ProfileDb, protocol: &TrialProtocol) -> Result<Vec<ScoredTrial>> {
    let passed: Vec<TrackVerdict> = verdicts.iter().filter(|v| v.reached_stage2()).cloned().collect();
    if passed.is_empty() {
        return Ok(Vec::new());
    }
    crate::eval::identification_trials(&passed, db, protocol)
}

/// One trial per processed track: the stage-1 score against the truth
/// "is a deepfake".
pub fn detection_trials(verdicts: &[TrackVerdict], protocol: &TrialProtocol) -> Result<Vec<ScoredTrial>> {
    verdicts
        .iter()
        .filter(|v| v.error.is_none())
        .map(|v| {
            let truth = protocol
                .truth
                .get(&v.track_id)
                .ok_or_else(|| Error::Config(format!("no ground truth for track {}", v.track_id)))?;
            Ok(ScoredTrial {
                score: v.stage1_score,
                target: truth.deepfake,
                tag: truth.tag.clone(),
                dataset: protocol.dataset.clone(),
                track_id: v.track_id.clone(),
                profile_id: String::new(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tau: f64,
    /// Stage 1 at `tau` against deepfake truth, all tracks.
    pub detection: ConfusionMatrix2x2,
    /// Top-1 accuracy of stage 2 over authentic tracks, without filtering.
    pub authentic_top1: Option<f64>,
    pub comparison: ComparisonReport,
    /// Identifier alone, per generation tag.
    pub per_algorithm: Vec<AlgorithmRow>,
}

/// Compares the identifier alone with the cascade. `verdicts` must come from
/// a pass-all run (`tau = 1`) so that every track has a ranking; the cascade
/// is obtained by re-thresholding at `tau`.
pub fn evaluate_verdicts(
    verdicts: &[TrackVerdict],
    db: &ProfileDb,
    protocol: &TrialProtocol,
    tau: f64,
) -> Result<(Evaluation, Vec<ScoredTrial>, Vec<ScoredTrial>)> {
    let ok: Vec<&TrackVerdict> = verdicts.iter().filter(|v| v.error.is_none()).collect();
    if let Some(v) = ok.iter().find(|v| !v.reached_stage2()) {
        return Err(Error::InvalidArgument(format!(
            "{} has no stage-2 result; evaluate a pass-all run",
            v.track_id
        )));
    }
    let trials_s = stage2_trials(verdicts, db, protocol)?;
    let filtered = apply_threshold(verdicts, tau);
    let trials_ds = stage2_trials(&filtered, db, protocol)?;
    let detection = confusion_at(&detection_trials(verdicts, protocol)?, tau);
    let authentic: Vec<bool> = ok
        .iter()
        .filter_map(|v| {
            let t = protocol.truth.get(&v.track_id)?;
            (!t.deepfake).then(|| v.predicted_singer.as_deref() == Some(t.singer_id.as_str()))
        })
        .collect();
    let authentic_top1 =
        (!authentic.is_empty()).then(|| authentic.iter().filter(|&&b| b).count() as f64 / authentic.len() as f64);
    let evaluation = Evaluation {
        tau,
        detection,
        authentic_top1,
        comparison: compare_pipelines(&trials_s, &trials_ds)?,
        per_algorithm: per_algorithm_report(&trials_s),
    };
    Ok((evaluation, trials_s, trials_ds))
}

/// Track ids of the verdicts that reached stage 2.
pub fn stage2_tracks(verdicts: &[TrackVerdict]) -> BTreeSet<String> {
    verdicts.iter().filter(|v| v.reached_stage2()).map(|v| v.track_id.clone()).collect()
}

/// One JSON object per line.
pub fn verdicts_to_jsonl(verdicts: &[TrackVerdict]) -> String {
    let mut out = String::new();
    for v in verdicts {
        out.push_str(&serde_json::to_string(v).expect("verdicts serialise"));
        out.push('\n');
    }
    out
}

pub fn verdicts_from_jsonl(text: &str) -> Result<Vec<TrackVerdict>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("verdict line {}: {e}", i + 1))))
        .collect()
}

pub fn save_verdicts(verdicts: &[TrackVerdict], path: &Path) -> Result<()> {
    crate::io::atomic_write(path, verdicts_to_jsonl(verdicts).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(id: &str, score: f64) -> TrackVerdict {
        TrackVerdict {
            track_id: id.into(),
            stage1_score: score,
            stage1_label: Stage1Label::Authentic,
            window_scores: vec![score],
            predicted_singer: Some("a".into()),
            distance_to_best: Some(0.1),
            ranking: vec![RankedSinger { singer_id: "a".into(), distance: 0.1 }],
            windows_used: 1,
            error: None,
        }
    }

    #[test]
    fn threshold_strips_stage2() {
        let v = apply_threshold(&[verdict("x", 0.2), verdict("y", 0.7)], 0.5);
        assert!(v[0].reached_stage2());
        assert!(!v[1].reached_stage2());
        assert_eq!(v[1].stage1_label, Stage1Label::Deepfake);
        assert_eq!(stage2_tracks(&v).len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let vs = vec![verdict("x", 0.125), TrackVerdict::failed("z", &Error::EmptyAudio)];
        let text = verdicts_to_jsonl(&vs);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(verdicts_from_jsonl(&text).unwrap(), vs);
    }
}
