//! Verification-style metrics over scored trials: ROC, AUC, EER, confusion
//! matrices, per-algorithm breakdowns, and the one-stage vs two-stage
//! comparison.
//!
//! Higher scores mean "more likely target". A trial is predicted positive
//! at threshold `t` iff `score >= t`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{ProfileDb, TrackVerdict};
use crate::manifest::{Manifest, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub score: f64,
    pub target: bool,
    /// Generation algorithm, or `REAL` for authentic audio.
    pub tag: String,
    pub dataset: String,
    pub track_id: String,
    pub profile_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From the empty prediction (threshold `+inf`) to all-positive, one
    /// point per distinct score.
    pub points: Vec<OperatingPoint>,
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
}

/// Integer operating point: true and false positives at or above a score.
struct Counts {
    threshold: f64,
    tp: u64,
    fp: u64,
}

fn class_sizes(trials: &[ScoredTrial]) -> Result<(u64, u64)> {
    if let Some(t) = trials.iter().find(|t| !t.score.is_finite()) {
        return Err(Error::DegenerateTrials(format!("non-finite score in trial {}/{}", t.track_id, t.profile_id)));
    }
    let p = trials.iter().filter(|t| t.target).count() as u64;
    let n = trials.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::DegenerateTrials(format!("{p} target and {n} nontarget trials; both are required")));
    }
    Ok((p, n))
}

fn sweep(trials: &[ScoredTrial]) -> Vec<Counts> {
    let mut order: Vec<&ScoredTrial> = trials.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = vec![Counts { threshold: f64::INFINITY, tp: 0, fp: 0 }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            if order[i].target {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(Counts { threshold: s, tp, fp });
    }
    out
}

pub fn roc(trials: &[ScoredTrial]) -> Result<RocCurve> {
    let (p, n) = class_sizes(trials)?;
    let counts = sweep(trials);
    // Trapezoid area in units of 1/(2PN): each step adds dFP * (TP_prev + TP).
    let mut area: u128 = 0;
    for w in counts.windows(2) {
        area += (w[1].fp - w[0].fp) as u128 * (w[0].tp + w[1].tp) as u128;
    }
    let auc = area as f64 / (2 * p as u128 * n as u128) as f64;

    // FPR - FNR scaled by P*N, exact in integers.
    let gap = |c: &Counts| c.fp as i128 * p as i128 - (p - c.tp) as i128 * n as i128;
    let fpr = |c: &Counts| c.fp as f64 / n as f64;
    let cross = counts.iter().position(|c| gap(c) >= 0).expect("final point has FPR 1, FNR 0");
    let eer = if gap(&counts[cross]) == 0 {
        fpr(&counts[cross])
    } else {
        let (a, b) = (&counts[cross - 1], &counts[cross]);
        let t = -gap(a) as f64 / (gap(b) - gap(a)) as f64;
        fpr(a) + t * (fpr(b) - fpr(a))
    };
    let eer_threshold = counts[1..]
        .iter()
        .min_by_key(|c| gap(c).unsigned_abs())
        .map(|c| c.threshold)
        .expect("at least one scored point");

    let points = counts
        .iter()
        .map(|c| OperatingPoint { threshold: c.threshold, fpr: fpr(c), tpr: c.tp as f64 / p as f64 })
        .collect();
    Ok(RocCurve { points, auc, eer, eer_threshold })
}

/// Equal error rate and the threshold of the operating point closest to it.
pub fn eer(trials: &[ScoredTrial]) -> Result<(f64, f64)> {
    let r = roc(trials)?;
    Ok((r.eer, r.eer_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix2x2 {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix2x2 {
    /// `FP / (FP + TN)`, absent when there are no negatives.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `FN / (FN + TP)`, absent when there are no positives.
    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.fn_ + self.tp)
    }

    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.fp + self.tn)
    }

    /// Mean of TPR and TNR, when both are defined.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.tpr()? + self.tnr()?) / 2.0)
    }
}

pub fn confusion_at(trials: &[ScoredTrial], threshold: f64) -> ConfusionMatrix2x2 {
    let mut m = ConfusionMatrix2x2 { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for t in trials {
        match (t.score >= threshold, t.target) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    m
}

/// Ground truth for the tracks of one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTruth {
    pub singer_id: String,
    pub tag: String,
    pub deepfake: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialProtocol {
    pub dataset: String,
    pub truth: BTreeMap<String, TrackTruth>,
}

impl TrialProtocol {
    /// Truth for every row of `split`, keyed by manifest path.
    pub fn from_manifest(manifest: &Manifest, split: Split, dataset: &str) -> Self {
        let truth = manifest
            .split(split)
            .map(|r| {
                (
                    r.path.clone(),
                    TrackTruth { singer_id: r.singer_id.clone(), tag: r.tag().to_string(), deepfake: r.is_deepfake() },
                )
            })
            .collect();
        Self { dataset: dataset.to_string(), truth }
    }
}

/// One trial per (track, enrolled profile): score is the negated cosine
/// distance; a target iff the track's singer is the profile's singer.
pub fn identification_trials(
    verdicts: &[TrackVerdict],
    db: &ProfileDb,
    protocol: &TrialProtocol,
) -> Result<Vec<ScoredTrial>> {
    if db.is_empty() {
        return Err(Error::NoReferences);
    }
    let mut out = Vec::with_capacity(verdicts.len() * db.len());
    for v in verdicts {
        let truth = protocol
            .truth
            .get(&v.track_id)
            .ok_or_else(|| Error::Config(format!("no ground truth for track {}", v.track_id)))?;
        if !v.reached_stage2() {
            return Err(Error::MissingEmbedding(v.track_id.clone()));
        }
        for profile in db.profiles() {
            let d = v
                .ranking
                .iter()
                .find(|r| r.singer_id == profile.singer_id)
                .ok_or_else(|| Error::MissingEmbedding(format!("{} vs profile {}", v.track_id, profile.singer_id)))?
                .distance;
            out.push(ScoredTrial {
                score: -d,
                target: truth.singer_id == profile.singer_id,
                tag: truth.tag.clone(),
                dataset: protocol.dataset.clone(),
                track_id: v.track_id.clone(),
                profile_id: profile.singer_id.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub eer: f64,
    pub auc: f64,
    pub eer_threshold: f64,
    pub n_trials: usize,
    pub n_targets: usize,
}

pub fn metrics(trials: &[ScoredTrial]) -> Result<Metrics> {
    let r = roc(trials)?;
    Ok(Metrics {
        eer: r.eer,
        auc: r.auc,
        eer_threshold: r.eer_threshold,
        n_trials: trials.len(),
        n_targets: trials.iter().filter(|t| t.target).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub tag: String,
    pub n_trials: usize,
    /// Absent when the group lacks targets or nontargets.
    pub metrics: Option<Metrics>,
    pub note: Option<String>,
}

/// One row per tag, in tag order.
pub fn per_algorithm_report(trials: &[ScoredTrial]) -> Vec<AlgorithmRow> {
    let mut groups: BTreeMap<&str, Vec<ScoredTrial>> = BTreeMap::new();
    for t in trials {
        groups.entry(t.tag.as_str()).or_default().push(t.clone());
    }
    groups
        .into_iter()
        .map(|(tag, group)| {
            let (metrics, note) = match self::metrics(&group) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(format!("not computable: {e}"))),
            };
            AlgorithmRow { tag: tag.to_string(), n_trials: group.len(), metrics, note }
        })
        .collect()
}

pub fn trials_with_tag<'a>(trials: &'a [ScoredTrial], tag: &'a str) -> impl Iterator<Item = &'a ScoredTrial> {
    trials.iter().filter(move |t| t.tag == tag)
}

/// Trials whose track is in `tracks`.
pub fn restrict_to_tracks(trials: &[ScoredTrial], tracks: &BTreeSet<String>) -> Vec<ScoredTrial> {
    trials.iter().filter(|t| tracks.contains(&t.track_id)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub single_stage: Metrics,
    pub two_stage: Metrics,
    /// Two-stage minus single-stage.
    pub delta_eer: f64,
    pub delta_auc: f64,
}

/// Metrics of the identifier alone against the identifier restricted to
/// tracks that passed the discriminator.
pub fn compare_pipelines(trials_s: &[ScoredTrial], trials_ds: &[ScoredTrial]) -> Result<ComparisonReport> {
    if trials_ds.is_empty() {
        return Err(Error::NotComputable(
            "no trials survive stage 1; the discriminator rejected every track".into(),
        ));
    }
    let single_stage = metrics(trials_s)?;
    let two_stage = metrics(trials_ds)?;
    Ok(ComparisonReport {
        delta_eer: two_stage.eer - single_stage.eer,
        delta_auc: two_stage.auc - single_stage.auc,
        single_stage,
        two_stage,
    })
}

impl ComparisonReport {
    /// Tab-separated rows, EER in percent as conventionally reported.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("condition\teer_percent\tauc\tn_trials\n");
        for (name, m) in [("S", &self.single_stage), ("D+S", &self.two_stage)] {
            let _ = writeln!(out, "{name}\t{:.2}\t{:.4}\t{}", m.eer * 100.0, m.auc, m.n_trials);
        }
        let _ = writeln!(out, "delta\t{:.2}\t{:.4}\t", self.delta_eer * 100.0, self.delta_auc);
        out
    }
}

pub fn algorithm_report_tsv(rows: &[AlgorithmRow]) -> String {
    let mut out = String::from("tag\teer_percent\tauc\tn_trials\n");
    for r in rows {
        match &r.metrics {
            Some(m) => {
                let _ = writeln!(out, "{}\t{:.2}\t{:.4}\t{}", r.tag, m.eer * 100.0, m.auc, r.n_trials);
            }
            None => {
                let _ = writeln!(out, "{}\tNA\tNA\t{}", r.tag, r.n_trials);
            }
        }
    }
    out
}

pub const TRIALS_HEADER: &str = "score\tlabel\ttag\tdataset\ttrack_id\tprofile_id";

/// Delimited trial list; scores are written with round-trip precision.
pub fn trials_to_text(trials: &[ScoredTrial]) -> String {
    let mut out = String::from(TRIALS_HEADER);
    out.push('\n');
    for t in trials {
        let label = if t.target { "target" } else { "nontarget" };
        let _ = writeln!(out, "{}\t{label}\t{}\t{}\t{}\t{}", t.score, t.tag, t.dataset, t.track_id, t.profile_id);
    }
    out
}

/// Parses [`trials_to_text`] output. Only `score` and `label` are required;
/// missing tag columns default to empty.
pub fn trials_from_text(text: &str) -> Result<Vec<ScoredTrial>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config("trials file is empty".into()))?
        .split('\t')
        .collect();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (si, li) = col("score")
        .zip(col("label"))
        .ok_or_else(|| Error::Config("trials header needs score and label columns".into()))?;
    let (ti, di, ki, pi) = (col("tag"), col("dataset"), col("track_id"), col("profile_id"));
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let get = |c: Option<usize>| c.and_then(|c| f.get(c)).map(|s| s.trim().to_string()).unwrap_or_default();
            let score: f64 = f
                .get(si)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("trials line {}: bad score", i + 2)))?;
            let target = match f.get(li).map(|s| s.trim()) {
                Some("target") | Some("1") => true,
                Some("nontarget") | Some("0") => false,
                other => return Err(Error::Config(format!("trials line {}: bad label {other:?}", i + 2))),
            };
            Ok(ScoredTrial {
                score,
                target,
                tag: get(ti),
                dataset: get(di),
                track_id: get(ki),
                profile_id: get(pi),
            })
        })
        .collect()
}

pub fn load_trials(path: &Path) -> Result<Vec<ScoredTrial>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trials_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(targets: &[f64], nontargets: &[f64]) -> Vec<ScoredTrial> {
        let mk = |s: f64, target: bool| ScoredTrial {
            score: s,
            target,
            tag: "T".into(),
            dataset: "d".into(),
            track_id: format!("{s}"),
            profile_id: "p".into(),
        };
        targets.iter().map(|&s| mk(s, true)).chain(nontargets.iter().map(|&s| mk(s, false))).collect()
    }

    #[test]
    fn perfect_separation() {
        let r = roc(&trials(&[0.9, 0.8], &[0.2, 0.1])).unwrap();
        assert_eq!((r.auc, r.eer), (1.0, 0.0));
    }

    #[test]
    fn inverted_scorer_has_full_error() {
        let r = roc(&trials(&[0.1, 0.2], &[0.8, 0.9])).unwrap();
        assert_eq!((r.auc, r.eer), (0.0, 1.0));
    }

    #[test]
    fn constant_scores_are_uninformative() {
        let r = roc(&trials(&[0.5; 3], &[0.5; 4])).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.eer, 0.5);
        assert_eq!(r.points.len(), 2);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(roc(&trials(&[0.1], &[])), Err(Error::DegenerateTrials(_))));
    }

    #[test]
    fn curve_is_monotone() {
        let r = roc(&trials(&[0.3, 0.9, 0.5, 0.5], &[0.5, 0.1, 0.7])).unwrap();
        for w in r.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        assert_eq!(r.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn six_trial_confusion_by_hand() {
        let t = trials(&[0.9, 0.6, 0.4], &[0.7, 0.3, 0.5]);
        let m = confusion_at(&t, 0.5);
        // targets: 0.9 and 0.6 pass, 0.4 misses; nontargets: 0.7 and 0.5 pass, 0.3 rejected.
        assert_eq!(m, ConfusionMatrix2x2 { tp: 2, fp: 2, tn: 1, fn_: 1 });
        assert_eq!(m.fpr(), Some(2.0 / 3.0));
        let low = confusion_at(&t, 0.0);
        assert_eq!((low.fn_, low.tn), (0, 0));
        let high = confusion_at(&t, 1.0);
        assert_eq!((high.tp, high.fp), (0, 0));
        assert_eq!(confusion_at(&trials(&[0.2], &[]), 0.5).fpr(), None);
    }

    #[test]
    fn trials_text_round_trip() {
        let t = trials(&[0.1 + 0.2, -1.0 / 3.0], &[1e-300]);
        assert_eq!(trials_from_text(&trials_to_text(&t)).unwrap(), t);
    }

    #[test]
    fn empty_filtered_set_is_not_computable() {
        let t = trials(&[0.9], &[0.1]);
        assert!(matches!(compare_pipelines(&t, &[]), Err(Error::NotComputable(_))));
        let same = compare_pipelines(&t, &t).unwrap();
        assert_eq!((same.delta_eer, same.delta_auc), (0.0, 0.0));
    }
}
