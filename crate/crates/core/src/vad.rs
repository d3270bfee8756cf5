//! Energy-threshold voice activity detection and non-vocal trimming.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Offset from the clip's median smoothed log-energy, in dB.
    pub energy_threshold_db: f64,
    /// Frames quieter than this (dBFS) are never active.
    pub absolute_floor_db: f64,
    /// Centered moving-average length over frame energies.
    pub smoothing_frames: usize,
    pub hangover_frames: usize,
    pub min_segment_ms: f64,
    pub crossfade_ms: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            energy_threshold_db: -30.0,
            absolute_floor_db: -70.0,
            smoothing_frames: 3,
            hangover_frames: 5,
            min_segment_ms: 200.0,
            crossfade_ms: 10.0,
        }
    }
}

impl VadConfig {
    fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(Error::InvalidArgument(format!(
                "need frame_ms ({}) >= hop_ms ({}) > 0",
                self.frame_ms, self.hop_ms
            )));
        }
        Ok(())
    }
}

/// Per-frame activity decisions for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMask {
    pub active: Vec<bool>,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
    pub n_samples: usize,
}

impl ActivityMask {
    pub fn active_fraction(&self) -> f64 {
        self.active.iter().filter(|&&a| a).count() as f64 / self.active.len() as f64
    }

    /// Maximal runs of equal activity as `(first_frame, last_frame, active)`.
    pub fn runs(&self) -> Vec<(usize, usize, bool)> {
        let mut out: Vec<(usize, usize, bool)> = Vec::new();
        for (i, &a) in self.active.iter().enumerate() {
            match out.last_mut() {
                Some(run) if run.2 == a => run.1 = i,
                _ => out.push((i, i, a)),
            }
        }
        out
    }

    /// Sample regions `[start, end)` covered by active frames, merged where
    /// frames overlap.
    pub fn active_regions(&self) -> Vec<(usize, usize)> {
        let last = self.active.len().saturating_sub(1);
        let mut regions: Vec<(usize, usize)> = Vec::new();
        for (a, b, active) in self.runs() {
            if !active {
                continue;
            }
            let start = if a == 0 { 0 } else { a * self.hop };
            let end = if b == last {
                self.n_samples
            } else {
                (b * self.hop + self.frame_len).min(self.n_samples)
            };
            match regions.last_mut() {
                Some(prev) if start <= prev.1 => prev.1 = prev.1.max(end),
                _ => regions.push((start, end)),
            }
        }
        regions
    }

    /// Text export: one `start_s\tend_s\tactive` line per run.
    pub fn to_text(&self) -> String {
        let sr = self.sample_rate_hz as f64;
        let mut s = String::from("start_s\tend_s\tactive\n");
        let last = self.active.len().saturating_sub(1);
        for (a, b, active) in self.runs() {
            let start = a * self.hop;
            let end = if b == last {
                self.n_samples
            } else {
                b * self.hop + self.hop
            };
            let _ = writeln!(s, "{:.3}\t{:.3}\t{}", start as f64 / sr, end as f64 / sr, active as u8);
        }
        s
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Frame log-energies in dBFS, smoothed with a centered moving average.
fn smoothed_energy_db(samples: &[f64], frame_len: usize, hop: usize, smoothing: usize) -> Vec<f64> {
    let n_frames = (samples.len() - frame_len) / hop + 1;
    let raw: Vec<f64> = (0..n_frames)
        .map(|t| {
            let f = &samples[t * hop..t * hop + frame_len];
            let p = f.iter().map(|x| x * x).sum::<f64>() / frame_len as f64;
            10.0 * (p + 1e-12).log10()
        })
        .collect();
    let half = smoothing / 2;
    (0..n_frames)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n_frames);
            raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn detect_activity(clip: &AudioClip, cfg: &VadConfig) -> Result<ActivityMask> {
    cfg.validate()?;
    let sr = clip.sample_rate_hz as f64;
    let frame_len = (cfg.frame_ms * sr / 1000.0).round() as usize;
    let hop = ((cfg.hop_ms * sr / 1000.0).round() as usize).max(1);
    if clip.len() < frame_len || frame_len == 0 {
        return Err(Error::TooShort {
            needed: frame_len.max(1),
            got: clip.len(),
        });
    }
    let energy = smoothed_energy_db(&clip.samples, frame_len, hop, cfg.smoothing_frames.max(1));
    let threshold = median(&energy) + cfg.energy_threshold_db;
    let raw: Vec<bool> = energy
        .iter()
        .map(|&e| e > threshold && e > cfg.absolute_floor_db)
        .collect();

    // hangover: keep a run alive for a few frames after it ends
    let mut active = raw.clone();
    let mut since = usize::MAX;
    for (i, &a) in raw.iter().enumerate() {
        if a {
            since = 0;
        } else if since < cfg.hangover_frames {
            since += 1;
            active[i] = true;
        } else {
            since = usize::MAX;
        }
    }

    let min_frames = (cfg.min_segment_ms / cfg.hop_ms).ceil() as usize;
    let mut mask = ActivityMask {
        active,
        frame_len,
        hop,
        sample_rate_hz: clip.sample_rate_hz,
        n_samples: clip.len(),
    };
    for (a, b, on) in mask.runs() {
        if on && b - a + 1 < min_frames {
            mask.active[a..=b].fill(false);
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone)]
pub struct Trimmed {
    pub clip: AudioClip,
    /// Share of input samples outside every active region.
    pub removed_fraction: f64,
}

/// Concatenate the active regions of `clip`, crossfading linearly at joins.
pub fn trim_nonvocal(clip: &AudioClip, mask: &ActivityMask, crossfade_ms: f64) -> Result<Trimmed> {
    if mask.n_samples != clip.len() {
        return Err(Error::shape("trim_nonvocal mask", clip.len(), mask.n_samples));
    }
    let regions = mask.active_regions();
    if regions.is_empty() {
        return Err(Error::EmptyResult(format!("no active frames in {}", clip.source_id)));
    }
    let xf_max = (crossfade_ms * clip.sample_rate_hz as f64 / 1000.0).round() as usize;
    let mut out: Vec<f64> = Vec::with_capacity(clip.len());
    let mut kept = 0;
    for (i, &(s, e)) in regions.iter().enumerate() {
        let seg = &clip.samples[s..e];
        kept += e - s;
        if i == 0 {
            out.extend_from_slice(seg);
            continue;
        }
        let xf = xf_max.min(seg.len()).min(out.len());
        let base = out.len() - xf;
        for j in 0..xf {
            let g = (j + 1) as f64 / (xf + 1) as f64;
            out[base + j] = out[base + j] * (1.0 - g) + seg[j] * g;
        }
        out.extend_from_slice(&seg[xf..]);
    }
    Ok(Trimmed {
        clip: AudioClip {
            samples: out,
            sample_rate_hz: clip.sample_rate_hz,
            source_id: clip.source_id.clone(),
        },
        removed_fraction: 1.0 - kept as f64 / clip.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * 220.0 * i as f64 / 16000.0).sin()).collect()
    }

    fn tone_gap_tone() -> AudioClip {
        let mut s = tone(32000, 0.5);
        s.extend(vec![0.0; 32000]);
        s.extend(tone(32000, 0.5));
        AudioClip::new(s, 16000, "tgt").unwrap()
    }

    #[test]
    fn silence_is_inactive() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000, "z").unwrap();
        let mask = detect_activity(&clip, &VadConfig::default()).unwrap();
        assert!(mask.active.iter().all(|&a| !a));
        assert!(matches!(
            trim_nonvocal(&clip, &mask, 10.0),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn constant_tone_is_active_and_trim_is_identity() {
        let clip = AudioClip::new(vec![1.0; 16000], 16000, "c").unwrap();
        let mask = detect_activity(&clip, &VadConfig::default()).unwrap();
        assert!(mask.active.iter().all(|&a| a));
        let t = trim_nonvocal(&clip, &mask, 10.0).unwrap();
        assert_eq!(t.clip, clip);
        assert_eq!(t.removed_fraction, 0.0);
    }

    #[test]
    fn tone_gap_tone_keeps_two_thirds() {
        let clip = tone_gap_tone();
        let cfg = VadConfig::default();
        let mask = detect_activity(&clip, &cfg).unwrap();
        // analytic count: 600 hops span the clip, 400 of them in tone; slack is
        // one window overlap + smoothing + hangover per boundary
        let n = mask.active.len() as f64;
        let slack = (cfg.hangover_frames + cfg.smoothing_frames + 3) as f64 / n;
        assert!((mask.active_fraction() - 2.0 / 3.0).abs() <= slack, "{}", mask.active_fraction());
        let t = trim_nonvocal(&clip, &mask, 10.0).unwrap();
        let dur = t.clip.duration_s();
        assert!((dur - 4.0).abs() <= 0.1, "{dur}");
    }

    #[test]
    fn short_bursts_are_dropped() {
        let mut s = vec![0.0; 8000];
        s.extend(tone(800, 0.5)); // 50 ms
        s.extend(vec![0.0; 8000]);
        s.extend(tone(16000, 0.5));
        let clip = AudioClip::new(s, 16000, "b").unwrap();
        let mask = detect_activity(&clip, &VadConfig::default()).unwrap();
        let regions = mask.active_regions();
        assert_eq!(regions.len(), 1);
        assert!(regions[0].0 > 16000);
    }

    #[test]
    fn too_short_clip() {
        let clip = AudioClip::new(vec![0.1; 100], 16000, "s").unwrap();
        assert!(matches!(detect_activity(&clip, &VadConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn text_export_lists_runs() {
        let mask = detect_activity(&tone_gap_tone(), &VadConfig::default()).unwrap();
        let text = mask.to_text();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "start_s\tend_s\tactive");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with("\t1") && lines[2].ends_with("\t0") && lines[3].ends_with("\t1"));
    }
}
