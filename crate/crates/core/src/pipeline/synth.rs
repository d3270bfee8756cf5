//! Seeded synthetic singing corpus.
//!
//! Each singer is a source-filter voice: a harmonic source whose pitch
//! follows a stepwise melody with glides and vibrato, shaped by a spectral
//! tilt and four formant resonances. Singers differ in pitch range, formant
//! positions, tilt and vibrato, each drawn from its own stratified grid.
//!
//! Fakes come in two tiers. High-quality fakes re-render the target voice
//! with mildly perturbed parameters. Low-quality fakes keep only the
//! melody's rhythm: pitch is flat within notes and unrelated to the target,
//! harmonic amplitudes are scrambled per note, and the result is crushed to
//! 4 bits.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{encode_pcm16, mean_power, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{Authenticity, Manifest, ManifestRow, Split, Variant};

pub const HQ_TAG: &str = "SYN-HQ";
pub const LQ_TAG: &str = "SYN-LQ";

const SR: f64 = TARGET_SAMPLE_RATE as f64;
const MAX_HARMONIC_HZ: f64 = 5000.0;
/// Band limit of the synthetic vocoder shared by both fake tiers.
const VOCODER_CUTOFF_HZ: f64 = 3600.0;
/// Breath noise the vocoder keeps, relative to the voice's own.
const VOCODER_BREATH: f64 = 0.1;
/// Amplitude-update block, in samples.
const BLOCK: usize = 64;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub n_singers: usize,
    /// Authentic tracks per singer, split 70/10/20 into train/val/test.
    pub tracks_per_singer: usize,
    pub duration_s: f64,
    pub silence_fraction: f64,
    /// High-quality fakes per singer in train, val and test.
    pub hq_train_per_singer: usize,
    pub hq_val_per_singer: usize,
    pub hq_test_per_singer: usize,
    /// Low-quality fakes per singer in train, val and test.
    pub lq_train_per_singer: usize,
    pub lq_val_per_singer: usize,
    pub lq_test_per_singer: usize,
    /// Relative parameter perturbation of high-quality fakes.
    pub hq_perturbation: f64,
    /// Fraction of low-quality fake timbre that is scrambled (1 = all).
    pub lq_perturbation: f64,
    /// Vocal-to-background power ratio of full mixes.
    pub bed_snr_db: f64,
    pub n_beds: usize,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            n_singers: 8,
            tracks_per_singer: 20,
            duration_s: 16.0,
            silence_fraction: 0.3,
            hq_train_per_singer: 3,
            hq_val_per_singer: 1,
            hq_test_per_singer: 4,
            lq_train_per_singer: 3,
            lq_val_per_singer: 1,
            lq_test_per_singer: 4,
            hq_perturbation: 0.05,
            lq_perturbation: 1.0,
            bed_snr_db: 12.0,
            n_beds: 4,
            seed: 0,
        }
    }
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_singers < 2 {
            return bad("synthetic corpus needs at least 2 singers");
        }
        if self.tracks_per_singer < 3 {
            return bad("need at least 3 tracks per singer for train/val/test");
        }
        if !(self.duration_s >= 10.0) {
            return bad("tracks must last at least one 10 s window");
        }
        if !(0.0..0.9).contains(&self.silence_fraction) {
            return bad("silence_fraction must lie in [0, 0.9)");
        }
        if !(self.hq_perturbation >= 0.0 && self.hq_perturbation < self.lq_perturbation && self.lq_perturbation <= 1.0) {
            return bad("fake tiers need 0 <= hq_perturbation < lq_perturbation <= 1");
        }
        if self.n_beds == 0 {
            return bad("n_beds must be positive");
        }
        Ok(())
    }

    /// (train, val, test) authentic tracks per singer.
    pub fn authentic_split(&self) -> (usize, usize, usize) {
        let n = self.tracks_per_singer;
        let val = ((n as f64 * 0.1).round() as usize).max(1);
        let test = ((n as f64 * 0.2).round() as usize).max(1);
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
    pub gain: f64,
}

/// Parameters of one synthetic singer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub f0_hz: f64,
    pub formants: [Formant; 4],
    pub tilt_db_per_octave: f64,
    pub vibrato_hz: f64,
    pub vibrato_semitones: f64,
    pub breath: f64,
}

/// `n` values stratified over `[lo, hi]`, jittered within their stratum and
/// shuffled.
fn stratified(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + rng.random_range(0.25..0.75)) / n as f64)
        .collect();
    v.shuffle(rng);
    v
}

pub fn voices(n: usize, rng: &mut impl Rng) -> Vec<Voice> {
    let f0 = stratified(n, 0.0, 1.5, rng);
    let f1 = stratified(n, 380.0, 850.0, rng);
    let f2 = stratified(n, 950.0, 2200.0, rng);
    let f3 = stratified(n, 2300.0, 3200.0, rng);
    let f4 = stratified(n, 3300.0, 4300.0, rng);
    let tilt = stratified(n, -11.0, -4.0, rng);
    let vib_rate = stratified(n, 4.5, 6.8, rng);
    let vib_depth = stratified(n, 0.15, 0.6, rng);
    let breath = stratified(n, 0.005, 0.03, rng);
    (0..n)
        .map(|i| Voice {
            f0_hz: 120.0 * 2f64.powf(f0[i]),
            formants: [
                Formant { freq_hz: f1[i], bandwidth_hz: 90.0, gain: 1.0 },
                Formant { freq_hz: f2[i], bandwidth_hz: 120.0, gain: 0.6 },
                Formant { freq_hz: f3[i], bandwidth_hz: 180.0, gain: 0.35 },
                Formant { freq_hz: f4[i], bandwidth_hz: 250.0, gain: 0.2 },
            ],
            tilt_db_per_octave: tilt[i],
            vibrato_hz: vib_rate[i],
            vibrato_semitones: vib_depth[i],
            breath: breath[i],
        })
        .collect()
}

impl Voice {
    /// Linear magnitude of the vocal-tract filter at `f`, with formants
    /// scaled by `vowel`.
    pub fn envelope(&self, f: f64, vowel: (f64, f64)) -> f64 {
        let tilt = 10f64.powf(self.tilt_db_per_octave * (f.max(1.0) / 200.0).log2() / 20.0);
        let res: f64 = self
            .formants
            .iter()
            .enumerate()
            .map(|(k, fm)| {
                let centre = fm.freq_hz
                    * match k {
                        0 => vowel.0,
                        1 => vowel.1,
                        _ => 1.0,
                    };
                fm.gain / (1.0 + ((f - centre) / (fm.bandwidth_hz / 2.0)).powi(2))
            })
            .sum();
        tilt * (res + 0.03)
    }

    /// A copy with every continuous parameter scaled by `1 ± amount`.
    pub fn perturbed(&self, amount: f64, rng: &mut impl Rng) -> Voice {
        let mut j = |v: f64| v * (1.0 + rng.random_range(-amount..=amount));
        let mut out = self.clone();
        out.f0_hz = j(out.f0_hz);
        for f in &mut out.formants {
            f.freq_hz = j(f.freq_hz);
            f.bandwidth_hz = j(f.bandwidth_hz);
        }
        out.tilt_db_per_octave = j(out.tilt_db_per_octave);
        out.vibrato_hz = j(out.vibrato_hz);
        out.vibrato_semitones = j(out.vibrato_semitones);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Authentic,
    HighQuality,
    LowQuality,
}

struct Note {
    start: usize,
    len: usize,
    semitones: f64,
    vowel: (f64, f64),
}

const SCALE: [f64; 9] = [-5.0, -3.0, -2.0, 0.0, 2.0, 3.0, 5.0, 7.0, 9.0];
const VOWELS: [(f64, f64); 5] = [(1.0, 1.0), (0.8, 1.25), (1.15, 0.85), (0.9, 0.75), (1.1, 1.1)];

/// Phrases of notes separated by silences so that roughly
/// `silence_fraction` of the track is silent. Returns notes and active
/// sample ranges.
fn score(n_samples: usize, silence_fraction: f64, rng: &mut impl Rng) -> (Vec<Note>, Vec<(usize, usize)>) {
    let active_target = ((1.0 - silence_fraction) * n_samples as f64) as usize;
    let mut phrases = Vec::new();
    let mut filled = 0;
    while filled < active_target {
        let len = ((rng.random_range(1.5..3.5) * SR) as usize).min(active_target - filled);
        if len < (0.3 * SR) as usize {
            break;
        }
        phrases.push(len);
        filled += len;
    }
    let silence = n_samples - filled;
    let weights: Vec<f64> = (0..=phrases.len()).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let gaps: Vec<usize> = weights.iter().map(|w| (silence as f64 * w / wsum) as usize).collect();

    let mut notes = Vec::new();
    let mut active = Vec::new();
    let mut pos = gaps[0];
    for (p, &len) in phrases.iter().enumerate() {
        active.push((pos, pos + len));
        let mut t = 0;
        while t < len {
            let nlen = ((rng.random_range(0.25..0.7) * SR) as usize).min(len - t);
            notes.push(Note {
                start: pos + t,
                len: nlen,
                semitones: SCALE[rng.random_range(0..SCALE.len())],
                vowel: VOWELS[rng.random_range(0..VOWELS.len())],
            });
            t += nlen;
        }
        pos += len + gaps[p + 1];
    }
    (notes, active)
}

/// Raised-cosine fade of `ramp` samples at both ends of a segment.
fn fade(i: usize, len: usize, ramp: usize) -> f64 {
    let e = i.min(len - 1 - i.min(len - 1));
    if e >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * e as f64 / ramp as f64).cos()
    }
}

pub struct RenderedVocals {
    pub samples: Vec<f64>,
    /// Sample ranges where the voice sounds.
    pub active: Vec<(usize, usize)>,
}

/// Renders one a cappella track of `voice` at peak amplitude 0.5. Both fake
/// tiers pass through a vocoder that is band-limited and nearly breathless.
/// `scramble` in [0, 1] blends low-quality harmonic amplitudes from the
/// voice's envelope (0) to random (1); other tiers ignore it.
pub fn render_vocals(
    voice: &Voice,
    tier: Tier,
    duration_s: f64,
    silence_fraction: f64,
    scramble: f64,
    rng: &mut impl Rng,
) -> RenderedVocals {
    let n = (duration_s * SR).round() as usize;
    let (notes, active) = score(n, silence_fraction, rng);
    let mut out = vec![0.0; n];
    let lq = tier == Tier::LowQuality;
    let fake = tier != Tier::Authentic;
    let (cutoff, breath_gain) = if fake { (VOCODER_CUTOFF_HZ, VOCODER_BREATH) } else { (SR * 0.45, 1.0) };
    let lq_f0 = 120.0 * 2f64.powf(rng.random_range(0.0..1.5));
    let glide = (0.03 * SR) as usize;
    let mut phase = rng.random_range(0.0..TAU);
    let mut prev_f0 = voice.f0_hz;
    let vib_phase = rng.random_range(0.0..TAU);
    for (idx, note) in notes.iter().enumerate() {
        let base = if lq { lq_f0 } else { voice.f0_hz };
        let target = base * 2f64.powf(note.semitones / 12.0);
        let contiguous = idx > 0 && notes[idx - 1].start + notes[idx - 1].len == note.start;
        let from = if contiguous && !lq { prev_f0 } else { target };
        let phrase_end = active.iter().find(|(a, b)| note.start >= *a && note.start < *b).map(|r| r.1).unwrap_or(n);
        let phrase_start = active.iter().find(|(a, b)| note.start >= *a && note.start < *b).map(|r| r.0).unwrap_or(0);
        let n_harm = (MAX_HARMONIC_HZ / target).floor().max(1.0) as usize;
        let scrambled: Vec<f64> = (0..n_harm)
            .map(|_| 10f64.powf(rng.random_range(-30.0..0.0) / 20.0))
            .collect();
        let mut amps = vec![0.0; n_harm];
        for i in 0..note.len {
            let t = note.start + i;
            let mut f0 = if i < glide { from + (target - from) * i as f64 / glide as f64 } else { target };
            if !lq {
                let vib = voice.vibrato_semitones * (TAU * voice.vibrato_hz * t as f64 / SR + vib_phase).sin();
                f0 *= 2f64.powf(vib / 12.0);
            }
            if i % BLOCK == 0 {
                for (h, a) in amps.iter_mut().enumerate() {
                    let fh = (h + 1) as f64 * f0;
                    *a = if fh > cutoff {
                        0.0
                    } else if lq {
                        scrambled[h].powf(scramble) * voice.envelope(fh, note.vowel).powf(1.0 - scramble)
                    } else {
                        voice.envelope(fh, note.vowel)
                    };
                }
            }
            phase = (phase + TAU * f0 / SR) % TAU;
            // sin(h * phase) by complex rotation.
            let (s1, c1) = phase.sin_cos();
            let (mut s, mut c) = (s1, c1);
            let mut acc = 0.0;
            for &a in &amps {
                acc += a * s;
                let ns = s * c1 + c * s1;
                c = c * c1 - s * s1;
                s = ns;
            }
            let env = fade(t - phrase_start, phrase_end - phrase_start, (0.03 * SR) as usize);
            let breath: f64 = StandardNormal.sample(rng);
            out[t] = env * (acc + breath_gain * voice.breath * breath);
            prev_f0 = f0;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    if lq {
        out.iter_mut().for_each(|v| *v = (*v * 8.0).round() / 8.0);
    }
    for v in &mut out {
        let floor: f64 = StandardNormal.sample(rng);
        *v += 1e-4 * floor;
    }
    RenderedVocals { samples: out, active }
}

/// Low-register accompaniment: sustained bass chords with soft kicks.
pub fn render_bed(duration_s: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = (duration_s * SR).round() as usize;
    let mut out = vec![0.0; n];
    let chord_len = (2.0 * SR) as usize;
    let mut start = 0;
    while start < n {
        let len = chord_len.min(n - start);
        let root = 55.0 * 2f64.powf(rng.random_range(0..12) as f64 / 12.0);
        for ratio in [1.0, 1.5, 2.0, 2.52] {
            let f = root * ratio;
            let ph = rng.random_range(0.0..TAU);
            for i in 0..len {
                let t = (start + i) as f64 / SR;
                let env = fade(i, len, (0.05 * SR) as usize);
                out[start + i] += 0.2 * env * ((TAU * f * t + ph).sin() + 0.3 * (2.0 * (TAU * f * t + ph)).sin());
            }
        }
        let beat = (0.5 * SR) as usize;
        let mut k = 0;
        while k < len {
            for i in 0..(0.15 * SR) as usize {
                if k + i >= len {
                    break;
                }
                let tt = i as f64 / SR;
                out[start + k + i] += 0.5 * (-tt * 30.0).exp() * (TAU * 60.0 * tt).sin();
            }
            k += beat;
        }
        start += len;
    }
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    out.iter_mut().for_each(|v| *v *= PEAK / peak);
    out
}

/// `vocals` plus `bed` (looped from `offset`) at `snr_db` vocal-to-bed power.
pub fn mix(vocals: &[f64], bed: &[f64], offset: usize, snr_db: f64) -> Vec<f64> {
    let looped: Vec<f64> = (0..vocals.len()).map(|i| bed[(offset + i) % bed.len()]).collect();
    let g = (mean_power(vocals) / (mean_power(&looped) * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut out: Vec<f64> = vocals.iter().zip(&looped).map(|(v, b)| v + g * b).collect();
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.99 {
        out.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
    out
}

pub fn singer_id(i: usize) -> String {
    format!("singer_{i:02}")
}

struct Job {
    row: ManifestRow,
    singer: usize,
    tier: Tier,
    seed: u64,
}

/// Writes the corpus (WAVs, background beds under `assets/`, and
/// `manifest.tsv`) into `out_dir` and returns the manifest.
pub fn generate_synth_corpus(spec: &SynthCorpusSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("assets")).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let voices = voices(spec.n_singers, &mut rng);

    let beds: Vec<Vec<f64>> = (0..spec.n_beds).map(|_| render_bed(spec.duration_s, &mut rng)).collect();
    for (i, bed) in beds.iter().enumerate() {
        write_pcm16(&out_dir.join(format!("assets/bed_{i:02}.wav")), bed)?;
    }

    let (n_train, n_val, _) = spec.authentic_split();
    let mut jobs = Vec::new();
    for s in 0..spec.n_singers {
        let sid = singer_id(s);
        let mut add = |name: String, tier: Tier, split: Split, rng: &mut ChaCha8Rng| {
            let variant = if split == Split::Test { Variant::Fullmix } else { Variant::Vocals };
            let (authenticity, algorithm) = match tier {
                Tier::Authentic => (Authenticity::Authentic, None),
                Tier::HighQuality => (Authenticity::Deepfake, Some(HQ_TAG.to_string())),
                Tier::LowQuality => (Authenticity::Deepfake, Some(LQ_TAG.to_string())),
            };
            jobs.push(Job {
                row: ManifestRow {
                    path: format!("audio/{sid}/{name}_{variant}.wav"),
                    singer_id: sid.clone(),
                    authenticity,
                    algorithm,
                    split,
                    variant,
                },
                singer: s,
                tier,
                seed: rng.random(),
            });
        };
        for k in 0..spec.tracks_per_singer {
            let split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            add(format!("real_{k:02}"), Tier::Authentic, split, &mut rng);
        }
        let tiers = [
            ("hq", Tier::HighQuality, [spec.hq_train_per_singer, spec.hq_val_per_singer, spec.hq_test_per_singer]),
            ("lq", Tier::LowQuality, [spec.lq_train_per_singer, spec.lq_val_per_singer, spec.lq_test_per_singer]),
        ];
        for (prefix, tier, counts) in tiers {
            let mut k = 0;
            for (count, split) in counts.into_iter().zip([Split::Train, Split::Val, Split::Test]) {
                for _ in 0..count {
                    add(format!("{prefix}_{k:02}"), tier, split, &mut rng);
                    k += 1;
                }
            }
        }
    }
    for s in 0..spec.n_singers {
        let dir = out_dir.join("audio").join(singer_id(s));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    jobs.par_iter()
        .map(|job| {
            let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
            let voice = match job.tier {
                Tier::HighQuality => voices[job.singer].perturbed(spec.hq_perturbation, &mut rng),
                _ => voices[job.singer].clone(),
            };
            let vocals = render_vocals(&voice, job.tier, spec.duration_s, spec.silence_fraction, spec.lq_perturbation, &mut rng);
            let samples = match job.row.variant {
                Variant::Vocals => vocals.samples,
                Variant::Fullmix => {
                    let bed = rng.random_range(0..beds.len());
                    let offset = rng.random_range(0..beds[bed].len());
                    mix(&vocals.samples, &beds[bed], offset, spec.bed_snr_db)
                }
            };
            write_pcm16(&out_dir.join(&job.row.path), &samples)
        })
        .collect::<Result<Vec<()>>>()?;

    let manifest = Manifest::new(jobs.into_iter().map(|j| j.row).collect(), out_dir)?;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

fn write_pcm16(path: &Path, samples: &[f64]) -> Result<()> {
    crate::io::atomic_write(path, &encode_pcm16(&[samples], TARGET_SAMPLE_RATE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocals_respect_silence_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = voices(3, &mut rng);
        let r = render_vocals(&v[0], Tier::Authentic, 16.0, 0.4, 1.0, &mut rng);
        let active: usize = r.active.iter().map(|(a, b)| b - a).sum();
        let frac = 1.0 - active as f64 / r.samples.len() as f64;
        assert!((frac - 0.4).abs() < 0.05, "silence fraction {frac}");
        let peak = r.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!((peak - PEAK).abs() < 1e-3);
    }

    #[test]
    fn low_quality_fakes_are_quantised() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = voices(2, &mut rng);
        let r = render_vocals(&v[1], Tier::LowQuality, 12.0, 0.3, 1.0, &mut rng);
        let on_grid = r.samples.iter().filter(|&&x| ((x * 8.0).round() / 8.0 - x).abs() < 1e-3).count();
        assert!(on_grid as f64 > 0.99 * r.samples.len() as f64);
    }

    #[test]
    fn mix_hits_requested_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..16000).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
        let bed = render_bed(2.0, &mut rng);
        let m = mix(&v, &bed, 100, 10.0);
        let resid: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a - b).collect();
        let snr = 10.0 * (mean_power(&v) / mean_power(&resid)).log10();
        assert!((snr - 10.0).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        SynthCorpusSpec::default().validate().unwrap();
        assert_eq!(SynthCorpusSpec::default().authentic_split(), (14, 2, 4));
        let one = SynthCorpusSpec { n_singers: 1, ..Default::default() };
        assert!(one.validate().is_err());
        let tiers = SynthCorpusSpec { hq_perturbation: 1.0, ..Default::default() };
        assert!(tiers.validate().is_err());
    }
}
