//! `vocalid` command-line interface.
//!
//! Settings resolve in three layers: built-in defaults, then the `--config`
//! key=value file, then command-line flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use vocalid::dsp::{ingest, log_mel, write_wav_pcm16, MelConfig, StftConfig};
use vocalid::eval::{load_trials, metrics, per_algorithm_report, trials_to_text, TrialProtocol};
use vocalid::identity::{embed_track, enroll, identify, track_window_features, Stage1Label};
use vocalid::manifest::Split;
use vocalid::models::{load_row_clip, train, Aggregate, AugmentAssets};
use vocalid::pipeline::{
    enroll_from_manifest, evaluate_verdicts, generate_synth_corpus, run_pipeline, save_verdicts, stage2_trials,
    verdicts_from_jsonl,
};
use vocalid::vad::{detect_activity, trim_nonvocal, VadConfig};
use vocalid::{Discriminator, Embedder, Manifest, ModelKind, ProfileDb, Settings};

#[derive(Parser)]
#[command(name = "vocalid", version, about = "Two-stage singing-voice likeness identification")]
struct Cli {
    /// Master seed for training and corpus synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the log-mel spectrogram of a WAV file as TSV (one frame per row).
    Features {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect vocal activity; optionally write the mask and the trimmed audio.
    Vad {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trimmed: Option<PathBuf>,
    },
    /// Train the stage-1 discriminator from a manifest.
    TrainD(TrainArgs),
    /// Train the stage-2 singer embedder from a manifest.
    TrainS(TrainArgs),
    /// Add singer profiles to a database.
    Enroll {
        #[arg(long)]
        s_weights: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Enroll every authentic singer of a manifest split.
        #[arg(long, conflicts_with_all = ["singer", "audio"])]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Singer id for the given audio files.
        #[arg(long, requires = "audio")]
        singer: Option<String>,
        audio: Vec<PathBuf>,
    },
    /// Rank enrolled singers for audio files or a manifest split.
    Identify {
        #[arg(long)]
        s_weights: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, conflicts_with = "audio")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Rankings as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Identification trials (manifest mode).
        #[arg(long, requires = "manifest")]
        trials: Option<PathBuf>,
        audio: Vec<PathBuf>,
    },
    /// Stage 1 only: deepfake scores for audio files.
    Detect {
        #[arg(long)]
        d_weights: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        aggregate: Option<Aggregate>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        audio: Vec<PathBuf>,
    },
    /// Both stages over a manifest's test split.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        d_weights: Option<PathBuf>,
        #[arg(long)]
        s_weights: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        aggregate: Option<Aggregate>,
        /// Verdicts as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Identification trials of tracks that reached stage 2.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Metrics from a trials file, or a cascade report from pass-all verdicts.
    Evaluate {
        #[arg(long, conflicts_with = "verdicts")]
        trials: Option<PathBuf>,
        #[arg(long, requires_all = ["manifest", "db"])]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        /// Metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the seeded synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        singers: Option<usize>,
        #[arg(long)]
        tracks_per_singer: Option<usize>,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output weight archive.
    #[arg(long)]
    out: PathBuf,
    /// Training log (TSV); defaults to `<out>.log.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Background recordings for augmentation; defaults to `assets/` next to
    /// the manifest.
    #[arg(long)]
    assets: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn need<'a>(flag: &'a Option<PathBuf>, from_config: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref()
        .or(from_config.as_deref())
        .with_context(|| format!("--{name} is required (flag or config key)"))
}

fn train_cmd(kind: ModelKind, args: &TrainArgs, settings: &Settings) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let assets_dir = args.assets.clone().or_else(|| {
        let d = args.manifest.parent().unwrap_or(Path::new(".")).join("assets");
        d.is_dir().then_some(d)
    });
    let assets = match assets_dir {
        Some(d) => AugmentAssets::load_dir(&d)?,
        None => AugmentAssets::default(),
    };
    let cfg = match kind {
        ModelKind::Discriminator => &settings.train_d,
        ModelKind::Embedder => &settings.train_s,
    };
    let outcome = train(kind, &manifest, cfg, &assets)?;
    let fingerprint = outcome.save(&args.out)?;
    let log_path = args.log.clone().unwrap_or_else(|| PathBuf::from(format!("{}.log.tsv", args.out.display())));
    write(&log_path, &outcome.log_text())?;
    println!(
        "{kind}: best epoch {} of {}, validation {:.4}, fingerprint {fingerprint:08x}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_metric
    );
    println!("weights: {}\nlog: {}", args.out.display(), log_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        settings.set_seed(seed);
    }
    if let Some(t) = cli.threads {
        settings.threads = t;
    }
    if settings.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(settings.threads).build_global()?;
    }
    let pc = settings.pipeline.clone();

    match &cli.command {
        Command::Features { input, out } => {
            let clip = ingest(input)?;
            let lm = log_mel(&clip, &StftConfig::default(), &MelConfig::default())?;
            println!("{}: {} frames x {} mels", input.display(), lm.n_frames, lm.n_mels);
            if let Some(out) = out {
                let mut text = String::new();
                for t in 0..lm.n_frames {
                    let row: Vec<String> = lm.frame(t).iter().map(|v| format!("{v:.6}")).collect();
                    text.push_str(&row.join("\t"));
                    text.push('\n');
                }
                write(out, &text)?;
            }
        }
        Command::Vad { input, out, trimmed } => {
            let clip = ingest(input)?;
            let cfg = VadConfig::default();
            let mask = detect_activity(&clip, &cfg)?;
            println!("{}: {:.1}% active", input.display(), 100.0 * mask.active_fraction());
            if let Some(out) = out {
                write(out, &mask.to_text())?;
            }
            if let Some(path) = trimmed {
                let t = trim_nonvocal(&clip, &mask, cfg.crossfade_ms)?;
                write_wav_pcm16(path, &t.clip)?;
                println!("removed {:.1}% of the input", 100.0 * t.removed_fraction);
            }
        }
        Command::TrainD(args) => train_cmd(ModelKind::Discriminator, args, &settings)?,
        Command::TrainS(args) => train_cmd(ModelKind::Embedder, args, &settings)?,
        Command::Enroll { s_weights, db, manifest, split, singer, audio } => {
            let s = Embedder::load(need(s_weights, &pc.s_weights, "s-weights")?)?;
            let db_path = need(db, &pc.db, "db")?;
            let mut profiles = if db_path.exists() { ProfileDb::load(db_path)? } else { ProfileDb::for_embedder(&s) };
            if let Some(m) = manifest {
                let fresh = enroll_from_manifest(&Manifest::load(m)?, *split, &s)?;
                for p in fresh.profiles() {
                    println!("enrolled {} from {} tracks", p.singer_id, p.count);
                }
                profiles.merge(fresh)?;
            } else {
                let Some(singer) = singer else { bail!("give --manifest, or --singer with audio files") };
                let clips = audio.iter().map(ingest).collect::<vocalid::Result<Vec<_>>>()?;
                let p = enroll(singer, &clips, &s, &mut profiles)?;
                println!("enrolled {} from {} tracks", p.singer_id, p.count);
            }
            profiles.save(db_path)?;
            println!("db: {} ({} profiles)", db_path.display(), profiles.len());
        }
        Command::Identify { s_weights, db, manifest, split, out, trials, audio } => {
            let s = Embedder::load(need(s_weights, &pc.s_weights, "s-weights")?)?;
            let profiles = ProfileDb::load(need(db, &pc.db, "db")?)?;
            let mut lines = String::new();
            if let Some(m) = manifest {
                let manifest = Manifest::load(m)?;
                let mut verdicts = Vec::new();
                // Track-id order, matching pipeline output.
                let mut rows: Vec<_> = manifest.split(*split).collect();
                rows.sort_by(|a, b| a.path.cmp(&b.path));
                for row in rows {
                    let clip = load_row_clip(&manifest, row, &VadConfig::default())?;
                    let e = embed_track(&clip, &s)?;
                    let ranking = profiles.identify_embedding(&e)?;
                    lines.push_str(&json!({"track_id": row.path, "ranking": ranking}).to_string());
                    lines.push('\n');
                    verdicts.push(vocalid::TrackVerdict {
                        track_id: row.path.clone(),
                        stage1_score: 0.0,
                        stage1_label: Stage1Label::Authentic,
                        window_scores: Vec::new(),
                        predicted_singer: ranking.first().map(|r| r.0.clone()),
                        distance_to_best: ranking.first().map(|r| r.1),
                        ranking: ranking
                            .into_iter()
                            .map(|(singer_id, distance)| vocalid::identity::RankedSinger { singer_id, distance })
                            .collect(),
                        windows_used: 0,
                        error: None,
                    });
                }
                let protocol = TrialProtocol::from_manifest(&manifest, *split, "manifest");
                let t = stage2_trials(&verdicts, &profiles, &protocol)?;
                let top1 = verdicts
                    .iter()
                    .filter(|v| protocol.truth.get(&v.track_id).is_some_and(|t| v.predicted_singer.as_deref() == Some(&t.singer_id)))
                    .count();
                println!("{} tracks, top-1 matches claimed singer on {top1}", verdicts.len());
                if let Some(path) = trials {
                    write(path, &trials_to_text(&t))?;
                }
            } else {
                if audio.is_empty() {
                    bail!("give audio files or --manifest");
                }
                for path in audio {
                    let ranking = identify(&ingest(path)?, &s, &profiles)?;
                    let (best, dist) = &ranking[0];
                    println!("{}\t{best}\t{dist:.4}", path.display());
                    lines.push_str(&json!({"track_id": path, "ranking": ranking}).to_string());
                    lines.push('\n');
                }
            }
            if let Some(out) = out {
                write(out, &lines)?;
            }
        }
        Command::Detect { d_weights, tau, aggregate, out, audio } => {
            let d = Discriminator::load(need(d_weights, &pc.d_weights, "d-weights")?)?;
            let tau = tau.unwrap_or(pc.tau);
            let aggregate = aggregate.unwrap_or(pc.aggregate);
            let mut lines = String::new();
            for path in audio {
                let (score, windows) = d.score(&track_window_features(&ingest(path)?)?, aggregate)?;
                let label = if score >= tau { "deepfake" } else { "authentic" };
                println!("{}\t{score:.4}\t{label}", path.display());
                lines.push_str(&json!({"track_id": path, "score": score, "label": label, "window_scores": windows}).to_string());
                lines.push('\n');
            }
            if let Some(out) = out {
                write(out, &lines)?;
            }
        }
        Command::Pipeline { manifest, d_weights, s_weights, db, tau, aggregate, out, trials } => {
            let mut cfg = pc.clone();
            if let Some(t) = tau {
                cfg.tau = *t;
            }
            if let Some(a) = aggregate {
                cfg.aggregate = *a;
            }
            cfg.validate()?;
            let d = Discriminator::load(need(d_weights, &pc.d_weights, "d-weights")?)?;
            let s = Embedder::load(need(s_weights, &pc.s_weights, "s-weights")?)?;
            let profiles = ProfileDb::load(need(db, &pc.db, "db")?)?;
            let manifest = Manifest::load(manifest)?;
            let verdicts = run_pipeline(&manifest, &cfg, &d, &s, &profiles)?;
            let failed = verdicts.iter().filter(|v| v.error.is_some()).count();
            let rejected = verdicts.iter().filter(|v| v.error.is_none() && !v.reached_stage2()).count();
            println!(
                "{} tracks: {} rejected at stage 1 (tau {}), {} identified, {failed} failed",
                verdicts.len(),
                rejected,
                cfg.tau,
                verdicts.len() - rejected - failed
            );
            let out = out.clone().or(pc.output.clone());
            if let Some(out) = &out {
                save_verdicts(&verdicts, out)?;
                println!("verdicts: {}", out.display());
            }
            if let Some(path) = trials {
                let protocol = TrialProtocol::from_manifest(&manifest, Split::Test, "manifest");
                write(path, &trials_to_text(&stage2_trials(&verdicts, &profiles, &protocol)?))?;
            }
        }
        Command::Evaluate { trials, verdicts, manifest, db, tau, out } => {
            let report = if let Some(path) = trials {
                let t = load_trials(path)?;
                let m = metrics(&t)?;
                println!("EER {:.2}%  AUC {:.4}  ({} trials, {} targets)", 100.0 * m.eer, m.auc, m.n_trials, m.n_targets);
                json!({"metrics": m, "per_algorithm": per_algorithm_report(&t)})
            } else if let (Some(v), Some(m), Some(db)) = (verdicts, manifest, db) {
                let text = std::fs::read_to_string(v).with_context(|| format!("reading {}", v.display()))?;
                let manifest = Manifest::load(m)?;
                let protocol = TrialProtocol::from_manifest(&manifest, Split::Test, "manifest");
                let (ev, _, _) =
                    evaluate_verdicts(&verdicts_from_jsonl(&text)?, &ProfileDb::load(db)?, &protocol, tau.unwrap_or(pc.tau))?;
                print!("{}", ev.comparison.to_tsv());
                serde_json::to_value(&ev)?
            } else {
                bail!("give --trials, or --verdicts with --manifest and --db");
            };
            if let Some(out) = out {
                write(out, &serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Synth { out, singers, tracks_per_singer } => {
            let mut spec = settings.synth.clone();
            if let Some(n) = singers {
                spec.n_singers = *n;
            }
            if let Some(n) = tracks_per_singer {
                spec.tracks_per_singer = *n;
            }
            let manifest = generate_synth_corpus(&spec, out)?;
            let fakes = manifest.rows.iter().filter(|r| r.is_deepfake()).count();
            println!(
                "{} tracks ({} authentic, {fakes} deepfake) in {}",
                manifest.rows.len(),
                manifest.rows.len() - fakes,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
