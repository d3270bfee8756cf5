use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vocalid::eval::TrialProtocol;
use vocalid::manifest::Split;
use vocalid::models::{discriminator_specs, DiscriminatorArch, Embedder, EmbedderArch};
use vocalid::nn::{save_weights, Network};
use vocalid::pipeline::{evaluate_verdicts, verdicts_from_jsonl};
use vocalid::{Manifest, ProfileDb};

const SMALL_CORPUS: &str = "\
seed = 3
synth.n_singers = 3
synth.tracks_per_singer = 5
synth.duration_s = 16
synth.hq_train_per_singer = 1
synth.hq_test_per_singer = 1
synth.lq_train_per_singer = 1
synth.lq_val_per_singer = 1
synth.lq_test_per_singer = 1
synth.n_beds = 1
";

fn vocalid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vocalid")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vocalid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic corpus plus random tiny weights, so the tests exercise
/// the plumbing rather than training.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("small.cfg");
        std::fs::write(&cfg, SMALL_CORPUS).unwrap();
        ok(&["--config", s(&cfg), "synth", "--out", s(&dir.path().join("corpus"))]);
        let arch = DiscriminatorArch { conv_channels: [2, 2, 2, 2], hidden: 4 };
        let d: Network<f32> =
            Network::build(&discriminator_specs(&arch).unwrap(), &mut rand_seed(1)).unwrap();
        save_weights(&d, &dir.path().join("d.vpw")).unwrap();
        let emb = Embedder::random(EmbedderArch { channels: 6, se_bottleneck: 2, attention_dim: 4, embedding_dim: 8 }, 3, 2)
            .unwrap();
        save_weights(&emb.net, &dir.path().join("s.vpw")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn manifest(&self) -> PathBuf {
        self.path("corpus/manifest.tsv")
    }

    fn enroll(&self) {
        ok(&["enroll", "--s-weights", s(&self.path("s.vpw")), "--db", s(&self.path("db.vpd")), "--manifest", s(&self.manifest())]);
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(vocalid(&[]).status.code(), Some(2));
    assert_eq!(vocalid(&["pipeline"]).status.code(), Some(2));
    assert_eq!(vocalid(&["detect", "--tau", "abc", "x.wav"]).status.code(), Some(2));
    assert_eq!(vocalid(&["--help"]).status.code(), Some(0));
    assert_eq!(vocalid(&["--version"]).status.code(), Some(0));
}

#[test]
fn operational_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.wav");
    let out = vocalid(&["features", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "tau = 2\n").unwrap();
    assert_eq!(vocalid(&["--config", s(&bad), "synth", "--out", s(dir.path())]).status.code(), Some(1));
    assert_eq!(vocalid(&["detect", "--d-weights", s(&missing), s(&missing)]).status.code(), Some(1));
}

#[test]
fn identify_ranks_an_enrolled_track_first() {
    let f = Fixture::new();
    let track = f.path("corpus/audio/singer_01/real_00_vocals.wav");
    ok(&["enroll", "--s-weights", s(&f.path("s.vpw")), "--db", s(&f.path("solo.vpd")), "--singer", "me", s(&track)]);
    let other = f.path("corpus/audio/singer_02/real_00_vocals.wav");
    ok(&["enroll", "--s-weights", s(&f.path("s.vpw")), "--db", s(&f.path("solo.vpd")), "--singer", "other", s(&other)]);
    let out = ok(&["identify", "--s-weights", s(&f.path("s.vpw")), "--db", s(&f.path("solo.vpd")), s(&track)]);
    let fields: Vec<&str> = out.trim().split('\t').collect();
    assert_eq!(fields[1], "me");
    assert!(fields[2].parse::<f64>().unwrap().abs() < 1e-6);
}

#[test]
fn pass_all_pipeline_trials_equal_identifier_only_trials() {
    let f = Fixture::new();
    f.enroll();
    let (d, sw, db, m) = (f.path("d.vpw"), f.path("s.vpw"), f.path("db.vpd"), f.manifest());
    let (pt, it) = (f.path("pipeline_trials.tsv"), f.path("identify_trials.tsv"));
    ok(&["pipeline", "--manifest", s(&m), "--d-weights", s(&d), "--s-weights", s(&sw), "--db", s(&db), "--tau", "1", "--trials", s(&pt)]);
    ok(&["identify", "--s-weights", s(&sw), "--db", s(&db), "--manifest", s(&m), "--split", "test", "--trials", s(&it)]);
    let a = std::fs::read_to_string(&pt).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read_to_string(&it).unwrap());
}

#[test]
fn evaluate_from_files_matches_in_process_evaluation() {
    let f = Fixture::new();
    f.enroll();
    let (d, sw, db, m) = (f.path("d.vpw"), f.path("s.vpw"), f.path("db.vpd"), f.manifest());
    let verdicts = f.path("verdicts.jsonl");
    ok(&["pipeline", "--manifest", s(&m), "--d-weights", s(&d), "--s-weights", s(&sw), "--db", s(&db), "--tau", "1", "--out", s(&verdicts)]);
    let report = f.path("eval.json");
    ok(&["evaluate", "--verdicts", s(&verdicts), "--manifest", s(&m), "--db", s(&db), "--tau", "0.5", "--out", s(&report)]);

    let manifest = Manifest::load(&m).unwrap();
    let protocol = TrialProtocol::from_manifest(&manifest, Split::Test, "manifest");
    let v = verdicts_from_jsonl(&std::fs::read_to_string(&verdicts).unwrap()).unwrap();
    let (ev, _, _) = evaluate_verdicts(&v, &ProfileDb::load(&db).unwrap(), &protocol, 0.5).unwrap();
    let expected = serde_json::to_string_pretty(&serde_json::to_value(&ev).unwrap()).unwrap();
    assert_eq!(std::fs::read_to_string(&report).unwrap(), expected);

    let trials = f.path("trials.tsv");
    ok(&["pipeline", "--manifest", s(&m), "--d-weights", s(&d), "--s-weights", s(&sw), "--db", s(&db), "--tau", "1", "--trials", s(&trials)]);
    let out = ok(&["evaluate", "--trials", s(&trials)]);
    assert!(out.starts_with(&format!("EER {:.2}%", 100.0 * ev.comparison.single_stage.eer)), "{out}");
}

#[test]
fn zero_threshold_pipeline_reports_every_track_rejected() {
    let f = Fixture::new();
    f.enroll();
    let out = ok(&[
        "pipeline", "--manifest", s(&f.manifest()), "--d-weights", s(&f.path("d.vpw")), "--s-weights",
        s(&f.path("s.vpw")), "--db", s(&f.path("db.vpd")), "--tau", "0",
    ]);
    let n = Manifest::load(f.manifest()).unwrap().split(Split::Test).count();
    assert!(out.starts_with(&format!("{n} tracks: {n} rejected")), "{out}");
}
