//! Orchestration: corpus synthesis, the stage-1/stage-2 cascade, and
//! evaluation of its verdicts.

pub mod config;
pub mod run;
pub mod synth;

pub use config::{parse_key_values, PipelineConfig, Settings};
pub use run::{
    apply_threshold, detection_trials, enroll_from_manifest, evaluate_verdicts, process_clip, run_on_rows,
    run_pipeline, save_verdicts, stage2_trials, stage2_tracks, verdicts_from_jsonl, verdicts_to_jsonl, Evaluation,
};
pub use synth::{generate_synth_corpus, SynthCorpusSpec, HQ_TAG, LQ_TAG};
