//! Declarative end-to-end runs: dataset manifest and endpoints in;
//! keyframes, prompts, raw responses, predictions and reports out.
//!
//! Layout of `output_dir` after a run:
//!
//! ```text
//! keyframes/<video_id>/kf_<cluster>.png, keyframes.json
//! prompts/<id>.txt
//! responses/<id>.json
//! predictions.jsonl   errors.jsonl
//! report.json   report.txt   confusion.svg
//! run_stats.json      (request, cache and per-item attempt counters; varies between runs)
//! ```

mod config;
mod manifest;
mod run;

pub use config::{ConfigError, Mode, Roles, RunConfig, Task, ENV_PREFIX};
pub use manifest::{DatasetManifest, HarVideo, VqaItem};
pub use run::{
    export_training_data, run, run_har, run_vqa, ExportOutcome, ItemError, ItemTrace,
    PipelineError, Prediction, ResponseRecord, RunOutcome, RunStats, ERRORS_FILE, EXIT_CONFIG,
    EXIT_ITEM_ERRORS, EXIT_OK, EXIT_TOTAL_FAILURE, PREDICTIONS_FILE, RUN_STATS_FILE, TRAIN_FILE,
};
