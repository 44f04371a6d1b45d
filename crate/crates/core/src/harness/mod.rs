//! Experiment runs: config files, run directories, scoring and plots.
//!
//! A run directory holds `run.json` (the resolved config) and one
//! `seed_<k>/` per seed with `metrics.csv`, `decisions.jsonl`,
//! `updates.jsonl` and optional `checkpoints/`. Only `decisions.jsonl`
//! carries wall-clock time, so the other files are reproducible bit for bit.

mod config;
mod plot;
mod runner;
mod score;

pub use config::{Method, RunConfig, ScheduleSource};
pub use plot::{plot, render as render_svg};
pub use runner::{
    metrics_row, read_metrics, run, run_seed, seed_dir, SeedResult, DECISIONS_FILE, METRICS_FILE, METRICS_HEADER,
    RUN_FILE, UPDATES_FILE,
};
pub use score::{
    assignment_accuracy, first_cycle_end, render as render_summary, score, window_scores, GroupScore, Stat, Summary,
    SCORE_WINDOW, SUMMARY_FILE,
};
