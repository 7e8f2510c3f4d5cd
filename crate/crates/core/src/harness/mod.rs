//! Metrics, benchmark orchestration, configuration and data ingestion.

pub mod agent;
pub mod bench;
pub mod config;
pub mod cornell;
pub mod metrics;

pub use agent::Agent;
pub use bench::{
    detector_accuracy, finetune_detector, heldout_scenes, plot_csv, plot_data, plot_rows,
    pretrain_detector, read_episode_rows, run_benchmark, suite_scenes, sweep_csv, sweep_epsilon,
    sweep_table, target_scene, Benchmark, EpisodeRow, MethodSummary, PlotRow, RunReport,
    SweepEntry, SweepRow, TraceCsvRow,
};
pub use config::{BenchmarkConfig, Domain, Method};
pub use cornell::{format_cornell_rects, parse_cornell_rects, parse_cornell_str, CornellParse};
pub use metrics::{ee, judge, SuccessJudgment, ANGLE_THRESHOLD_DEG, IOU_THRESHOLD};
