//! Experiment configuration, orchestration and artifact emission.

mod config;
mod output;
mod runner;
mod svg;

pub use config::{
    load_config, normalize, save_config, ChecksSpec, ConfigError, ConfigFormat, CostSpec, ExperimentConfig,
    MetricsSpec, TopologySpec,
};
pub use output::{emit_outputs, EmitReport, OutputFormat};
pub use runner::{
    build_problems, run_experiment, run_seed, AlgorithmResult, GroupResult, Problem, ResultEnvelope, RunFailure,
    TailFitSummary, Timing,
};
pub use svg::line_chart;
