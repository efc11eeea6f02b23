//! Experiment harness: TOML configs, seeded replications, metrics, and CSV
//! output behind the CLI.

pub mod config;
pub mod csvio;
pub mod metrics;
pub mod runner;

pub use config::{load_config, parse_config, AgentSpec, EnvSpec, ExperimentConfig, ModelSpec};
pub use csvio::{read_table, CsvTable};
pub use metrics::{aggregate, compute_metrics, coverage_series, summarize, MetricSeries};
pub use runner::{output_dir, report, run_experiment, run_seed, run_sweep, RunOptions};
