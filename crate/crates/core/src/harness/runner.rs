//! Orchestration: seeded replications in parallel worker slots, per-run CSV
//! files written by the worker that owns the run, aggregation by the
//! coordinator. Rerunning an identical config reproduces every file
//! byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;
use crate::planner;

use super::config::ExperimentConfig;
use super::csvio::{
    aggregate_to_csv, model_updates_to_csv, read_table, summary_to_csv, trace_to_csv,
};
use super::metrics::{aggregate, compute_metrics, summarize, MetricSeries};

pub const OUT_ENV_VAR: &str = "BEXPLORE_OUT";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Parallel worker slots; 0 uses the default pool width.
    pub jobs: usize,
    /// Added to every configured seed.
    pub seed_offset: u64,
    /// Overrides the config's output root.
    pub out_override: Option<PathBuf>,
}

/// Output directory: CLI override, then config, then the environment
/// variable, then `runs/`; the experiment name is the leaf.
pub fn output_dir(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    let root = opts
        .out_override
        .clone()
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(&config.name)
}

/// One seeded run end to end: fresh env, model, and agent, all streams
/// derived from the seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(planner::RunTrace, MetricSeries)> {
    let mut env = config.env.build()?;
    let root = Rng::new(seed);
    let state_dim = env.encoded_bounds().0.len();
    let a_dim = env.action_spec().encoded_dim();
    let mut model = config
        .model
        .as_ref()
        .map(|spec| spec.build(state_dim + a_dim, 1 + state_dim, &root));
    let mut agent = config.agent.build(env.as_ref(), &root)?;
    let trace = planner::run(
        env.as_mut(),
        model.as_mut().map(|m| m.as_mut() as &mut dyn crate::dynamics::DynamicsModel),
        agent.as_mut(),
        &config.planner,
        &root,
    )?;
    let metrics = compute_metrics(&trace, env.as_ref());
    Ok((trace, metrics))
}

fn meta_toml(config: &ExperimentConfig, seeds: &[u64]) -> Result<String> {
    let env = config.env.build()?;
    let mut out = String::new();
    let _ = writeln!(out, "environment = {:?}", env.name());
    let _ = writeln!(out, "coverage_grid = {:?}", env.coverage_grid_desc());
    let _ = writeln!(out, "coverage_cells = {}", env.coverage_cells());
    let _ = writeln!(out, "step_limit = {}", env.step_limit());
    let _ = write!(out, "seeds = [");
    for (i, s) in seeds.iter().enumerate() {
        let _ = write!(out, "{}{}", if i > 0 { ", " } else { "" }, s);
    }
    let _ = writeln!(out, "]");
    Ok(out)
}

fn in_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("worker pool")
            .install(work)
    }
}

/// Execute every seed, write per-seed trace and model-update CSVs, then the
/// aggregate and summary. Returns the output directory.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    config.validate()?;
    let dir = output_dir(config, opts);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    let seeds: Vec<u64> = config
        .seeds
        .iter()
        .map(|s| s.wrapping_add(opts.seed_offset))
        .collect();
    std::fs::write(dir.join("meta.toml"), meta_toml(config, &seeds)?)?;

    let runs: Vec<MetricSeries> = in_pool(opts.jobs, || {
        seeds
            .par_iter()
            .map(|&seed| {
                let (trace, metrics) = run_seed(config, seed)?;
                let env = config.env.build()?;
                std::fs::write(
                    dir.join(format!("trace_seed{seed}.csv")),
                    trace_to_csv(&trace, env.as_ref()),
                )?;
                if !trace.model_updates.is_empty() {
                    std::fs::write(
                        dir.join(format!("model_updates_seed{seed}.csv")),
                        model_updates_to_csv(&trace.model_updates),
                    )?;
                }
                Ok(metrics)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    std::fs::write(dir.join("aggregate.csv"), aggregate_to_csv(&aggregate(&runs)?))?;
    std::fs::write(dir.join("summary.csv"), summary_to_csv(&summarize(&runs)))?;
    Ok(dir)
}

/// Rebuild one run's metrics from its persisted trace (and update) CSV.
fn metrics_from_csv(dir: &Path, seed: u64, config: &ExperimentConfig) -> Result<MetricSeries> {
    let table = read_table(&dir.join(format!("trace_seed{seed}.csv")))?;
    let coverage = table.column_values(table.col("coverage")?);
    let r_ext = table.column_values(table.col("r_ext")?);
    let mut cumulative = Vec::with_capacity(r_ext.len());
    let mut acc = 0.0;
    for r in &r_ext {
        acc += r;
        cumulative.push(acc);
    }
    let solve_step = r_ext.iter().position(|&r| r >= 0.999);
    let env = config.env.build()?;
    let state_cols = table.prefixed_cols("state");
    let min_goal_distance = table
        .rows
        .first()
        .and_then(|row| {
            let state = Vector::from_iterator(state_cols.len(), state_cols.iter().map(|&c| row[c]));
            env.goal_distance(&state)
        })
        .map(|first| {
            let mut best = first;
            table
                .rows
                .iter()
                .map(|row| {
                    let state =
                        Vector::from_iterator(state_cols.len(), state_cols.iter().map(|&c| row[c]));
                    if let Some(d) = env.goal_distance(&state) {
                        best = best.min(d);
                    }
                    best
                })
                .collect()
        });
    let mut metrics = MetricSeries {
        coverage,
        cumulative_extrinsic: cumulative,
        min_goal_distance,
        solve_step,
        ..MetricSeries::default()
    };
    let updates_path = dir.join(format!("model_updates_seed{seed}.csv"));
    if updates_path.exists() {
        let updates = read_table(&updates_path)?;
        metrics.update_steps = updates
            .column_values(updates.col("step")?)
            .iter()
            .map(|&s| s as usize)
            .collect();
        metrics.probe_pred_error = updates.column_values(updates.col("probe_pred_error")?);
        metrics.probe_entropy = updates.column_values(updates.col("probe_entropy")?);
        metrics.probe_entropy_power = updates.column_values(updates.col("probe_entropy_power")?);
        metrics.probe_eig = updates.column_values(updates.col("probe_eig")?);
        metrics.model_loss = updates.column_values(updates.col("loss")?);
    }
    Ok(metrics)
}

fn trace_seeds(dir: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name
            .strip_prefix("trace_seed")
            .and_then(|r| r.strip_suffix(".csv"))
        {
            if let Ok(seed) = rest.parse::<u64>() {
                seeds.push(seed);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

/// Re-aggregate a finished run directory from its trace CSVs alone. Produces
/// the same aggregate and summary files as the run that wrote the traces.
pub fn report(dir: &Path) -> Result<PathBuf> {
    let config = super::config::load_config(&dir.join("config.toml"))?;
    let seeds = trace_seeds(dir)?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig {
            field: dir.display().to_string(),
            message: "no trace_seed*.csv files found".into(),
        });
    }
    let runs: Vec<MetricSeries> = seeds
        .iter()
        .map(|&seed| metrics_from_csv(dir, seed, &config))
        .collect::<Result<_>>()?;
    std::fs::write(dir.join("aggregate.csv"), aggregate_to_csv(&aggregate(&runs)?))?;
    std::fs::write(dir.join("summary.csv"), summary_to_csv(&summarize(&runs)))?;
    Ok(dir.to_path_buf())
}

fn parse_raw_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

/// Copy of the config with the dotted `key` set to `raw` (parsed as bool,
/// int, float, then string). Used by sweeps; the result is re-validated.
pub fn config_with_key(
    config: &ExperimentConfig,
    key: &str,
    raw: &str,
) -> Result<ExperimentConfig> {
    let mut value = toml::Value::try_from(config).map_err(|e| Error::InvalidConfig {
        field: "config".into(),
        message: e.to_string(),
    })?;
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidConfig {
            field: key.into(),
            message: "empty segment in key path".into(),
        });
    }
    let mut cursor = &mut value;
    for seg in &segments[..segments.len() - 1] {
        let table = cursor.as_table_mut().ok_or_else(|| Error::InvalidConfig {
            field: key.into(),
            message: format!("{seg} is not a table"),
        })?;
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor.as_table_mut().ok_or_else(|| Error::InvalidConfig {
        field: key.into(),
        message: "key path ends inside a scalar".into(),
    })?;
    table.insert(
        segments.last().unwrap().to_string(),
        parse_raw_value(raw),
    );
    let varied: ExperimentConfig =
        value.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig {
            field: key.into(),
            message: e.to_string(),
        })?;
    varied.validate()?;
    Ok(varied)
}

/// Grid over one key: each value becomes a run named
/// `<name>_<lastsegment>=<value>` in its own directory.
pub fn run_sweep(
    config: &ExperimentConfig,
    key: &str,
    values: &[String],
    opts: &RunOptions,
) -> Result<Vec<PathBuf>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig {
            field: "--vary".into(),
            message: "need at least one value".into(),
        });
    }
    let last = key.rsplit('.').next().unwrap_or(key);
    let mut dirs = Vec::new();
    for raw in values {
        let mut varied = config_with_key(config, key, raw)?;
        varied.name = format!("{}_{last}={raw}", config.name);
        dirs.push(run_experiment(&varied, opts)?);
    }
    Ok(dirs)
}
