//! Per-run metric series and their cross-seed aggregation.

use std::collections::HashSet;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::planner::RunTrace;

/// Metrics of a single seeded run, all on the step grid of the trace.
#[derive(Debug, Clone, Default)]
pub struct MetricSeries {
    /// Cumulative fraction of distinct coverage cells after each step.
    pub coverage: Vec<f64>,
    pub cumulative_extrinsic: Vec<f64>,
    /// Running minimum distance to the goal region, for envs that report one.
    pub min_goal_distance: Option<Vec<f64>>,
    pub solve_step: Option<usize>,
    /// Steps at which the model was refit; parallel with the probe vectors.
    pub update_steps: Vec<usize>,
    pub probe_pred_error: Vec<f64>,
    pub probe_entropy: Vec<f64>,
    pub probe_entropy_power: Vec<f64>,
    pub probe_eig: Vec<f64>,
    pub model_loss: Vec<f64>,
}

/// Coverage fraction after each step: distinct cells among every state left
/// and entered so far, over the environment's fixed cell count. Both
/// endpoints of each transition count, so goals that end an episode are
/// covered even though they never appear as a pre-action state.
pub fn coverage_series(trace: &RunTrace, env: &dyn Environment) -> Vec<f64> {
    let total = env.coverage_cells() as f64;
    let mut seen = HashSet::new();
    let mut series = Vec::with_capacity(trace.steps.len());
    for record in &trace.steps {
        seen.insert(env.coverage_cell(&record.state));
        seen.insert(record.coverage_cell);
        series.push(seen.len() as f64 / total);
    }
    series
}

pub fn compute_metrics(trace: &RunTrace, env: &dyn Environment) -> MetricSeries {
    let coverage = coverage_series(trace, env);
    let mut cumulative = Vec::with_capacity(trace.steps.len());
    let mut acc = 0.0;
    for record in &trace.steps {
        acc += record.reward_ext;
        cumulative.push(acc);
    }
    let min_goal_distance = trace
        .steps
        .first()
        .and_then(|r| env.goal_distance(&r.state))
        .map(|first| {
            let mut best = first;
            trace
                .steps
                .iter()
                .map(|r| {
                    if let Some(d) = env.goal_distance(&r.state) {
                        best = best.min(d);
                    }
                    best
                })
                .collect()
        });
    let mut m = MetricSeries {
        coverage,
        cumulative_extrinsic: cumulative,
        min_goal_distance,
        solve_step: trace.solved_at,
        ..MetricSeries::default()
    };
    for u in &trace.model_updates {
        m.update_steps.push(u.step);
        m.probe_pred_error.push(u.probe_pred_error);
        m.probe_entropy.push(u.probe_entropy);
        m.probe_entropy_power.push(u.probe_entropy_power);
        m.probe_eig.push(u.probe_eig);
        m.model_loss.push(u.loss);
    }
    m
}

/// Linear-interpolation percentile of a sorted slice, q in [0,1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub step: usize,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

fn quartile_rows(
    name: &str,
    steps: &[usize],
    per_run: &[&[f64]],
    out: &mut Vec<AggregateRow>,
) -> Result<()> {
    for (i, &step) in steps.iter().enumerate() {
        let mut values: Vec<f64> = Vec::with_capacity(per_run.len());
        for run in per_run {
            let v = *run.get(i).ok_or(Error::DimensionMismatch {
                context: "metric series lengths across runs",
                expected: steps.len(),
                got: run.len(),
            })?;
            values.push(v);
        }
        values.sort_by(f64::total_cmp);
        out.push(AggregateRow {
            step,
            metric: name.into(),
            median: percentile(&values, 0.5),
            q25: percentile(&values, 0.25),
            q75: percentile(&values, 0.75),
        });
    }
    Ok(())
}

/// Per-step median and quartile bands across runs. All runs must share the
/// step grid (they do, for a fixed config).
pub fn aggregate(runs: &[MetricSeries]) -> Result<Vec<AggregateRow>> {
    let first = runs.first().ok_or_else(|| Error::InvalidConfig {
        field: "runs".into(),
        message: "aggregate needs at least one run".into(),
    })?;
    let steps: Vec<usize> = (0..first.coverage.len()).collect();
    let mut rows = Vec::new();
    let cov: Vec<&[f64]> = runs.iter().map(|r| r.coverage.as_slice()).collect();
    quartile_rows("coverage", &steps, &cov, &mut rows)?;
    let ext: Vec<&[f64]> = runs
        .iter()
        .map(|r| r.cumulative_extrinsic.as_slice())
        .collect();
    quartile_rows("cumulative_extrinsic", &steps, &ext, &mut rows)?;
    if runs.iter().all(|r| r.min_goal_distance.is_some()) {
        let dist: Vec<&[f64]> = runs
            .iter()
            .map(|r| r.min_goal_distance.as_deref().unwrap())
            .collect();
        quartile_rows("min_goal_distance", &steps, &dist, &mut rows)?;
    }
    if !first.update_steps.is_empty() && runs.iter().all(|r| r.update_steps == first.update_steps)
    {
        for (name, get) in [
            ("probe_pred_error", (|r: &MetricSeries| &r.probe_pred_error) as fn(&MetricSeries) -> &Vec<f64>),
            ("probe_entropy", |r| &r.probe_entropy),
            ("probe_entropy_power", |r| &r.probe_entropy_power),
            ("probe_eig", |r| &r.probe_eig),
            ("model_loss", |r| &r.model_loss),
        ] {
            let series: Vec<&[f64]> = runs.iter().map(|r| get(r).as_slice()).collect();
            quartile_rows(name, &first.update_steps, &series, &mut rows)?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    /// 1.96 * sample std / sqrt(n); 0 for a single run.
    pub ci95: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Terminal-value summaries with normal-approximation confidence intervals.
pub fn summarize(runs: &[MetricSeries]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let mut push = |name: &str, values: Vec<f64>| {
        if values.is_empty() {
            return;
        }
        let (mean, ci95) = mean_ci(&values);
        rows.push(SummaryRow {
            metric: name.into(),
            mean,
            ci95,
            n: values.len(),
        });
    };
    push(
        "terminal_coverage",
        runs.iter().filter_map(|r| r.coverage.last().copied()).collect(),
    );
    push(
        "total_extrinsic",
        runs.iter()
            .filter_map(|r| r.cumulative_extrinsic.last().copied())
            .collect(),
    );
    push(
        "solve_rate",
        runs.iter()
            .map(|r| if r.solve_step.is_some() { 1.0 } else { 0.0 })
            .collect(),
    );
    push(
        "solve_step",
        runs.iter()
            .filter_map(|r| r.solve_step.map(|s| s as f64))
            .collect(),
    );
    if runs.iter().all(|r| r.min_goal_distance.is_some()) {
        push(
            "terminal_min_goal_distance",
            runs.iter()
                .filter_map(|r| r.min_goal_distance.as_ref().and_then(|d| d.last().copied()))
                .collect(),
        );
    }
    rows
}
