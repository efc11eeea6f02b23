//! CSV persistence. Floats are written with Rust's shortest round-trip
//! formatting, so a parse-and-rewrite cycle is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::envs::{Action, Environment};
use crate::error::{Error, Result};
use crate::planner::{ModelUpdateRecord, RunTrace};

use super::metrics::{coverage_series, AggregateRow, SummaryRow};

/// Numeric table with a named header; `done` flags are stored as 0/1.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidConfig {
                field: name.into(),
                message: "column missing from CSV header".into(),
            })
    }

    /// Indices of the consecutive columns `prefix_0..prefix_{k-1}`.
    pub fn prefixed_cols(&self, prefix: &str) -> Vec<usize> {
        (0..)
            .map(|i| format!("{prefix}_{i}"))
            .map_while(|name| self.header.iter().position(|h| *h == name))
            .collect()
    }

    pub fn column_values(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }
}

pub fn read_table(path: &Path) -> Result<CsvTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig {
            field: path.display().to_string(),
            message: "empty CSV".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.parse::<f64>().map_err(|e| Error::InvalidConfig {
                    field: format!("{}:{}", path.display(), lineno + 2),
                    message: format!("bad number {cell:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != header.len() {
            return Err(Error::InvalidConfig {
                field: format!("{}:{}", path.display(), lineno + 2),
                message: format!("expected {} cells, got {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

fn action_columns(action: &Action) -> usize {
    match action {
        Action::Discrete(_) => 1,
        Action::Continuous(v) => v.len(),
    }
}

pub fn trace_to_csv(trace: &RunTrace, env: &dyn Environment) -> String {
    let mut out = String::new();
    let state_dim = trace.steps.first().map_or(0, |r| r.state.len());
    let action_cols = trace.steps.first().map_or(1, |r| action_columns(&r.action));
    out.push_str("step");
    for d in 0..state_dim {
        let _ = write!(out, ",state_{d}");
    }
    if action_cols == 1 {
        out.push_str(",action");
    } else {
        for d in 0..action_cols {
            let _ = write!(out, ",action_{d}");
        }
    }
    out.push_str(",r_ext,bonus,done,coverage\n");
    let coverage = coverage_series(trace, env);
    for (record, cov) in trace.steps.iter().zip(coverage) {
        let _ = write!(out, "{}", record.step);
        for d in 0..state_dim {
            let _ = write!(out, ",{}", record.state[d]);
        }
        match &record.action {
            Action::Discrete(a) => {
                let _ = write!(out, ",{a}");
            }
            Action::Continuous(v) => {
                for d in 0..v.len() {
                    let _ = write!(out, ",{}", v[d]);
                }
            }
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            record.reward_ext,
            record.bonus,
            u8::from(record.done),
            cov
        );
    }
    out
}

pub fn model_updates_to_csv(updates: &[ModelUpdateRecord]) -> String {
    let mut out = String::from(
        "step,loss,train_points,probe_pred_error,probe_entropy,probe_entropy_power,probe_eig\n",
    );
    for u in updates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            u.step,
            u.loss,
            u.train_points,
            u.probe_pred_error,
            u.probe_entropy,
            u.probe_entropy_power,
            u.probe_eig
        );
    }
    out
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("step,metric,median,q25,q75\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.metric, r.median, r.q25, r.q75);
    }
    out
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("metric,mean,ci95,n\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.metric, r.mean, r.ci95, r.n);
    }
    out
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::InvalidConfig {
                field: format!("{}:{}", path.display(), lineno + 1),
                message: "expected 5 cells".into(),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::InvalidConfig {
                field: format!("{}:{}", path.display(), lineno + 1),
                message: e.to_string(),
            })
        };
        rows.push(AggregateRow {
            step: num(parts[0])? as usize,
            metric: parts[1].to_string(),
            median: num(parts[2])?,
            q25: num(parts[3])?,
            q75: num(parts[4])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::unichain::UnichainEnv;
    use crate::numerics::linalg::Vector;
    use crate::planner::StepRecord;

    fn tiny_trace() -> RunTrace {
        let mut trace = RunTrace::default();
        for i in 0..3 {
            trace.steps.push(StepRecord {
                step: i,
                state: Vector::from_element(1, i as f64),
                action: Action::Discrete(2),
                reward_ext: 0.1 * i as f64 + 0.05,
                bonus: 1.0 / 3.0,
                done: i == 2,
                coverage_cell: i + 1,
            });
        }
        trace
    }

    #[test]
    fn trace_header_matches_schema() {
        let env = UnichainEnv::new(5).unwrap();
        let csv = trace_to_csv(&tiny_trace(), &env);
        assert!(csv.starts_with("step,state_0,action,r_ext,bonus,done,coverage\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn floats_round_trip_bitwise_through_the_csv() {
        let env = UnichainEnv::new(5).unwrap();
        let csv = trace_to_csv(&tiny_trace(), &env);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, &csv).unwrap();
        let table = read_table(&path).unwrap();
        let r_ext = table.col("r_ext").unwrap();
        let bonus = table.col("bonus").unwrap();
        for (i, row) in table.rows.iter().enumerate() {
            assert_eq!(row[r_ext], 0.1 * i as f64 + 0.05);
            assert_eq!(row[bonus], 1.0 / 3.0);
        }
        // Re-serialization of parsed values reproduces the text.
        let mut again = String::from("step,state_0,action,r_ext,bonus,done,coverage\n");
        for row in &table.rows {
            let _ = writeln!(
                again,
                "{},{},{},{},{},{},{}",
                row[0] as usize, row[1], row[2] as usize, row[3], row[4], row[5] as u8, row[6]
            );
        }
        assert_eq!(csv, again);
    }

    #[test]
    fn prefixed_columns_resolve_in_order() {
        let table = CsvTable {
            header: ["step", "state_0", "state_1", "action", "r_ext"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rows: vec![],
        };
        assert_eq!(table.prefixed_cols("state"), vec![1, 2]);
        assert!(table.prefixed_cols("nope").is_empty());
    }

    #[test]
    fn aggregate_round_trips() {
        let rows = vec![
            AggregateRow {
                step: 0,
                metric: "coverage".into(),
                median: 0.25,
                q25: 0.2,
                q75: 1.0 / 3.0,
            },
            AggregateRow {
                step: 1,
                metric: "coverage".into(),
                median: 0.5,
                q25: 0.4,
                q75: 0.6,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.csv");
        std::fs::write(&path, aggregate_to_csv(&rows)).unwrap();
        assert_eq!(read_aggregate(&path).unwrap(), rows);
    }
}
