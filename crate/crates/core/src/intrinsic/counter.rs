//! Visitation counts over discretized (state, action) cells.

use std::collections::HashMap;

use crate::envs::{Action, ActionSpec, Environment};
use crate::error::{Error, Result};
use crate::intrinsic::BonusSpec;
use crate::numerics::linalg::Vector;

/// Count table over a fixed discretization of the encoded state space and
/// the action space. Discrete actions are exact cells; continuous actions
/// are binned per dim. Counts only grow (on `record`), and queries never
/// mutate the table.
pub struct VisitCounter {
    state_lo: Vector,
    state_hi: Vector,
    state_bins: usize,
    action_spec: ActionSpec,
    action_bins: usize,
    counts: HashMap<Vec<u32>, u64>,
}

fn bin(x: f64, lo: f64, hi: f64, bins: usize) -> u32 {
    if hi <= lo {
        return 0;
    }
    let t = (x - lo) / (hi - lo);
    ((t * bins as f64) as i64).clamp(0, bins as i64 - 1) as u32
}

impl VisitCounter {
    pub fn new(
        state_lo: Vector,
        state_hi: Vector,
        state_bins: usize,
        action_spec: ActionSpec,
        action_bins: usize,
    ) -> Self {
        assert_eq!(state_lo.len(), state_hi.len());
        assert!(state_bins >= 1 && action_bins >= 1);
        Self {
            state_lo,
            state_hi,
            state_bins,
            action_spec,
            action_bins,
            counts: HashMap::new(),
        }
    }

    pub fn for_env(env: &dyn Environment, spec: &BonusSpec) -> Self {
        let (lo, hi) = env.encoded_bounds();
        Self::new(
            lo,
            hi,
            spec.count_state_bins,
            env.action_spec().clone(),
            spec.count_action_bins,
        )
    }

    fn cell(&self, state_enc: &Vector, action: &Action) -> Result<Vec<u32>> {
        if state_enc.len() != self.state_lo.len() {
            return Err(Error::DimensionMismatch {
                context: "visit counter state",
                expected: self.state_lo.len(),
                got: state_enc.len(),
            });
        }
        let mut key = Vec::with_capacity(state_enc.len() + 2);
        for i in 0..state_enc.len() {
            key.push(bin(
                state_enc[i],
                self.state_lo[i],
                self.state_hi[i],
                self.state_bins,
            ));
        }
        match (action, &self.action_spec) {
            (Action::Discrete(a), ActionSpec::Discrete { n }) => {
                if *a >= *n {
                    return Err(Error::InvalidAction(format!("discrete action {a} >= {n}")));
                }
                key.push(*a as u32);
            }
            (Action::Continuous(v), ActionSpec::Continuous { low, high }) => {
                if v.len() != low.len() {
                    return Err(Error::DimensionMismatch {
                        context: "visit counter action",
                        expected: low.len(),
                        got: v.len(),
                    });
                }
                for i in 0..v.len() {
                    key.push(bin(v[i], low[i], high[i], self.action_bins));
                }
            }
            _ => {
                return Err(Error::InvalidAction(
                    "action kind does not match the environment's action space".into(),
                ))
            }
        }
        Ok(key)
    }

    pub fn record(&mut self, state_enc: &Vector, action: &Action) -> Result<()> {
        let key = self.cell(state_enc, action)?;
        *self.counts.entry(key).or_insert(0) += 1;
        Ok(())
    }

    pub fn count(&self, state_enc: &Vector, action: &Action) -> Result<u64> {
        Ok(self.counts.get(&self.cell(state_enc, action)?).copied().unwrap_or(0))
    }

    /// Unscaled count measure 1 / max(1, N(cell)).
    pub fn bonus(&self, state_enc: &Vector, action: &Action) -> Result<f64> {
        Ok(1.0 / self.count(state_enc, action)?.max(1) as f64)
    }

    pub fn visited_cells(&self) -> usize {
        self.counts.len()
    }
}
