//! Mountain Car with a sparse goal reward and optional transition noise.
//!
//! Classic underpowered-car dynamics; reaching `x >= 0.5` pays 1.0 and ends
//! the episode. Noise is additive Gaussian on the next state, with the std
//! either fixed or state-dependent (larger at high speed and near the valley
//! bottom), drawn from the state the action is taken in.

use serde::{Deserialize, Serialize};

use super::{min_max_encode, Action, ActionSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;
pub const FORCE: f64 = 0.001;
pub const GRAVITY: f64 = 0.0025;
/// Bottom of the valley: argmin of the height profile sin(3x).
pub const VALLEY_POSITION: f64 = -std::f64::consts::FRAC_PI_6;
pub const DEFAULT_STEP_LIMIT: usize = 1000;

fn default_sigma() -> f64 {
    0.005
}
fn default_noise_coeff() -> f64 {
    2.0
}
fn default_valley_width() -> f64 {
    0.05
}

/// Transition-noise configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseMode {
    None,
    /// Fixed std on both state dimensions.
    Homoskedastic {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// State-dependent std: `sigma_base * (1 + c_v*|v|/v_max +
    /// c_p*exp(-(x - x_valley)^2 / width))`.
    Heteroskedastic {
        #[serde(default = "default_sigma")]
        sigma_base: f64,
        #[serde(default = "default_noise_coeff")]
        c_v: f64,
        #[serde(default = "default_noise_coeff")]
        c_p: f64,
        #[serde(default = "default_valley_width")]
        width: f64,
    },
}

impl NoiseMode {
    pub fn heteroskedastic_default() -> Self {
        NoiseMode::Heteroskedastic {
            sigma_base: 0.005,
            c_v: 2.0,
            c_p: 2.0,
            width: 0.05,
        }
    }

    pub fn homoskedastic_default() -> Self {
        NoiseMode::Homoskedastic { sigma: 0.005 }
    }

    /// Noise std at a given pre-step state; 0 for the noiseless mode.
    pub fn sigma(&self, pos: f64, vel: f64) -> f64 {
        match self {
            NoiseMode::None => 0.0,
            NoiseMode::Homoskedastic { sigma } => *sigma,
            NoiseMode::Heteroskedastic {
                sigma_base,
                c_v,
                c_p,
                width,
            } => {
                let d = pos - VALLEY_POSITION;
                sigma_base * (1.0 + c_v * vel.abs() / MAX_SPEED + c_p * (-d * d / width).exp())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MountainCarEnv {
    noise: NoiseMode,
    spec: ActionSpec,
    step_limit: usize,
    pos: f64,
    vel: f64,
    steps: usize,
}

impl MountainCarEnv {
    pub fn new(noise: NoiseMode) -> Self {
        Self::with_step_limit(noise, DEFAULT_STEP_LIMIT)
    }

    pub fn with_step_limit(noise: NoiseMode, step_limit: usize) -> Self {
        Self {
            noise,
            spec: ActionSpec::Discrete { n: 3 },
            step_limit,
            pos: -0.5,
            vel: 0.0,
            steps: 0,
        }
    }

    pub fn position(&self) -> f64 {
        self.pos
    }

    pub fn velocity(&self) -> f64 {
        self.vel
    }

    /// Test/probe hook.
    pub fn set_state(&mut self, pos: f64, vel: f64) {
        self.pos = pos.clamp(MIN_POSITION, MAX_POSITION);
        self.vel = vel.clamp(-MAX_SPEED, MAX_SPEED);
    }

    pub fn noise_mode(&self) -> &NoiseMode {
        &self.noise
    }

    fn raw(&self) -> Vector {
        Vector::from_vec(vec![self.pos, self.vel])
    }
}

impl Environment for MountainCarEnv {
    fn name(&self) -> &'static str {
        "mountain_car"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_spec(&self) -> &ActionSpec {
        &self.spec
    }

    fn step_limit(&self) -> usize {
        self.step_limit
    }

    fn reset(&mut self, rng: &mut Rng) -> Vector {
        self.pos = rng.uniform(-0.6, -0.4);
        self.vel = 0.0;
        self.steps = 0;
        self.raw()
    }

    fn step(&mut self, action: &Action, rng: &mut Rng) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(i) if *i < 3 => *i as f64,
            other => {
                return Err(Error::InvalidAction(format!(
                    "mountain car takes discrete actions 0..3, got {other:?}"
                )))
            }
        };
        let sigma = self.noise.sigma(self.pos, self.vel);
        let mut vel = self.vel + FORCE * (a - 1.0) - GRAVITY * (3.0 * self.pos).cos();
        vel = vel.clamp(-MAX_SPEED, MAX_SPEED);
        let mut pos = self.pos + vel;
        if sigma > 0.0 {
            pos += sigma * rng.normal();
            vel += sigma * rng.normal();
            vel = vel.clamp(-MAX_SPEED, MAX_SPEED);
        }
        pos = pos.clamp(MIN_POSITION, MAX_POSITION);
        if pos <= MIN_POSITION && vel < 0.0 {
            vel = 0.0;
        }
        self.pos = pos;
        self.vel = vel;
        self.steps += 1;
        let solved = pos >= GOAL_POSITION;
        Ok(StepResult {
            next_state: self.raw(),
            reward: if solved { 1.0 } else { 0.0 },
            done: solved || self.steps >= self.step_limit,
        })
    }

    fn encode_state(&self, raw: &Vector) -> Vector {
        Vector::from_vec(vec![
            min_max_encode(raw[0], MIN_POSITION, MAX_POSITION),
            min_max_encode(raw[1], -MAX_SPEED, MAX_SPEED),
        ])
    }

    fn encoded_bounds(&self) -> (Vector, Vector) {
        (Vector::from_element(2, -1.0), Vector::from_element(2, 1.0))
    }

    fn coverage_cell(&self, raw: &Vector) -> usize {
        let gx = grid_index(raw[0], MIN_POSITION, MAX_POSITION, COVERAGE_BINS);
        let gv = grid_index(raw[1], -MAX_SPEED, MAX_SPEED, COVERAGE_BINS);
        gx * COVERAGE_BINS + gv
    }

    fn coverage_cells(&self) -> usize {
        COVERAGE_BINS * COVERAGE_BINS
    }

    fn coverage_grid_desc(&self) -> String {
        format!(
            "{COVERAGE_BINS}x{COVERAGE_BINS} grid over position [{MIN_POSITION}, {MAX_POSITION}] x velocity [-{MAX_SPEED}, {MAX_SPEED}]"
        )
    }
}

pub const COVERAGE_BINS: usize = 20;

#[inline]
fn grid_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn deterministic_step_matches_hand_computation() {
        let mut env = MountainCarEnv::new(NoiseMode::None);
        let mut rng = Rng::new(0);
        env.set_state(-0.5, 0.0);
        env.step(&Action::Discrete(2), &mut rng).unwrap();
        let v = 0.001 - 0.0025 * (-1.5f64).cos();
        assert_abs_diff_eq!(env.velocity(), v, epsilon = 1e-15);
        assert_abs_diff_eq!(env.position(), -0.5 + v, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_trajectory_is_bit_identical() {
        let run = || {
            let mut env = MountainCarEnv::new(NoiseMode::None);
            let mut rng = Rng::new(3);
            env.reset(&mut rng);
            let mut tape = Vec::new();
            for t in 0..200 {
                let r = env.step(&Action::Discrete(t % 3), &mut rng).unwrap();
                tape.push((r.next_state[0].to_bits(), r.next_state[1].to_bits()));
            }
            tape
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reset_range_and_zero_velocity() {
        let mut env = MountainCarEnv::new(NoiseMode::None);
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let s = env.reset(&mut rng);
            assert!(s[0] >= -0.6 && s[0] < -0.4);
            assert_eq!(s[1], 0.0);
        }
    }

    #[test]
    fn bounds_hold_under_noise() {
        let mut env = MountainCarEnv::new(NoiseMode::Homoskedastic { sigma: 0.05 });
        let mut rng = Rng::new(4);
        env.reset(&mut rng);
        for _ in 0..10_000 {
            let a = Action::Discrete(rng.usize_below(3));
            let r = env.step(&a, &mut rng).unwrap();
            assert!(r.next_state[0] >= MIN_POSITION && r.next_state[0] <= MAX_POSITION);
            assert!(r.next_state[1].abs() <= MAX_SPEED);
            if r.done {
                env.reset(&mut rng);
            }
        }
    }

    #[test]
    fn homoskedastic_noise_has_the_configured_scale() {
        // Compare realized position noise against the deterministic step.
        let sigma = 0.004;
        let mut noisy = MountainCarEnv::new(NoiseMode::Homoskedastic { sigma });
        let mut rng = Rng::new(12);
        let mut residuals = Vec::new();
        for _ in 0..10_000 {
            noisy.set_state(-0.5, 0.0);
            noisy.step(&Action::Discrete(1), &mut rng).unwrap();
            let mut clean = MountainCarEnv::new(NoiseMode::None);
            clean.set_state(-0.5, 0.0);
            clean.step(&Action::Discrete(1), &mut rng).unwrap();
            residuals.push(noisy.position() - clean.position());
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(
            (std - sigma).abs() / sigma < 0.05,
            "empirical std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn heteroskedastic_sigma_peaks_at_valley_and_speed() {
        let noise = NoiseMode::heteroskedastic_default();
        let base = 0.005;
        // At the valley bottom, at rest: 1 + c_p = 3x base.
        assert_abs_diff_eq!(noise.sigma(VALLEY_POSITION, 0.0), 3.0 * base, epsilon = 1e-12);
        // Far from the valley at rest: close to base.
        assert!(noise.sigma(0.5, 0.0) < 1.01 * base);
        // Max speed far from valley: 1 + c_v = 3x base.
        assert_abs_diff_eq!(
            noise.sigma(0.5, MAX_SPEED),
            3.0 * base + noise.sigma(0.5, 0.0) - base,
            epsilon = 1e-6
        );
        // Monotone in |v|.
        assert!(noise.sigma(0.0, 0.05) > noise.sigma(0.0, 0.01));
    }

    #[test]
    fn goal_pays_one_and_terminates() {
        let mut env = MountainCarEnv::new(NoiseMode::None);
        let mut rng = Rng::new(1);
        env.set_state(0.45, MAX_SPEED);
        let r = env.step(&Action::Discrete(2), &mut rng).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
    }

    #[test]
    fn left_wall_zeroes_velocity() {
        let mut env = MountainCarEnv::new(NoiseMode::None);
        let mut rng = Rng::new(1);
        env.set_state(-1.2, -0.05);
        env.step(&Action::Discrete(0), &mut rng).unwrap();
        assert_eq!(env.position(), MIN_POSITION);
        assert_eq!(env.velocity(), 0.0);
    }

    #[test]
    fn encoding_example() {
        let env = MountainCarEnv::new(NoiseMode::None);
        let enc = env.encode_state(&Vector::from_vec(vec![-0.3, 0.0]));
        assert_abs_diff_eq!(enc[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(enc[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_mode_consumes_no_randomness() {
        let mut env1 = MountainCarEnv::new(NoiseMode::None);
        let mut rng1 = Rng::new(5);
        env1.set_state(-0.5, 0.0);
        env1.step(&Action::Discrete(0), &mut rng1).unwrap();
        let mut rng2 = Rng::new(5);
        assert_eq!(rng1.u64(), rng2.u64());
    }
}
