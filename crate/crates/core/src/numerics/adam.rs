//! Adam optimizer over flat parameter walks.
//!
//! One optimizer instance owns first/second-moment state for a fixed number
//! of parameters; callers provide matching parameter/gradient iterations in
//! a stable order (see `Mlp::params_mut`).

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update step. `params` and `grads` must walk the same parameters in
    /// the same order used at every previous step.
    pub fn step<'a>(
        &mut self,
        lr: f64,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut count = 0;
        for (i, (p, g)) in params.zip(grads).enumerate() {
            debug_assert!(i < self.m.len(), "more params than optimizer state");
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + self.eps);
            count = i + 1;
        }
        debug_assert_eq!(count, self.m.len(), "parameter walk shorter than state");
    }

    /// Slice convenience for flat parameter vectors.
    pub fn step_slice(&mut self, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.step(lr, params.iter_mut(), grads.iter().copied());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(3);
        let mut p = [1.0, -2.0, 0.5];
        adam.step_slice(0.1, &mut p, &[0.0; 3]);
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // p=0, g=1, lr=0.1: mhat=1, vhat=1 -> p = -0.1/(1+eps)
        let mut adam = Adam::new(1);
        let mut p = [0.0];
        adam.step_slice(0.1, &mut p, &[1.0]);
        assert_abs_diff_eq!(p[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn deterministic_across_instances() {
        let run = || {
            let mut adam = Adam::new(2);
            let mut p = [0.3, -0.7];
            for k in 0..50 {
                let g = [p[0] * 2.0 + k as f64 * 0.01, p[1].sin()];
                adam.step_slice(0.05, &mut p, &g);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(1);
        let mut p = [5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            adam.step_slice(0.05, &mut p, &g);
        }
        assert_abs_diff_eq!(p[0], 1.5, epsilon = 1e-3);
    }
}
