//! Bias-corrected Adam, configured for gradient *ascent* on the model
//! objectives (marginal likelihood, evidence lower bounds).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Defaults: step 0.01, decay 0.9/0.999, epsilon 1e-8.
    pub fn new(dim: usize, step_size: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One ascent update in place. `grad` is the gradient of the objective
    /// being maximized.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "adam state dim {} vs params {} / grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimization("non-finite gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_moments_untouched() {
        let mut state = AdamState::new(3, 0.05);
        let mut params = vec![1.0, -2.0, 0.5];
        state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert!(state.m.iter().all(|&x| x == 0.0));
        assert!(state.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_magnitude_equals_step_size() {
        let mut state = AdamState::new(2, 0.01);
        let mut params = vec![0.0, 0.0];
        state.step(&mut params, &[3.7, -0.2]).unwrap();
        // Bias-corrected ratio is sign(g) at t = 1 (up to epsilon).
        assert!((params[0] - 0.01).abs() < 1e-6);
        assert!((params[1] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn matches_independent_reference_trace_on_quadratic() {
        // Maximize -0.5 * (x - 3)^2 - 2 * (y + 1)^2 from the origin.
        let grad = |p: &[f64]| vec![-(p[0] - 3.0), -4.0 * (p[1] + 1.0)];

        let mut state = AdamState::new(2, 0.05);
        let mut params = vec![0.0, 0.0];

        // Independent re-implementation.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
        let mut rm = [0.0; 2];
        let mut rv = [0.0; 2];
        let mut rp = [0.0; 2];

        for t in 1..=200 {
            let g = grad(&params);
            state.step(&mut params, &g).unwrap();

            let gr = [-(rp[0] - 3.0), -4.0 * (rp[1] + 1.0)];
            for i in 0..2 {
                rm[i] = b1 * rm[i] + (1.0 - b1) * gr[i];
                rv[i] = b2 * rv[i] + (1.0 - b2) * gr[i] * gr[i];
                let mh = rm[i] / (1.0 - b1_pow(b1, t));
                let vh = rv[i] / (1.0 - b1_pow(b2, t));
                rp[i] += lr * mh / (vh.sqrt() + eps);
            }
            for i in 0..2 {
                assert!(
                    (params[i] - rp[i]).abs() < 1e-10,
                    "step {t} coord {i}: {} vs {}",
                    params[i],
                    rp[i]
                );
            }
        }
        // Converging toward the maximizer.
        assert!((params[0] - 3.0).abs() < 1.0);
    }

    fn b1_pow(b: f64, t: usize) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut state = AdamState::new(1, 0.01);
        let mut params = vec![0.0];
        assert!(state.step(&mut params, &[f64::NAN]).is_err());
        assert!(params[0].is_finite());
    }
}
