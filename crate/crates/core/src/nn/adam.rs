use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one bias-corrected update: θ -= lr · m̂ / (√v̂ + ε).
    pub fn update(&mut self, params: &mut dyn Parameters, grads: &[f64]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                actual: grads.len(),
            });
        }
        if params.param_count() != grads.len() {
            return Err(Error::Shape {
                expected: params.param_count(),
                actual: grads.len(),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "gradient {i} of {} is {} at optimizer step {}",
                grads.len(),
                grads[i],
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_params_mut(&mut |p| {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            i += 1;
        });
        Ok(())
    }
}
