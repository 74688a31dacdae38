use serde::{Deserialize, Serialize};

use super::ParamView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Bias-corrected Adam over an ordered list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            states: Vec::new(),
        }
    }

    /// Apply one update and zero the gradients. Blocks must be presented in
    /// the same order every step. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [ParamView<'_>], lr: f32) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| p.grads.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient {
                block: bad.name.to_string(),
            });
        }
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|p| AdamState {
                    m: vec![0.0; p.values.len()],
                    v: vec![0.0; p.values.len()],
                })
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::Dimension {
                what: "adam parameter blocks",
                expected: self.states.len(),
                found: params.len(),
            });
        }

        self.step_count += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        // θ -= lr · m̂ / (sqrt(v̂) + eps), with the bias corrections folded in.
        let step_size = (lr as f64 / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;

        for (p, state) in params.iter_mut().zip(&mut self.states) {
            for (((w, g), m), v) in p
                .values
                .iter_mut()
                .zip(p.grads.iter_mut())
                .zip(&mut state.m)
                .zip(&mut state.v)
            {
                let grad = *g as f32;
                *g = 0.0;
                *m = beta1 * *m + (1.0 - beta1) * grad;
                *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                *w -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
