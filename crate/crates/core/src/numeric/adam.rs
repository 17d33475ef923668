use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Moment accumulators for one flat parameter vector.
///
/// Each coordinate keeps its own update count, so bias correction stays
/// exact for coordinates that sit out some steps behind an update mask.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    updates: Vec<u32>,
    steps: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            updates: vec![0; len],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Bias-corrected Adam update, applied only where `update_mask` is true.
    ///
    /// Coordinates outside the mask keep their parameter value and both
    /// moments bit-for-bit.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        update_mask: Option<&[bool]>,
    ) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::shape(format!(
                "adam state of {n} for {} params and {} grads",
                params.len(),
                grads.len()
            )));
        }
        if let Some(mask) = update_mask {
            if mask.len() != n {
                return Err(Error::shape(format!("update mask of {} for {n}", mask.len())));
            }
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        for i in 0..n {
            if update_mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.updates[i] += 1;
            let t = self.updates[i] as i32;
            let m_hat = self.m[i] / (1.0 - beta1.powi(t));
            let v_hat = self.v[i] / (1.0 - beta2.powi(t));
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
