//! Stochastically updated exponential-moving-average mirror of the working
//! model, its consistency loss, and EMA inference.

use crate::error::{Error, Result};
use crate::model::{MlpNet, ParamVector};
use crate::numeric::{Matrix, Rng};

#[derive(Clone, Debug)]
pub struct EmaModel {
    net: MlpNet,
    mu: f64,
    zeta: f64,
}

impl EmaModel {
    /// Mirror initialised as an exact copy of `working`.
    pub fn new(working: &MlpNet, mu: f64, zeta: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::input(format!("ema decay {mu} outside (0, 1)")));
        }
        if !(0.0..=1.0).contains(&zeta) {
            return Err(Error::input(format!("ema update rate {zeta} outside [0, 1]")));
        }
        Ok(Self {
            net: working.clone(),
            mu,
            zeta,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn load(&mut self, params: &ParamVector) -> Result<()> {
        self.net.restore(params, None)
    }

    /// Draws one uniform `u`; when `zeta >= u` blends
    /// `ema <- mu * ema + (1 - mu) * working`. Returns whether it updated.
    pub fn maybe_update(&mut self, working: &MlpNet, rng: &mut Rng) -> Result<bool> {
        if working.params().len() != self.net.params().len() {
            return Err(Error::shape("ema and working model differ in size"));
        }
        let u = rng.uniform();
        if self.zeta < u || self.zeta == 0.0 {
            return Ok(false);
        }
        let mu = self.mu;
        for (e, &w) in self.net.params_mut().iter_mut().zip(working.params()) {
            *e = mu * *e + (1.0 - mu) * w;
        }
        Ok(true)
    }

    /// Logits of the EMA model; masked-out classes are set to negative
    /// infinity so no argmax can pick them.
    pub fn predict(&self, x: &Matrix, task_mask: Option<&[bool]>) -> Result<Matrix> {
        let mut logits = self.net.logits(x)?;
        if let Some(mask) = task_mask {
            apply_logit_mask(&mut logits, mask)?;
        }
        Ok(logits)
    }
}

pub(crate) fn apply_logit_mask(logits: &mut Matrix, mask: &[bool]) -> Result<()> {
    if mask.len() != logits.cols() {
        return Err(Error::shape(format!(
            "logit mask of {} for {} classes",
            mask.len(),
            logits.cols()
        )));
    }
    for r in 0..logits.rows() {
        for (v, &keep) in logits.row_mut(r).iter_mut().zip(mask) {
            if !keep {
                *v = f64::NEG_INFINITY;
            }
        }
    }
    Ok(())
}

/// Mean over the batch of the squared logit distance to the (constant) EMA
/// logits, with its gradient with respect to the working logits. `None`
/// signals an empty batch.
pub fn consistency_loss(working: &Matrix, ema: &Matrix) -> Result<Option<(f64, Matrix)>> {
    if working.shape() != ema.shape() {
        return Err(Error::shape(format!(
            "working logits {:?} vs ema logits {:?}",
            working.shape(),
            ema.shape()
        )));
    }
    let b = working.rows();
    if b == 0 {
        return Ok(None);
    }
    let mut grad = Matrix::zeros(b, working.cols());
    let mut loss = 0.0;
    for ((g, &w), &e) in grad.as_mut_slice().iter_mut().zip(working.as_slice()).zip(ema.as_slice()) {
        let d = w - e;
        loss += d * d;
        *g = 2.0 * d / b as f64;
    }
    Ok(Some((loss / b as f64, grad)))
}
