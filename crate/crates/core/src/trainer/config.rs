use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::{CwiConfig, ExtractionMode, WeightCriterion};
use crate::numeric::AdamConfig;

/// Training method run over a task stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Trire,
    /// Sequential fine-tuning without any support.
    Sgd,
    /// Experience rehearsal: current loss plus weighted buffer loss.
    Er,
    /// All tasks merged into one (upper bound).
    Joint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Trire => "trire",
            Method::Sgd => "sgd",
            Method::Er => "er",
            Method::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trire" => Ok(Method::Trire),
            "sgd" => Ok(Method::Sgd),
            "er" => Ok(Method::Er),
            "joint" => Ok(Method::Joint),
            other => Err(Error::input(format!("unknown method `{other}`"))),
        }
    }
}

/// Epochs of the Retain, Revise and Rewind phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSplit {
    pub retain: usize,
    pub revise: usize,
    pub rewind: usize,
}

impl EpochSplit {
    /// Splits a budget 3:1:1, giving any remainder to Retain.
    pub fn from_total(total: usize) -> Self {
        let unit = total / 5;
        Self {
            retain: total - 2 * unit,
            revise: unit,
            rewind: unit,
        }
    }

    pub fn total(&self) -> usize {
        self.retain + self.revise + self.rewind
    }
}

impl Default for EpochSplit {
    fn default() -> Self {
        Self::from_total(50)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriREConfig {
    /// Retain and Rewind learning rate.
    pub lr: f64,
    /// Revise learning rate.
    pub lr_revise: f64,
    /// Weight of the buffer cross-entropy.
    pub lambda: f64,
    /// Weight of the consistency loss against the EMA model.
    pub lambda_cr: f64,
    pub cwi: CwiConfig,
    pub criterion: WeightCriterion,
    pub extraction: ExtractionMode,
    /// EMA decay.
    pub mu: f64,
    /// EMA update probability per iteration.
    pub zeta: f64,
    /// Fraction of the Retain epochs after which the rewind point is saved.
    pub rewind_percentile: f64,
    pub epochs: EpochSplit,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub revise_on: bool,
    pub rewind_on: bool,
    pub adam: AdamConfig,
    /// Evaluate the working model instead of the EMA model.
    pub eval_working: bool,
}

impl Default for TriREConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            lr_revise: 0.0001,
            lambda: 0.04,
            lambda_cr: 1.0,
            cwi: CwiConfig::default(),
            criterion: WeightCriterion::Cwi,
            extraction: ExtractionMode::Deterministic,
            mu: 0.999,
            zeta: 0.12,
            rewind_percentile: 0.9,
            epochs: EpochSplit::default(),
            batch_size: 32,
            buffer_capacity: 200,
            seed: 0,
            revise_on: true,
            rewind_on: true,
            adam: AdamConfig::default(),
            eval_working: false,
        }
    }
}

impl TriREConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(None, m));
        if !(self.lr > self.lr_revise && self.lr_revise >= 0.0) {
            return bad(format!(
                "lr ({}) must exceed lr_revise ({}) and lr_revise must be non-negative",
                self.lr, self.lr_revise
            ));
        }
        if !(self.rewind_percentile > 0.0 && self.rewind_percentile < 1.0) {
            return bad(format!("rewind_percentile {} outside (0, 1)", self.rewind_percentile));
        }
        let e = self.epochs;
        if e.retain == 0 || e.revise == 0 || e.rewind == 0 {
            return bad(format!("every phase needs at least one epoch, got {}:{}:{}", e.retain, e.revise, e.rewind));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu {} outside (0, 1)", self.mu));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad(format!("zeta {} outside (0, 1]", self.zeta));
        }
        if !(self.lambda >= 0.0 && self.lambda_cr >= 0.0) {
            return bad("lambda and lambda_cr must be non-negative".into());
        }
        self.cwi.validate().map_err(|e| Error::config(None, e.to_string()))
    }

    /// Retain epoch (1-based) at whose end the rewind point is saved.
    pub fn rewind_epoch(&self) -> usize {
        ((self.rewind_percentile * self.epochs.retain as f64).round() as usize).clamp(1, self.epochs.retain.max(1))
    }
}
