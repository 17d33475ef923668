//! Subnetwork extraction and mask algebra.
//!
//! Extraction runs in two stages. Activation pruning turns k-WTA win
//! counts into a per-layer neuron mask; weight pruning then keeps, per
//! layer, the best-scoring fraction of the weights that feed a retained
//! neuron. A neuron's bias belongs to the neuron and is retained with it.

use serde::{Deserialize, Serialize};

use crate::data::{assemble, Example};
use crate::error::{Error, Result};
use crate::model::{winners, ActivationCounters, Layout, MlpNet};
use crate::numeric::{softmax_ce, softmax_ce_rows, Rng};

/// Samples per forward/backward chunk when scoring.
const SCORING_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronMask {
    pub layers: Vec<Vec<bool>>,
}

impl NeuronMask {
    pub fn retained(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.iter().filter(|&&b| b).count()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Keep the `ceil(kappa * width)` most frequent winners.
    #[default]
    Deterministic,
    /// Keep neuron `i` with probability `count_i / max_j count_j`, topped up
    /// to at least `ceil(kappa * width)` from the highest counts.
    Bernoulli,
}

/// Highest-count-first neuron order, ties to the lower index.
fn by_count(counts: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

pub fn extract_neuron_mask(
    counters: &ActivationCounters,
    kappa: f64,
    mode: ExtractionMode,
    rng: &mut Rng,
) -> Result<NeuronMask> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::input(format!("kappa {kappa} outside (0, 1]")));
    }
    if counters.layers.is_empty() || counters.total() == 0 {
        return Err(Error::Degenerate(
            "activation counters are empty; the retain phase has not run".into(),
        ));
    }
    let layers = counters
        .layers
        .iter()
        .map(|counts| {
            let width = counts.len();
            let k = winners(kappa, width);
            let mut keep = vec![false; width];
            let order = by_count(counts);
            if mode == ExtractionMode::Bernoulli {
                let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
                for (i, &c) in counts.iter().enumerate() {
                    keep[i] = rng.bernoulli(c as f64 / max);
                }
            }
            let mut have = keep.iter().filter(|&&b| b).count();
            for &i in &order {
                if have >= k {
                    break;
                }
                if !keep[i] {
                    keep[i] = true;
                    have += 1;
                }
            }
            keep
        })
        .collect();
    Ok(NeuronMask { layers })
}

/// Neuron mask plus a boolean per extractor parameter (weights and biases,
/// in layout order). The classifier head is never part of a mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetworkMask {
    neurons: NeuronMask,
    weights: Vec<bool>,
}

impl SubnetworkMask {
    pub fn empty(layout: &Layout) -> Self {
        Self::filled(layout, false)
    }

    pub fn full(layout: &Layout) -> Self {
        Self::filled(layout, true)
    }

    fn filled(layout: &Layout, v: bool) -> Self {
        Self {
            neurons: NeuronMask {
                layers: layout.hidden_layers().iter().map(|l| vec![v; l.fan_out]).collect(),
            },
            weights: vec![v; layout.feature_len()],
        }
    }

    pub fn from_parts(neurons: NeuronMask, weights: Vec<bool>) -> Self {
        Self { neurons, weights }
    }

    pub fn neurons(&self) -> &NeuronMask {
        &self.neurons
    }

    pub fn weights(&self) -> &[bool] {
        &self.weights
    }

    fn check_aligned(&self, other: &SubnetworkMask) -> Result<()> {
        let widths = |m: &SubnetworkMask| m.neurons.layers.iter().map(Vec::len).collect::<Vec<_>>();
        if self.weights.len() != other.weights.len() || widths(self) != widths(other) {
            return Err(Error::shape("subnetwork masks have different shapes"));
        }
        Ok(())
    }

    fn zip_with(&self, other: &SubnetworkMask, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_aligned(other)?;
        Ok(Self {
            neurons: NeuronMask {
                layers: self
                    .neurons
                    .layers
                    .iter()
                    .zip(&other.neurons.layers)
                    .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                    .collect(),
            },
            weights: self.weights.iter().zip(&other.weights).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn union(&self, other: &SubnetworkMask) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &SubnetworkMask) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Elementwise negation of both parts. Used for update routing; the
    /// result is generally not neuron-consistent.
    pub fn complement(&self) -> Self {
        Self {
            neurons: NeuronMask {
                layers: self
                    .neurons
                    .layers
                    .iter()
                    .map(|l| l.iter().map(|&b| !b).collect())
                    .collect(),
            },
            weights: self.weights.iter().map(|&b| !b).collect(),
        }
    }

    /// Retained extractor parameters over all extractor parameters.
    pub fn density(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.iter().filter(|&&b| b).count() as f64 / self.weights.len() as f64
    }

    pub fn retained_count(&self) -> usize {
        self.weights.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.weights.iter().any(|&b| b)
    }

    /// True when every retained parameter feeds a retained neuron.
    pub fn is_consistent(&self, layout: &Layout) -> bool {
        layout.hidden_layers().iter().enumerate().all(|(li, l)| {
            l.range()
                .all(|p| !self.weights[p] || self.neurons.layers[li][l.output_neuron(p)])
        })
    }

    /// Optimizer mask over the full parameter vector: extractor entries take
    /// this mask's bits, head entries take `head`.
    pub fn update_set(&self, total: usize, head: bool) -> Vec<bool> {
        let mut set = self.weights.clone();
        set.resize(total, head);
        set
    }

    /// Retained parameters per hidden layer.
    pub fn retained_per_layer(&self, layout: &Layout) -> Vec<usize> {
        layout
            .hidden_layers()
            .iter()
            .map(|l| self.weights[l.range()].iter().filter(|&&b| b).count())
            .collect()
    }
}

/// Score used to rank weights during pruning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightCriterion {
    /// `|theta|`.
    Magnitude,
    /// Empirical Fisher diagonal on the current task.
    Fisher,
    /// Magnitude plus current-task and buffer gradient magnitudes.
    #[default]
    Cwi,
}

impl WeightCriterion {
    pub fn name(self) -> &'static str {
        match self {
            Self::Magnitude => "magnitude",
            Self::Fisher => "fisher",
            Self::Cwi => "cwi",
        }
    }
}

impl std::str::FromStr for WeightCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Self::Magnitude),
            "fisher" => Ok(Self::Fisher),
            "cwi" => Ok(Self::Cwi),
            other => Err(Error::input(format!("unknown pruning criterion `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwiConfig {
    /// Weight of the current-task gradient term.
    pub alpha: f64,
    /// Weight of the buffer gradient term.
    pub beta: f64,
    /// Fraction of candidate weights retained per layer.
    pub gamma: f64,
    /// Fraction of neurons retained per layer.
    pub kappa: f64,
    /// Cap on current-task samples used for scoring.
    pub scoring_cap: usize,
}

impl Default for CwiConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.2,
            kappa: 0.5,
            scoring_cap: 2048,
        }
    }
}

impl CwiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::input("alpha and beta must be non-negative"));
        }
        for (name, v) in [("gamma", self.gamma), ("kappa", self.kappa)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::input(format!("{name} {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Gradient of the mean cross-entropy over `samples`, optionally restricted
/// to the classes in `class_mask`.
fn mean_ce_gradient(net: &MlpNet, samples: &[Example], class_mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; net.layout().total()];
    let n = samples.len() as f64;
    for chunk in samples.chunks(SCORING_CHUNK) {
        let (x, y) = assemble(chunk);
        let (logits, trace) = net.forward(&x, None, None)?;
        let (_, g) = softmax_ce(&logits, &y, class_mask)?;
        let grads = net.backward(&trace, &g)?;
        let w = chunk.len() as f64 / n;
        for (a, v) in acc.iter_mut().zip(&grads.0) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// `|theta|` for every extractor parameter.
pub fn magnitude_scores(net: &MlpNet) -> Vec<f64> {
    net.params()[..net.layout().feature_len()].iter().map(|v| v.abs()).collect()
}

/// Continual weight importance of every extractor parameter:
/// `|theta| + alpha |dL~(D_t)/dtheta| + beta |dL(D_m)/dtheta|`.
///
/// The current-task loss only sees the logits in `task_classes`. The buffer
/// term is skipped when `buffer` is empty.
pub fn cwi_scores(
    net: &MlpNet,
    current: &[Example],
    buffer: &[Example],
    alpha: f64,
    beta: f64,
    task_classes: &[bool],
) -> Result<Vec<f64>> {
    let f = net.layout().feature_len();
    let mut scores = magnitude_scores(net);
    if alpha != 0.0 && !current.is_empty() {
        let g = mean_ce_gradient(net, current, Some(task_classes))?;
        for (s, v) in scores.iter_mut().zip(&g[..f]) {
            *s += alpha * v.abs();
        }
    }
    if beta != 0.0 && !buffer.is_empty() {
        let g = mean_ce_gradient(net, buffer, None)?;
        for (s, v) in scores.iter_mut().zip(&g[..f]) {
            *s += beta * v.abs();
        }
    }
    Ok(scores)
}

/// Mean squared per-sample gradient of the (optionally class-masked) loss.
pub fn fisher_scores(net: &MlpNet, samples: &[Example], class_mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::input("fisher scoring needs at least one sample"));
    }
    let f = net.layout().feature_len();
    let mut acc = vec![0.0; net.layout().total()];
    for chunk in samples.chunks(SCORING_CHUNK) {
        let (x, y) = assemble(chunk);
        let (logits, trace) = net.forward(&x, None, None)?;
        let (_, per_row) = softmax_ce_rows(&logits, &y, class_mask)?;
        let sq = net.squared_grad_sum(&trace, &per_row)?;
        for (a, v) in acc.iter_mut().zip(&sq.0) {
            *a += v;
        }
    }
    let n = samples.len() as f64;
    Ok(acc[..f].iter().map(|v| v / n).collect())
}

/// Weight pruning: for each hidden layer, among weights whose output neuron
/// is retained, keep the top `ceil(gamma * candidates)` by score (ties go to
/// the lower index). Biases of retained neurons are kept.
pub fn select_weights(layout: &Layout, neurons: NeuronMask, scores: &[f64], gamma: f64) -> Result<SubnetworkMask> {
    if scores.len() != layout.feature_len() {
        return Err(Error::shape(format!(
            "{} scores for {} extractor parameters",
            scores.len(),
            layout.feature_len()
        )));
    }
    if neurons.layers.len() != layout.hidden_layers().len()
        || neurons.layers.iter().zip(layout.hidden_layers()).any(|(n, l)| n.len() != l.fan_out)
    {
        return Err(Error::shape("neuron mask does not match the layout"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::input(format!("gamma {gamma} outside (0, 1]")));
    }
    let mut weights = vec![false; layout.feature_len()];
    for (li, l) in layout.hidden_layers().iter().enumerate() {
        let keep_neuron = &neurons.layers[li];
        let mut candidates: Vec<usize> = l
            .weight
            .clone()
            .filter(|&p| keep_neuron[l.output_neuron(p)])
            .collect();
        let quota = ((gamma * candidates.len() as f64).ceil() as usize).min(candidates.len());
        candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &p in &candidates[..quota] {
            weights[p] = true;
        }
        for (j, &k) in keep_neuron.iter().enumerate() {
            weights[l.bias.start + j] = k;
        }
    }
    Ok(SubnetworkMask { neurons, weights })
}

/// Data handed to extraction for gradient-based criteria.
pub struct ScoringSets<'a> {
    pub current: &'a [Example],
    pub buffer: &'a [Example],
    pub task_classes: &'a [bool],
}

/// Full extraction pipeline producing the current task's subnetwork.
pub fn extract_subnetwork(
    net: &MlpNet,
    counters: &ActivationCounters,
    config: &CwiConfig,
    criterion: WeightCriterion,
    mode: ExtractionMode,
    sets: &ScoringSets<'_>,
    rng: &mut Rng,
) -> Result<SubnetworkMask> {
    config.validate()?;
    let neurons = extract_neuron_mask(counters, config.kappa, mode, rng)?;
    let scores = match criterion {
        WeightCriterion::Magnitude => magnitude_scores(net),
        WeightCriterion::Fisher => fisher_scores(net, sets.current, Some(sets.task_classes))?,
        WeightCriterion::Cwi => cwi_scores(
            net,
            sets.current,
            sets.buffer,
            config.alpha,
            config.beta,
            sets.task_classes,
        )?,
    };
    select_weights(net.layout(), neurons, &scores, config.gamma)
}
