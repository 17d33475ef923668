use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gemm, MatRef, Matrix, Rng};

/// Widths of a fully-connected extractor plus a single classification head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            input,
            hidden,
            classes,
        }
    }
}

/// Location of one dense layer inside the flat parameter vector.
///
/// Weights are stored row-major as `fan_in x fan_out`, so column `j` holds
/// the incoming weights of output neuron `j`. Biases follow the weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl LayerSlots {
    /// Output neuron fed by the weight at flat position `pos`.
    pub fn output_neuron(&self, pos: usize) -> usize {
        if self.bias.contains(&pos) {
            pos - self.bias.start
        } else {
            (pos - self.weight.start) % self.fan_out
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.weight.start..self.bias.end
    }
}

/// Stable indexing of every parameter: extractor layers first, head last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    layers: Vec<LayerSlots>,
    total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut widths = vec![arch.input];
        widths.extend(&arch.hidden);
        widths.push(arch.classes);
        let mut off = 0;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = off..off + fan_in * fan_out;
                let bias = weight.end..weight.end + fan_out;
                off = bias.end;
                LayerSlots {
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                }
            })
            .collect();
        Self { layers, total: off }
    }

    /// Extractor layers, excluding the head.
    pub fn hidden_layers(&self) -> &[LayerSlots] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn head(&self) -> &LayerSlots {
        self.layers.last().expect("layout has a head")
    }

    pub fn all_layers(&self) -> &[LayerSlots] {
        &self.layers
    }

    /// Number of extractor parameters; they occupy `0..feature_len()`.
    pub fn feature_len(&self) -> usize {
        self.head().weight.start
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Named blocks for gradient-check reports.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let last = self.layers.len() - 1;
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let name = if i == last { "head".to_string() } else { format!("layer{i}") };
                [
                    (format!("{name}.weight"), l.weight.clone()),
                    (format!("{name}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }
}

/// Flat view of all parameters under a [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-hidden-layer, per-neuron k-WTA win counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationCounters {
    pub layers: Vec<Vec<u64>>,
}

impl ActivationCounters {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            layers: arch.hidden.iter().map(|&w| vec![0; w]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.iter_mut().for_each(|c| *c = 0);
        }
    }

    pub fn total(&self) -> u64 {
        self.layers.iter().flatten().sum()
    }
}

/// Number of winners for a layer of `width` neurons at retention `kappa`.
pub fn winners(kappa: f64, width: usize) -> usize {
    ((kappa * width as f64).ceil() as usize).min(width)
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Everything backward needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    generation: u64,
    /// Input of every layer: the batch, then each post-ReLU activation.
    inputs: Vec<Matrix>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }

    /// Post-ReLU activations of hidden layer `l`.
    pub fn hidden(&self, l: usize) -> &Matrix {
        &self.inputs[l + 1]
    }
}

/// Working model: ReLU extractor `f` followed by a linear head `g` over all classes.
#[derive(Debug)]
pub struct MlpNet {
    arch: Architecture,
    layout: Layout,
    params: ParamVector,
    generation: u64,
}

impl Clone for MlpNet {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            generation: next_generation(),
        }
    }
}

impl MlpNet {
    /// Uniform `±1/sqrt(fan_in)` initialisation of weights and biases.
    pub fn new(arch: Architecture, rng: &mut Rng) -> Self {
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total()];
        for l in layout.all_layers() {
            let bound = 1.0 / (l.fan_in.max(1) as f64).sqrt();
            for p in &mut params[l.range()] {
                *p = rng.uniform_range(-bound, bound);
            }
        }
        Self::from_params(arch, ParamVector(params)).expect("layout sized")
    }

    pub fn from_params(arch: Architecture, params: ParamVector) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.total() {
            return Err(Error::shape(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Self {
            arch,
            layout,
            params,
            generation: next_generation(),
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params.0
    }

    /// Mutable parameter access; invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params.0
    }

    pub fn snapshot(&self) -> ParamVector {
        self.params.clone()
    }

    /// Writes `saved` into the network wherever `subset` is true (everywhere
    /// when `subset` is `None`).
    pub fn restore(&mut self, saved: &ParamVector, subset: Option<&[bool]>) -> Result<()> {
        let n = self.params.len();
        if saved.len() != n || subset.is_some_and(|s| s.len() != n) {
            return Err(Error::shape("restore: snapshot or subset does not match network"));
        }
        let dst = self.params_mut();
        match subset {
            None => dst.copy_from_slice(&saved.0),
            Some(s) => {
                for ((d, &v), &keep) in dst.iter_mut().zip(&saved.0).zip(s) {
                    if keep {
                        *d = v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Forward pass. When both `kappa` and `counters` are given, every
    /// sample's top-`ceil(kappa * width)` post-ReLU activations in each hidden
    /// layer increment their neuron's counter (ties go to the lower index).
    /// Counting never changes the returned values.
    pub fn forward(
        &self,
        x: &Matrix,
        kappa: Option<f64>,
        mut counters: Option<&mut ActivationCounters>,
    ) -> Result<(Matrix, Trace)> {
        if x.cols() != self.arch.input {
            return Err(Error::shape(format!(
                "input width {} for a network expecting {}",
                x.cols(),
                self.arch.input
            )));
        }
        let batch = x.rows();
        let mut inputs = Vec::with_capacity(self.layout.all_layers().len());
        inputs.push(x.clone());
        let last = self.layout.all_layers().len() - 1;
        for (li, l) in self.layout.all_layers().iter().enumerate() {
            let mut out = vec![0.0; batch * l.fan_out];
            let bias = &self.params.0[l.bias.clone()];
            for row in out.chunks_mut(l.fan_out) {
                row.copy_from_slice(bias);
            }
            gemm(
                MatRef::new(inputs[li].as_slice(), batch, l.fan_in),
                MatRef::new(&self.params.0[l.weight.clone()], l.fan_in, l.fan_out),
                &mut out,
                1.0,
            );
            if li < last {
                out.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                });
                if let (Some(k), Some(c)) = (kappa, counters.as_deref_mut()) {
                    count_winners(&out, l.fan_out, winners(k, l.fan_out), &mut c.layers[li]);
                }
            }
            let out = Matrix::from_vec(batch, l.fan_out, out)?;
            if !out.is_finite() {
                return Err(Error::NonFinite("forward"));
            }
            inputs.push(out);
        }
        let logits = inputs.pop().expect("head output");
        Ok((
            logits,
            Trace {
                generation: self.generation,
                inputs,
            },
        ))
    }

    /// Logits only.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x, None, None).map(|(l, _)| l)
    }

    fn check_trace(&self, trace: &Trace, grad_logits: &Matrix) -> Result<()> {
        if trace.generation != self.generation {
            return Err(Error::State(
                "trace is stale: parameters changed since the forward pass".into(),
            ));
        }
        if grad_logits.shape() != (trace.batch_size(), self.arch.classes) {
            return Err(Error::shape("grad_logits shape does not match the trace"));
        }
        Ok(())
    }

    /// Gradients of the scalar loss whose logit gradient is `grad_logits`.
    pub fn backward(&self, trace: &Trace, grad_logits: &Matrix) -> Result<ParamVector> {
        self.check_trace(trace, grad_logits)?;
        let mut grads = vec![0.0; self.layout.total()];
        self.backprop(trace, grad_logits, |l, input, delta, batch| {
            gemm(
                MatRef::new(input, batch, l.fan_in).t(),
                MatRef::new(delta, batch, l.fan_out),
                &mut grads[l.weight.clone()],
                0.0,
            );
            let gb = &mut grads[l.bias.clone()];
            for row in delta.chunks(l.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        })?;
        Ok(ParamVector(grads))
    }

    /// `sum_s (d loss_s / d theta)^2` from per-sample logit gradients
    /// (row `s` of `per_sample_grad` is the gradient of sample `s`'s own loss).
    pub fn squared_grad_sum(&self, trace: &Trace, per_sample_grad: &Matrix) -> Result<ParamVector> {
        self.check_trace(trace, per_sample_grad)?;
        let mut out = vec![0.0; self.layout.total()];
        self.backprop(trace, per_sample_grad, |l, input, delta, batch| {
            // Per-sample weight gradient is x_s ⊗ δ_s, so its square sums to (x∘x)ᵀ(δ∘δ).
            let x2: Vec<f64> = input.iter().map(|v| v * v).collect();
            let d2: Vec<f64> = delta.iter().map(|v| v * v).collect();
            gemm(
                MatRef::new(&x2, batch, l.fan_in).t(),
                MatRef::new(&d2, batch, l.fan_out),
                &mut out[l.weight.clone()],
                0.0,
            );
            let gb = &mut out[l.bias.clone()];
            for row in d2.chunks(l.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        })?;
        Ok(ParamVector(out))
    }

    /// Walks layers from the head down, handing each layer its input and
    /// output delta.
    fn backprop<F>(&self, trace: &Trace, grad_logits: &Matrix, mut visit: F) -> Result<()>
    where
        F: FnMut(&LayerSlots, &[f64], &[f64], usize),
    {
        let batch = trace.batch_size();
        let mut delta = grad_logits.as_slice().to_vec();
        for (li, l) in self.layout.all_layers().iter().enumerate().rev() {
            let input = trace.inputs[li].as_slice();
            visit(l, input, &delta, batch);
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; batch * l.fan_in];
            gemm(
                MatRef::new(&delta, batch, l.fan_out),
                MatRef::new(&self.params.0[l.weight.clone()], l.fan_in, l.fan_out).t(),
                &mut prev,
                0.0,
            );
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Smallest `|pre-activation|` over hidden units for a batch; used to keep
    /// finite-difference checks away from ReLU kinks.
    pub fn min_abs_preactivation(&self, x: &Matrix) -> Result<f64> {
        let mut h = x.clone();
        let mut min = f64::INFINITY;
        for l in self.layout.hidden_layers() {
            let w = Matrix::from_vec(l.fan_in, l.fan_out, self.params.0[l.weight.clone()].to_vec())?;
            let mut z = h.matmul(&w)?;
            let b = &self.params.0[l.bias.clone()];
            for r in 0..z.rows() {
                for (v, bi) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bi;
                    min = min.min(v.abs());
                }
            }
            h = z.map(|v| v.max(0.0));
        }
        Ok(min)
    }
}

fn count_winners(acts: &[f64], width: usize, k: usize, counters: &mut [u64]) {
    if k == 0 {
        return;
    }
    let mut idx: Vec<usize> = Vec::with_capacity(width);
    for row in acts.chunks(width) {
        idx.clear();
        idx.extend(0..width);
        if k < width {
            idx.select_nth_unstable_by(k - 1, |&a, &b| {
                row[b].total_cmp(&row[a]).then(a.cmp(&b))
            });
        }
        for &i in &idx[..k] {
            counters[i] += 1;
        }
    }
}

/// Boolean class mask that is true exactly on `classes`.
pub fn task_logit_mask(classes: &[usize], total: usize) -> Vec<bool> {
    let mut m = vec![false; total];
    for &c in classes {
        m[c] = true;
    }
    m
}
