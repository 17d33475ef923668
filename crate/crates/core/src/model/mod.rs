//! Multilayer perceptron over a flat parameter vector, plus checkpoints.

pub mod checkpoint;
mod mlp;

pub use mlp::{
    task_logit_mask, winners, ActivationCounters, Architecture, LayerSlots, Layout, MlpNet, ParamVector, Trace,
};
