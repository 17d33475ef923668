//! Continual learning with retained sparse subnetworks, weight revision and
//! rewinding, on top of a small dense-MLP numeric core.

pub mod data;
pub mod ema;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod masks;
pub mod model;
pub mod numeric;
pub mod rehearsal;
pub mod trainer;

pub use error::{Error, Result};
