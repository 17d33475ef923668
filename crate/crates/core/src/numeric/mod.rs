//! Dense linear algebra, layer primitives and the masked optimizer.

mod adam;
pub mod gradcheck;
mod layers;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{argmax, relu_backward, relu_forward, softmax, softmax_ce, softmax_ce_rows, ReluTrace};
pub(crate) use matrix::{gemm, MatRef};
pub use matrix::Matrix;
pub use rng::Rng;
