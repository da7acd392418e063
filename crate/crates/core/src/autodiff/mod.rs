//! Minimal reverse-mode automatic differentiation over float64 tensors.
//!
//! Values live on a [`Record`] and are referred to by [`Var`] handles. The
//! record is single-threaded; independent records can be built and
//! differentiated on different threads.

mod conv;
mod record;
mod sample;
mod tensor;

pub mod gradcheck;

pub use record::{Elementwise, Gradients, Record, Var};
pub use sample::{Border, SamplePlan};
pub use tensor::Tensor;
