//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every primitive applied during a forward pass and
//! replays them in reverse to produce [`Gradients`]. Parameters live in a
//! [`ParamStore`] that the graph borrows read-only; gradients are folded
//! back into the store afterwards with [`ParamStore::accumulate`].

mod adam;
mod gradcheck;
mod graph;
mod math;
mod params;
mod tensor;

pub use adam::{clip_gradients, AdamConfig, AdamState};
pub use gradcheck::{check_function, finite_difference_check, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use math::{log_sigmoid, log_softmax, sigmoid, softmax};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
