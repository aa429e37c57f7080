//! Dense arrays and a reverse-mode computation graph.

mod array;
mod check;
mod graph;
mod params;

pub use array::Array;
pub use check::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::softplus;
pub use params::ParamStore;
