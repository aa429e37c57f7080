//! Deep attention recurrent imputation for irregular multivariate time series.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense arrays and a define-by-run reverse-mode graph.
//! - [`data`]: series batches, masks, time-gap matrices, normalization,
//!   evaluation masking, CSV ingestion and the prepared-dataset archive.
//! - [`brits`]: the bidirectional recurrent imputation cell and its losses.
//! - [`attention`] and [`stack`]: the multilayer model whose deeper layers
//!   start from a self-attention summary of the previous layer's hidden states.
//! - [`metric`]: self-supervised triplet mining and the multi-similarity loss.
//! - [`bayes`]: Gaussian recurrent weights, the variational objective and
//!   Monte-Carlo uncertainty bands.
//! - [`harness`]: configuration, training, cross-validation, metrics,
//!   baselines, synthetic data and experiment drivers.

pub mod attention;
pub mod bayes;
pub mod binder;
pub mod brits;
pub mod data;
pub mod error;
pub mod harness;
pub mod metric;
pub mod model;
pub mod stack;
pub mod tensor;

pub use data::{Dataset, Direction, NormStats, SeriesBatch};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Variant};
pub use tensor::{Array, Graph, ParamStore, Var};
