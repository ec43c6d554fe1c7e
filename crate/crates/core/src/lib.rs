//! Distribution adaptable learning over evolving task streams.
//!
//! A linear classifier is carried from one batch to the next by transporting
//! its weight rows along an entropic optimal-transport plan between feature
//! marginals, and refit on the few labels of the current batch with a graph
//! Laplacian over all of its rows.
//!
//! Module map:
//! - [`dataio`]: CSV ingestion, stream synthesis, task partitioning, label masking
//! - [`efmdi`]: per-feature marginal encodings (KME / KDE) and evolving cost matrices
//! - [`transport`]: log-domain Sinkhorn and model transport
//! - [`manifold`]: mutual k-NN Gaussian graph Laplacian and its penalty
//! - [`solvers`]: DAL-LS, DAL-CEL, ablations and the task-flow driver
//! - [`diagnostics`]: Rademacher bound term, its unlabeled-data reduction, trajectory length

pub mod dataio;
pub mod diagnostics;
pub mod efmdi;
mod error;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod solvers;
pub mod transport;

pub use error::{Error, Result};
pub use model::LinearModel;
