//! Functional conditional autoregressive (FCAR) models for curves observed on a
//! spatial lattice: simulation, profile-likelihood estimation of the dependence
//! parameter and the conditional covariance operator, Wald inference, and a
//! Monte Carlo harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod estimate;
pub mod function_space;
pub mod inference;
pub mod io;
pub mod lattice;
pub mod model;
pub mod simulate;

pub use error::{FcarError, Result};
pub use estimate::{profile_fit, FitConfig, FitResult};
pub use function_space::{CovOperator, Curve, FunctionalDataset, TimeGrid};
pub use lattice::{build_from_edge_list, build_torus, NeighborhoodGraph};
pub use model::{FcarModel, Variant};
pub use simulate::SimConfig;
