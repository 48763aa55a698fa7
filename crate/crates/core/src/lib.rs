//! Probabilistic solver for mean-field games with convex costs.
//!
//! The crate computes the decoupling field `u` of the adjoint FBSDE for a frozen
//! flow of measures, iterates the flow map `Φ` to a fixed point, and measures how
//! well the resulting distributed feedback `α̂(t, x, μ_t, u(t, x))` performs in the
//! finite `N`-player game. An analytic linear-quadratic solver is bundled as a
//! reference for every numerical route.
//!
//! Everything here is pure computation over `alloc`; file formats, the CLI and
//! thread pools live in the companion `mfg` crate. Parallel work goes through the
//! [`Executor`] trait so that results never depend on the number of workers.
#![cfg_attr(not(test), no_std)]
// negated comparisons are the NaN-rejecting form of argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod fbsde;
pub mod fixedpoint;
pub mod hamiltonian;
pub mod linalg;
pub mod lq_oracle;
pub mod model;
pub mod nplayer;
pub mod rng;
pub mod stats;
pub mod wasserstein;

mod math;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use fbsde::{DecouplingField, LatticeConfig, PathEnsemble, TimeGrid};
pub use fixedpoint::{FixedPointConfig, MfgSolution};
pub use linalg::Matrix;
pub use lq_oracle::RiccatiSolution;
pub use model::{LqSpec, MeasureDependence, MfgModel};
pub use wasserstein::{DiscreteMeasure, MeasureFlow};
