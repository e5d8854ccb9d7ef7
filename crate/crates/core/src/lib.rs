//! Piecewise Gaussian-process emulation over Voronoi tessellations whose
//! cells may be joined into non-convex, possibly disconnected regions.
//!
//! The pieces, bottom-up:
//!
//! - [`gp`]: a stationary GP on one region (Gaussian correlation, constant
//!   mean, weak prior, t-predictive).
//! - [`tessellation`]: Voronoi membership and the cell-to-region partition.
//! - [`posterior`]: prior over tessellations and the integrated likelihood.
//! - [`rjmcmc`]: reversible-jump sampler over tessellations.
//! - [`predict`]: per-sample and integrated predictive surfaces.
//! - [`adaptive`]: boundary-targeted sequential design and baseline samplers.
//! - [`testbed`]: test functions, maximin Latin hypercubes and benchmarks.

pub mod adaptive;
pub mod error;
pub mod gp;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod posterior;
pub mod predict;
pub mod rjmcmc;
pub mod rng;
pub mod sobol;
pub mod tessellation;
pub mod testbed;

pub use error::{Error, Result};
pub use gp::{GpFit, GpHyperparams, PredictiveT, TrainingSet};
pub use posterior::{FittedModel, PriorConfig};
pub use rjmcmc::{Chain, ChainSample, McmcConfig};
pub use tessellation::Tessellation;
