//! Bayesian inference for diffusion-driven stochastic volatility models by
//! data augmentation on a time-changed parametrisation.
//!
//! The imputed path between two observations is stored through a
//! standardised process `Z` that is a standard Brownian motion under the
//! reference measure whatever the volatility parameters are. Updating the
//! volatility then never conditions on the quadratic variation of the
//! imputed path, so the sampler does not slow down as the imputation grid
//! is refined.
//!
//! Modules, bottom up:
//!
//! * [`paths`]: time grids, path skeletons, Brownian motion and bridges.
//! * [`models`]: model definitions, Euler simulation and state transforms.
//! * [`timechange`]: the X-time → U-time → Z-time maps.
//! * [`likelihood`]: Girsanov and end-point log-densities.
//! * [`mcmc`]: the Gibbs sampler.
//! * [`diagnostics`]: summaries, autocorrelation, KDE, KS tests.
//! * [`data`]: observation series and CSV ingestion.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod likelihood;
pub mod mcmc;
pub mod models;
pub mod paths;
pub mod timechange;

pub use data::{ingest_csv, CsvSchema, Observations};
pub use error::{Error, Result};
pub use mcmc::{run_chain, AugmentedState, Context, PriorKind, PriorSpec, SamplerConfig, Trace};
pub use models::{model_by_name, DiffusionModel, ParamVector};
pub use paths::{Path, RandomStream, TimeGrid};
