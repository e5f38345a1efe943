//! Spatially hierarchical Bayesian factor models for multi-indicator panels
//! observed at two nested areal levels (census tracts within cities).
//!
//! The library fits a one-dimensional latent vulnerability index with full
//! posterior uncertainty. The observational level is a single-factor model
//!
//! ```text
//! y_ijk = mu_k + beta_k f_ij + sigma_k eps_ijk
//! ```
//!
//! and the factor decomposes as `f_ij = theta_i + ftilde_ij + sqrt(omega_i) u_ij`,
//! with a proper CAR prior on the within-city component `ftilde_i` and a
//! Matérn Gaussian process on the between-city component `theta`.
//!
//! Five model variants are supported (`SHFM`, `UHFM` with and without `theta`,
//! `ASFM`, `AFM`), sampled by a blocked Gibbs scheme with a Metropolis–Hastings
//! step for the Matérn range. Post-processing covers convergence diagnostics,
//! model comparison criteria (DIC, EPD, CRPS, MAE, MSE), spatial prediction of
//! `theta` at unmeasured cities and probabilistic city rankings.

pub mod error;
pub mod kernels;
pub mod model;
pub mod predict;
pub mod sampler;
pub mod select;
pub mod synth;

pub use error::ShfmError;
pub use kernels::{CarStructure, Geometry, MaternParams};
pub use model::{HyperPriors, IndicatorPanel, ModelSpec, ModelVariant, ParamState};
pub use sampler::{ChainOutput, FitContext, McmcConfig};
