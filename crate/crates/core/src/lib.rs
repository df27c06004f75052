//! Stochastic model of extratropical cyclone tracks.
//!
//! The model is fitted to a catalog of observed tracks and then simulated to
//! produce large synthetic catalogs for risk analysis. Its parts are:
//!
//! * [`catalog`]: track ingestion, derived speed and bearing, spherical
//!   geometry and the spatial grid.
//! * [`kde`]: Gaussian kernel density estimates with conditional sampling.
//! * [`evt`]: generalised Pareto tails, the kernel/GPD mixture marginal and
//!   Laplace standardisation.
//! * [`condex`]: conditional-extremes dependence and tail-chain simulation.
//! * [`preprocess`]: Box-Cox location-scale standardisation of vorticity.
//! * [`gam`]: logistic additive hazard for storm termination.
//! * [`engine`]: fitting of all submodels and storm simulation.
//! * [`synthetic`]: parametric toy catalogs.
//! * [`risk`]: exceedance probabilities, return levels and diagnostics.

pub mod catalog;
pub mod condex;
pub mod engine;
pub mod evt;
pub mod gam;
mod error;
pub mod kde;
pub mod numeric;
pub mod preprocess;
pub mod risk;
pub mod synthetic;

pub use error::{Error, Result};
