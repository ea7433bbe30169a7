//! Fitting, tuning and benchmarking linear risk models for binary outcomes
//! when predictors are strongly collinear.
//!
//! The crate covers eight estimators behind one interface ([`methods::fit`]):
//! plain maximum likelihood, Lasso, Ridge, ElasticNet, dropout, principal
//! component regression, a jointly trained linear autoencoder head, and
//! non-negativity constrained regression. Around them sit a Gaussian
//! data-generating mechanism with controllable collinearity ([`datagen`]),
//! Gaussian-process hyperparameter search ([`tuner`]), validation metrics
//! ([`metrics`]) and a replication engine ([`simrunner`]).
//!
//! All coefficients live on the standardized predictor scale.

pub mod datagen;
pub mod error;
pub mod losses;
pub mod methods;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod simrunner;
pub mod tuner;

pub use error::{CollinError, Result};
pub use nalgebra;
pub use model::{Dataset, LinearModel, StandardizationParams};
