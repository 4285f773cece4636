//! Minimum density power divergence estimation for count time series with
//! exogenous covariates.

pub mod cli;
pub mod diag;
pub mod dist;
pub mod dpd;
pub mod error;
pub mod fit;
pub mod mc;
pub mod meanproc;
pub mod simgen;
pub mod tune;

pub use dist::{ConditionalFamily, FamilyKind};
pub use dpd::DpdConfig;
pub use error::{Error, Result};
pub use fit::{fit, fit_knot, FitOptions, FitResult, KnotFit};
pub use meanproc::{CovariateTransform, Dataset, LambdaInit, MeanModel, ParamBox};
