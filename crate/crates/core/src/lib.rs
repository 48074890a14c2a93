//! Dose-response function estimation for continuous and categorical
//! treatments in observational data.
//!
//! The crate fits a Gaussian linear treatment-assignment model, derives the
//! generalized propensity score and the scalar propensity-function summary
//! from it, and estimates the dose-response function E[Y(t)] with several
//! adjustment strategies: a quadratic GPS response surface, smooth
//! coefficient models in either the GPS or the propensity function,
//! inverse-weighted local linear regression, subclassification, and
//! covariance adjustment for categorical or subclassified continuous
//! treatments. Balance and overlap diagnostics, bootstrap uncertainty, and
//! a simulation-study harness round out the toolkit.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod numeric;
pub mod simulation;
pub mod smooth;
pub mod treatment;
pub mod uncertainty;

pub use data::{load_dataset, ColumnSpec, Dataset, LoadedData};
pub use error::{Error, Result};
pub use estimators::{
    drf_derivative, DrfEstimate, EstimatorConfig, FittedDrf, Grid, GridKind, Pipeline,
};
pub use smooth::{
    fit_tensor_scm, fit_univariate, fit_varying_coefficient, SmoothFit, SmoothKind, SmoothOptions,
    SplineBasis,
};
pub use treatment::{
    fit_treatment_model, theoretical_quantiles, DesignSpec, GaussianTreatmentModel, ScoreSet,
};
pub use uncertainty::{bootstrap_drf, bootstrap_with, BootstrapResult};
