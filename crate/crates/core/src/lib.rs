//! Incidence estimation for prevalent-cohort studies with follow-up.
//!
//! Under a stationary onset process, point prevalence, incidence rate and
//! mean disease duration satisfy `P = lambda * mu`. This crate estimates each
//! factor by maximum likelihood from screened cohorts in which prevalent cases
//! are followed forward in time:
//!
//! - [`npmle`] fits the nonparametric MLE of the length-biased duration
//!   distribution (and hence the unbiased survivor function and `mu`),
//! - [`incidence`] turns prevalence and mean duration into overall and
//!   age-specific incidence rates,
//! - [`bootstrap`] produces percentile confidence intervals,
//! - [`sim`] generates synthetic prevalent cohorts with known truth,
//! - [`diagnostics`] checks the stationarity assumption via
//!   backward/forward recurrence-time exchangeability.
//!
//! All durations are in years and all rates are per person-year.

pub mod bootstrap;
pub mod diagnostics;
pub mod error;
pub mod incidence;
pub mod io;
pub mod model;
pub mod npmle;
pub mod rng;
pub mod sim;
pub mod stats;

pub use bootstrap::{bootstrap_lambda, resample_frame, BootstrapOptions, BootstrapResult, Estimator};
pub use diagnostics::{exchangeability_test, DiagnosticResult};
pub use error::{Error, Result};
pub use incidence::{
    denom_integral, estimate_by_category, estimate_overall, lambda_age_const, lambda_age_tv,
    lambda_hat, decomposition_residual, prevalence_hat, CategoryEstimate, EstimateFlag, IncidenceEstimate,
};
pub use model::{
    total_time, validate_frame, AgeDistribution, AgeSegment, LBMasses, PrevalentRecord,
    ScreeningFrame, SurvivalCurve, SurvivalPoint, Violation,
};
pub use npmle::{loglik_lb, npmle_lb_em, wang_product_limit, EmOptions, NpmleFit, ProductLimit, TailPolicy};
pub use sim::{length_biased_draw, sim_equilibrium, sim_window, DistSpec, SimConfig, SimTruth};
