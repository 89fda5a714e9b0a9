//! Cross-fitted estimators and the classical weight baselines.

mod baselines;
mod coefficient;
mod nuisance;
mod plm;

pub use baselines::{
    fit_weights_gee, fit_weights_ml, gee_rho, gee_sigma, minimise_scalar, ml_rho, rho_domain, GeeObjective, MlObjective,
    GOLDEN_ITERS, SEARCH_GRID, SIGMA_FLOOR,
};
pub use coefficient::{fit_coefficient_function, CoefficientReport};
pub use nuisance::{fit_nuisance, fit_regression, NuisanceSpec, Predictor, RegressorSpec, Target};
pub use plm::{
    aggregate_splits, dml_from_residuals, fit_plm, normal_quantile, EstimateReport, FoldWeightSummary, PlmConfig,
    SplitEstimate, WeightMethod,
};
