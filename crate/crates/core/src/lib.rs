//! Sandwich boosting for grouped partially linear models.
//!
//! Weights `W = D_s C_θ⁻¹ D_s` are fitted by functional gradient descent on
//! the sandwich estimate of the variance of a cross-fitted DML estimator of
//! `β` in `Y = Dβ + g(X) + ε`. The numerical core is generic over `f32`/`f64`
//! through [`scalar::Real`]; the population and simulation modules work in
//! `f64`.
//!
//! ```
//! use sandboost::{CorrelationFamily, ResidualBundle, WeightModel};
//! use sandboost::sandwich::sandwich_loss;
//!
//! let res = ResidualBundle::from_groups(vec![vec![1.0, -0.5, 2.0]], vec![vec![0.3, 0.1, -0.4]]).unwrap();
//! let w = WeightModel::constant(CorrelationFamily::equicorrelated(0.5));
//! assert!(sandwich_loss(&res, &w).unwrap() > 0.0);
//! ```

pub mod boosting;
pub mod correlation;
pub mod data;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod population;
pub mod sandwich;
pub mod scalar;
pub mod sim;

pub use boosting::{boost, BoostConfig, BoostTrace, Ensemble, LearnerSpec, StepMode};
pub use correlation::{CorrelationFamily, FamilyKind};
pub use data::{CsvSchema, FoldPartition, Group, GroupLayout, GroupedDataset, ResidualBundle};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{fit_coefficient_function, fit_plm, EstimateReport, NuisanceSpec, PlmConfig, RegressorSpec, WeightMethod};
pub use sandwich::{SFunction, ScorePath, WeightModel};
pub use scalar::Real;

pub type Dataset64 = GroupedDataset<f64>;
pub type Dataset32 = GroupedDataset<f32>;
pub type Residuals64 = ResidualBundle<f64>;
pub type Residuals32 = ResidualBundle<f32>;
pub type Family64 = CorrelationFamily<f64>;
pub type Family32 = CorrelationFamily<f32>;
pub type Weights64 = WeightModel<f64>;
pub type Weights32 = WeightModel<f32>;
pub type BoostConfig64 = BoostConfig<f64>;
pub type BoostConfig32 = BoostConfig<f32>;
