//! Sandwich loss, its functional gradients, and the generalised
//! coefficient-function variant.
//!
//! The weight matrix of group `i` is `W_i = c · D_s C̃_θ⁻¹ D_s`, where `C̃_θ⁻¹` is
//! the family's scaled inverse and `c > 0` a free overall scale. Every loss in
//! this module is invariant to `c` and to the family's implicit scale.

mod generalized;
mod initializer;
mod scalar_loss;

use std::fmt;
use std::sync::Arc;

pub use generalized::{
    generalized_loss, generalized_loss_at, generalized_scores, generalized_scores_at, BasisSet, GramMatrix,
};
pub use initializer::{covariance_of_weights, transform_residuals_by_initializer};
pub use scalar_loss::{
    loss_at, s_scores_fast, s_scores_generic, sandwich_loss, scores_at, theta_score, theta_score_with,
    weight_matrix, Scores,
};

use crate::boosting::Ensemble;
use crate::correlation::CorrelationFamily;
use crate::data::GroupLayout;
use crate::linalg::Matrix;
use crate::scalar::Real;

/// How products with `C̃_θ⁻¹` and its θ-derivatives are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScorePath {
    /// Structured O(n) products from the closed forms.
    #[default]
    Fast,
    /// O(n²) double sums over closed-form inverse entries.
    Entrywise,
    /// Arbitrary-correlation route: factorise the dense `C_θ` (O(n³)) and use
    /// `∂C⁻¹ = −C⁻¹ ∂C C⁻¹`.
    Dense,
}

/// Inverse working standard deviation `s(x)`.
#[derive(Clone)]
pub enum SFunction<T> {
    Constant(T),
    Boosted(Arc<Ensemble<T>>),
    Custom(Arc<dyn Fn(&[T]) -> T + Send + Sync>),
}

impl<T: Real> SFunction<T> {
    pub fn eval(&self, x: &[T]) -> T {
        match self {
            SFunction::Constant(c) => *c,
            SFunction::Boosted(e) => e.eval(x),
            SFunction::Custom(f) => f(x),
        }
    }

    pub fn custom(f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        SFunction::Custom(Arc::new(f))
    }
}

impl<T: fmt::Debug> fmt::Debug for SFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SFunction::Constant(c) => write!(f, "Constant({c:?})"),
            SFunction::Boosted(e) => write!(f, "Boosted({} steps)", e.len()),
            SFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A weight model: `s`, a correlation family, the positivity floor on `s` and
/// an overall positive scale.
#[derive(Debug, Clone)]
pub struct WeightModel<T> {
    pub s: SFunction<T>,
    pub family: CorrelationFamily<T>,
    pub s_floor: T,
    pub scale: T,
}

impl<T: Real> WeightModel<T> {
    pub fn new(s: SFunction<T>, family: CorrelationFamily<T>) -> Self {
        Self { s, family, s_floor: T::lit(0.1), scale: T::one() }
    }

    /// `s ≡ 1` with the given family.
    pub fn constant(family: CorrelationFamily<T>) -> Self {
        Self::new(SFunction::Constant(T::one()), family)
    }

    pub fn with_floor(mut self, floor: T) -> Self {
        self.s_floor = floor;
        self
    }

    pub fn with_scale(mut self, scale: T) -> Self {
        self.scale = scale;
        self
    }

    /// `max(s(x), floor)` for each row of a row-major covariate block.
    pub fn s_values(&self, x: &[T], p: usize, n_rows: usize) -> Vec<T> {
        (0..n_rows)
            .map(|r| {
                let row = if p == 0 { &[][..] } else { &x[r * p..(r + 1) * p] };
                self.s.eval(row).max(self.s_floor)
            })
            .collect()
    }

    /// Dense `W` for one group given its `s` values.
    pub fn group_matrix(&self, layout: &GroupLayout, s: &[T]) -> Matrix<T> {
        let ker = self.family.kernel(layout);
        Matrix::from_fn(layout.n, layout.n, |j, k| self.scale * s[j] * ker.entry(j, k) * s[k])
    }
}
