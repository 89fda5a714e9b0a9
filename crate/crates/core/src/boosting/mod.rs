//! Sandwich boosting: functional gradient descent over `s` with projected
//! gradient steps on θ.

mod engine;
mod learner;

use crate::scalar::Real;

pub use engine::{
    boost, boost_with, cv_curve, quadratic_step, select_m_stop, select_m_stop_with, variable_step, BoostConfig,
    BoostTrace, Objective, StepMode,
};
pub use learner::{fit_base_learner, KnnSmoother, Learner, LearnerSpec, RegressionTree};

/// `ŝ` as a sequence of floored steps: `s₀ = init`,
/// `s_{m+1}(x) = max(floor, s_m(x) − λ_m h_m(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    init: T,
    floor: T,
    steps: Vec<(T, Learner<T>)>,
}

impl<T> Ensemble<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[(T, Learner<T>)] {
        &self.steps
    }
}

impl<T: Real> Ensemble<T> {
    pub fn new(init: T, floor: T) -> Self {
        Self { init, floor, steps: Vec::new() }
    }

    pub fn push(&mut self, step: T, learner: Learner<T>) {
        self.steps.push((step, learner));
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.eval_prefix(x, self.steps.len())
    }

    /// Value after the first `m` steps.
    pub fn eval_prefix(&self, x: &[T], m: usize) -> T {
        let mut s = self.init.max(self.floor);
        for (lam, h) in &self.steps[..m] {
            s = (s - *lam * h.predict(x)).max(self.floor);
        }
        s
    }

    pub fn truncated(&self, m: usize) -> Self {
        Self { init: self.init, floor: self.floor, steps: self.steps[..m.min(self.steps.len())].to_vec() }
    }
}
