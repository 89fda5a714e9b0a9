//! Nuisance regressions `l(x) = E[Y|X=x]` and `m(x) = E[D|X=x]`.

use std::fmt;
use std::sync::Arc;

use crate::boosting::{fit_base_learner, Learner, LearnerSpec};
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};

/// Regression method for a scalar target on covariate rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressorSpec<T> {
    /// Squared-error gradient boosting of regression trees.
    L2Boost { max_depth: usize, min_leaf: usize, rounds: usize, shrinkage: T },
    Knn { k: usize },
    Mean,
    /// Predicts 0 everywhere.
    Zero,
}

impl<T: Real> RegressorSpec<T> {
    pub fn l2boost_default() -> Self {
        RegressorSpec::L2Boost { max_depth: 3, min_leaf: 10, rounds: 100, shrinkage: T::lit(0.1) }
    }
}

type Func<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// How both nuisance functions are obtained.
#[derive(Clone)]
pub enum NuisanceSpec<T> {
    Learned(RegressorSpec<T>),
    /// Known functions `l₀`, `m₀` (simulation oracles).
    Known { l: Func<T>, m: Func<T> },
}

impl<T: fmt::Debug> fmt::Debug for NuisanceSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuisanceSpec::Learned(r) => write!(f, "Learned({r:?})"),
            NuisanceSpec::Known { .. } => f.write_str("Known"),
        }
    }
}

impl<T: Real> Default for NuisanceSpec<T> {
    fn default() -> Self {
        NuisanceSpec::Learned(RegressorSpec::l2boost_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Y,
    D,
}

/// A fitted regression function.
#[derive(Clone)]
pub enum Predictor<T> {
    Constant(T),
    Boosted { init: T, shrinkage: T, learners: Vec<Learner<T>> },
    Smoother(Learner<T>),
    Known(Func<T>),
}

impl<T: fmt::Debug> fmt::Debug for Predictor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::Constant(c) => write!(f, "Constant({c:?})"),
            Predictor::Boosted { learners, .. } => write!(f, "Boosted({} rounds)", learners.len()),
            Predictor::Smoother(_) => f.write_str("Smoother"),
            Predictor::Known(_) => f.write_str("Known"),
        }
    }
}

impl<T: Real> Predictor<T> {
    pub fn predict(&self, x: &[T]) -> T {
        match self {
            Predictor::Constant(c) => *c,
            Predictor::Boosted { init, shrinkage, learners } => {
                *init + *shrinkage * learners.iter().map(|h| h.predict(x)).sum::<T>()
            }
            Predictor::Smoother(h) => h.predict(x),
            Predictor::Known(f) => f(x),
        }
    }

    pub fn predict_rows(&self, x: &[T], p: usize, n_rows: usize) -> Vec<T> {
        (0..n_rows).map(|r| self.predict(&x[r * p..(r + 1) * p])).collect()
    }
}

/// Fits `spec` to `(x_r, y_r)` pairs; `x` is row-major with `p` columns.
pub fn fit_regression<T: Real>(x: &[T], p: usize, y: &[T], spec: &RegressorSpec<T>) -> Result<Predictor<T>> {
    if y.is_empty() {
        return Err(Error::EmptyInput("nuisance training set is empty".into()));
    }
    let mean = pairwise_sum(y) / T::from_usize_lossy(y.len());
    match *spec {
        RegressorSpec::Zero => Ok(Predictor::Constant(T::zero())),
        RegressorSpec::Mean => Ok(Predictor::Constant(mean)),
        RegressorSpec::Knn { k } => Ok(Predictor::Smoother(fit_base_learner(x, p, y, &LearnerSpec::Knn { k })?)),
        RegressorSpec::L2Boost { max_depth, min_leaf, rounds, shrinkage } => {
            let tree = LearnerSpec::RegressionTree { max_depth, min_leaf };
            let n = y.len();
            let mut fit = vec![mean; n];
            let mut resid = vec![T::zero(); n];
            let mut learners = Vec::with_capacity(rounds);
            for _ in 0..rounds {
                for r in 0..n {
                    resid[r] = y[r] - fit[r];
                }
                let h = fit_base_learner(x, p, &resid, &tree)?;
                for (r, f) in fit.iter_mut().enumerate() {
                    *f += shrinkage * h.predict(&x[r * p..(r + 1) * p]);
                }
                learners.push(h);
            }
            Ok(Predictor::Boosted { init: mean, shrinkage, learners })
        }
    }
}

/// Fits the nuisance for `target` on the rows of `train`.
pub fn fit_nuisance<T: Real>(train: &GroupedDataset<T>, target: Target, spec: &NuisanceSpec<T>) -> Result<Predictor<T>> {
    match spec {
        NuisanceSpec::Known { l, m } => Ok(Predictor::Known(match target {
            Target::Y => l.clone(),
            Target::D => m.clone(),
        })),
        NuisanceSpec::Learned(r) => {
            let p = train.d_covariates();
            let mut x = Vec::with_capacity(train.n_obs() * p);
            let mut y = Vec::with_capacity(train.n_obs());
            for g in train.groups() {
                x.extend_from_slice(g.x());
                y.extend_from_slice(match target {
                    Target::Y => g.y(),
                    Target::D => g.d(),
                });
            }
            fit_regression(&x, p, &y, r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_predictor() {
        let f = fit_regression(&[0.0, 1.0, 2.0], 1, &[1.0, 2.0, 3.0], &RegressorSpec::Mean).unwrap();
        assert_eq!(f.predict(&[5.0]), 2.0);
    }

    #[test]
    fn zero_rounds_is_mean() {
        let spec = RegressorSpec::L2Boost { max_depth: 2, min_leaf: 1, rounds: 0, shrinkage: 0.1 };
        let f = fit_regression(&[0.0, 1.0, 2.0], 1, &[1.0, 2.0, 6.0], &spec).unwrap();
        assert_eq!(f.predict(&[0.0]), 3.0);
    }

    #[test]
    fn knn_one_reproduces_targets() {
        let x = [0.0, 0.5, 2.0];
        let y = [4.0, -1.0, 2.0];
        let f = fit_regression(&x, 1, &y, &RegressorSpec::Knn { k: 1 }).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(f.predict(&[*a]), *b);
        }
    }

    #[test]
    fn l2boost_fits_smooth_signal() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 50.0 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let f = fit_regression(&x, 1, &y, &RegressorSpec::l2boost_default()).unwrap();
        let mse: f64 = x.iter().zip(&y).map(|(a, b)| (f.predict(&[*a]) - b).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 1e-3, "mse {mse}");
    }

    #[test]
    fn empty_rejected() {
        assert!(fit_regression::<f64>(&[], 1, &[], &RegressorSpec::Mean).is_err());
    }
}
