//! Cross-fitted estimation of a coefficient function `β(x) = Σ_l φ_l(x) γ_l`
//! in `Y = β(X) D + g(X) + ε`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::Objective;
use crate::data::{FoldPartition, GroupedDataset, ResidualBundle};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sandwich::{BasisSet, GramMatrix};
use crate::scalar::Real;

use super::plm::{fit_fold_weights, fold_residuals, lower_median, normal_quantile, PlmConfig, WeightMethod};

const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub names: Vec<String>,
    pub phi_hat: Vec<f64>,
    /// `A⁻¹BA⁻¹` (a covariance of `φ̂`, not scaled by N).
    pub cov: Vec<Vec<f64>>,
    pub ci: Vec<(f64, f64)>,
    pub alpha: f64,
    pub per_split: Vec<Vec<f64>>,
    /// Set when the covariance is identically zero (exact fit).
    pub degenerate: bool,
}

fn rows_of<T: Real>(ds: &GroupedDataset<T>) -> Vec<T> {
    ds.groups().iter().flat_map(|g| g.x().iter().copied()).collect()
}

/// `M` rows `φ(x_r) ξ_r`, row-major.
fn design<T: Real>(basis: &BasisSet<T>, x: &[T], p: usize, xi: &[T]) -> Vec<T> {
    let l = basis.len();
    let mut m = basis.eval_rows(x, p, xi.len());
    for (r, &v) in xi.iter().enumerate() {
        for c in 0..l {
            m[r * l + c] *= v;
        }
    }
    m
}

fn checked_inverse<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let cond = a.condition_number();
    if !(cond.as_f64() <= COND_LIMIT) {
        return Err(Error::SingularDesign(cond.as_f64()));
    }
    Ok(a.cholesky().map_err(|_| Error::SingularDesign(cond.as_f64()))?.inverse())
}

struct FoldMoments<T> {
    a: Matrix<T>,
    r: Vec<T>,
    b: Matrix<T>,
}

fn run_fold<T: Real>(
    data: &GroupedDataset<T>,
    basis: &BasisSet<T>,
    folds: &FoldPartition,
    k: usize,
    method: &WeightMethod<T>,
    cfg: &PlmConfig<T>,
    seed: u64,
) -> Result<FoldMoments<T>> {
    let l = basis.len();
    let p = data.d_covariates();
    let fr = fold_residuals(data, folds, k, &cfg.nuisance)?;

    // preliminary unweighted fit on the complement
    let xtr = rows_of(&fr.train);
    let mtr = design(basis, &xtr, p, &fr.train_d);
    let mut g = Matrix::<T>::zeros(l, l);
    let mut h = vec![T::zero(); l];
    for (r, &y) in fr.train_y.iter().enumerate() {
        let row = &mtr[r * l..(r + 1) * l];
        for a in 0..l {
            h[a] += row[a] * y;
            for b in 0..l {
                g[(a, b)] += row[a] * row[b];
            }
        }
    }
    let gamma = checked_inverse(&g)?.matvec(&h);
    let resid = |m: &[T], y: &[T]| -> Vec<T> {
        y.iter()
            .enumerate()
            .map(|(r, &v)| v - (0..l).fold(T::zero(), |acc, c| acc + m[r * l + c] * gamma[c]))
            .collect()
    };
    let eps = resid(&mtr, &fr.train_y);
    let layouts = |ds: &GroupedDataset<T>| ds.groups().iter().map(|g| g.layout()).collect::<Vec<_>>();
    let train_res = ResidualBundle::new(fr.train_d.clone(), eps, xtr.clone(), p, layouts(&fr.train))?;
    let objective = match method {
        WeightMethod::SandwichBoost(_) => {
            Objective::Generalized { basis: basis.clone(), gram: GramMatrix::empirical(basis, &xtr, p, fr.train_d.len()) }
        }
        _ => Objective::Sandwich,
    };
    let w = fit_fold_weights(&train_res, cfg.family, method, &objective, seed.wrapping_add(k as u64))?;

    let xte = rows_of(&fr.test);
    let mte = design(basis, &xte, p, &fr.test_d);
    let eps_hat = resid(&mte, &fr.test_y);
    let test_layouts = layouts(&fr.test);
    let mut out = FoldMoments { a: Matrix::zeros(l, l), r: vec![T::zero(); l], b: Matrix::zeros(l, l) };
    let mut at = 0;
    for layout in &test_layouts {
        let n = layout.n;
        let rows = at..at + n;
        let s = w.s_values(&xte[rows.start * p..rows.end * p], p, n);
        let ker = w.family.kernel(layout);
        // columns of W M
        let mut wm = vec![vec![T::zero(); n]; l];
        for c in 0..l {
            let u: Vec<T> = (0..n).map(|j| s[j] * mte[(at + j) * l + c]).collect();
            let mut cu = vec![T::zero(); n];
            ker.apply(&u, &mut cu);
            for j in 0..n {
                wm[c][j] = w.scale * s[j] * cu[j];
            }
        }
        let mut a_i = vec![T::zero(); l];
        for c in 0..l {
            for j in 0..n {
                out.r[c] += wm[c][j] * fr.test_y[at + j];
                a_i[c] += wm[c][j] * eps_hat[at + j];
                for d in 0..l {
                    out.a[(c, d)] += wm[c][j] * mte[(at + j) * l + d];
                }
            }
        }
        for c in 0..l {
            for d in 0..l {
                out.b[(c, d)] += a_i[c] * a_i[d];
            }
        }
        at += n;
    }
    Ok(out)
}

fn run_split<T: Real>(
    data: &GroupedDataset<T>,
    basis: &BasisSet<T>,
    method: &WeightMethod<T>,
    cfg: &PlmConfig<T>,
    split: usize,
) -> Result<(Vec<f64>, Matrix<f64>)> {
    let l = basis.len();
    let seed = cfg.split_seed(split);
    let folds = FoldPartition::random(data.n_groups(), cfg.folds, seed)?;
    let parts: Vec<FoldMoments<T>> =
        (0..cfg.folds).into_par_iter().map(|k| run_fold(data, basis, &folds, k, method, cfg, seed)).collect::<Result<_>>()?;
    let mut a = Matrix::<T>::zeros(l, l);
    let mut b = Matrix::<T>::zeros(l, l);
    let mut r = vec![T::zero(); l];
    for f in &parts {
        a = a.add(&f.a);
        b = b.add(&f.b);
        for c in 0..l {
            r[c] += f.r[c];
        }
    }
    let a_inv = checked_inverse(&a)?;
    let phi = a_inv.matvec(&r);
    let cov = a_inv.matmul(&b).matmul(&a_inv);
    Ok((phi.iter().map(|v| v.as_f64()).collect(), Matrix::from_fn(l, l, |i, j| cov[(i, j)].as_f64())))
}

/// Cross-fitted weighted estimate of the basis coefficients `φ`. With
/// [`WeightMethod::SandwichBoost`] the weights minimise the generalised
/// sandwich loss with the empirical Gram matrix of the fold complement.
pub fn fit_coefficient_function<T: Real>(
    data: &GroupedDataset<T>,
    basis: &BasisSet<T>,
    method: &WeightMethod<T>,
    cfg: &PlmConfig<T>,
) -> Result<CoefficientReport> {
    cfg.validate(data.n_groups())?;
    if basis.is_empty() {
        return Err(Error::InvalidConfig("basis must contain at least one function".into()));
    }
    let l = basis.len();
    let data = data.subset(&data.canonical_order());
    let splits: Vec<(Vec<f64>, Matrix<f64>)> =
        (0..cfg.splits).into_par_iter().map(|s| run_split(&data, basis, method, cfg, s)).collect::<Result<_>>()?;

    // elementwise median aggregation
    let phi_hat: Vec<f64> = (0..l).map(|c| lower_median(&splits.iter().map(|s| s.0[c]).collect::<Vec<_>>()).0).collect();
    let cov: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| {
                    let v: Vec<f64> =
                        splits.iter().map(|(p, m)| m[(i, j)] + (phi_hat[i] - p[i]) * (phi_hat[j] - p[j])).collect();
                    lower_median(&v).0
                })
                .collect()
        })
        .collect();
    let z = normal_quantile(cfg.alpha);
    let ci = (0..l).map(|c| (phi_hat[c] - z * cov[c][c].sqrt(), phi_hat[c] + z * cov[c][c].sqrt())).collect();
    Ok(CoefficientReport {
        names: basis.names().to_vec(),
        degenerate: cov.iter().flatten().all(|&v| v == 0.0),
        phi_hat,
        cov,
        ci,
        alpha: cfg.alpha,
        per_split: splits.into_iter().map(|s| s.0).collect(),
    })
}
