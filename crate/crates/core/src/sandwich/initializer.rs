//! Composite weights `Σ̂_init^{-1/2} D_s C̃⁻¹ D_s Σ̂_init^{-1/2}` realised by
//! whitening the residuals with an initial covariance and boosting on top.

use crate::data::ResidualBundle;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

use super::{weight_matrix, WeightModel};

/// Replaces each group's `ξ̃ᵢ`, `ε̃ᵢ` by `Σ̂ᵢ^{-1/2}ξ̃ᵢ`, `Σ̂ᵢ^{-1/2}ε̃ᵢ` (symmetric
/// root). `sigma_init` receives the group index and its covariate rows.
pub fn transform_residuals_by_initializer<T: Real>(
    res: &ResidualBundle<T>,
    mut sigma_init: impl FnMut(usize, &[T]) -> Matrix<T>,
) -> Result<ResidualBundle<T>> {
    let mut xi = Vec::with_capacity(res.n_obs());
    let mut eps = Vec::with_capacity(res.n_obs());
    for i in 0..res.n_groups() {
        let r = res.range(i);
        let sigma = sigma_init(i, &res.covariates()[r.start * res.p()..r.end * res.p()]);
        if sigma.rows() != r.len() || sigma.cols() != r.len() {
            return Err(Error::InvalidConfig(format!(
                "initial covariance for group {i} is {}×{}, expected {n}×{n}",
                sigma.rows(),
                sigma.cols(),
                n = r.len()
            )));
        }
        let root = sigma.sym_inverse_sqrt()?;
        xi.extend(root.matvec(res.xi_group(i)));
        eps.extend(root.matvec(res.eps_group(i)));
    }
    res.with_residuals(xi, eps)
}

/// `W_i⁻¹` of a weight model, usable as an initial covariance.
pub fn covariance_of_weights<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>, group: usize) -> Result<Matrix<T>> {
    Ok(weight_matrix(res, w, group).cholesky()?.inverse())
}
