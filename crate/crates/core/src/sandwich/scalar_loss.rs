use crate::correlation::{CorrelationFamily, GroupKernel};
use crate::data::ResidualBundle;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{pairwise_sum, Real};

use super::{ScorePath, WeightModel};

/// Loss together with its gradients at one `(s, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores<T> {
    pub loss: T,
    /// One entry per observation, in bundle order.
    pub s: Vec<T>,
    /// One entry per θ component.
    pub theta: Vec<T>,
}

/// First pass over groups: `Cu`, `Cv` per observation, `b_i`, `c_i` per group.
struct Pass<T> {
    cu: Vec<T>,
    cv: Vec<T>,
    c: Vec<T>,
    b: T,
    sum_c2: T,
}

/// `out = C̃⁻¹ x` for one group along the chosen path.
fn group_solve<T: Real>(
    path: ScorePath,
    ker: &GroupKernel<'_, T>,
    dense: Option<&crate::linalg::Cholesky<T>>,
    x: &[T],
    out: &mut [T],
) {
    match path {
        ScorePath::Fast => ker.apply(x, out),
        ScorePath::Entrywise => {
            let n = x.len();
            for j in 0..n {
                let mut acc = T::zero();
                for k in 0..n {
                    acc += ker.entry(j, k) * x[k];
                }
                out[j] = acc;
            }
        }
        ScorePath::Dense => out.copy_from_slice(&dense.expect("dense factor present").solve(x)),
    }
}

fn first_pass<T: Real>(res: &ResidualBundle<T>, s: &[T], family: &CorrelationFamily<T>, scale: T, path: ScorePath) -> Result<Pass<T>> {
    let n_obs = res.n_obs();
    assert_eq!(s.len(), n_obs, "one s value per observation");
    let mut cu = vec![T::zero(); n_obs];
    let mut cv = vec![T::zero(); n_obs];
    let mut b_terms = Vec::with_capacity(res.n_groups());
    let mut c = Vec::with_capacity(res.n_groups());
    let mut u = Vec::new();
    let mut v = Vec::new();
    for i in 0..res.n_groups() {
        let r = res.range(i);
        let layout = res.layout(i);
        let ker = family.kernel(layout);
        let chol = match path {
            ScorePath::Dense => Some(family.dense_correlation(layout).cholesky()?),
            _ => None,
        };
        u.clear();
        v.clear();
        for o in r.clone() {
            u.push(s[o] * res.xi()[o]);
            v.push(s[o] * res.eps()[o]);
        }
        group_solve(path, &ker, chol.as_ref(), &u, &mut cu[r.clone()]);
        group_solve(path, &ker, chol.as_ref(), &v, &mut cv[r.clone()]);
        let mut bi = T::zero();
        let mut ci = T::zero();
        for (k, o) in r.enumerate() {
            cu[o] *= scale;
            cv[o] *= scale;
            bi += u[k] * cu[o];
            ci += u[k] * cv[o];
        }
        b_terms.push(bi);
        c.push(ci);
    }
    let b = pairwise_sum(&b_terms);
    if !(b > T::zero()) || !b.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let c2: Vec<T> = c.iter().map(|&x| x * x).collect();
    let sum_c2 = pairwise_sum(&c2);
    Ok(Pass { cu, cv, c, b, sum_c2 })
}

fn loss_from_pass<T: Real>(p: &Pass<T>, n_obs: usize) -> T {
    T::from_usize_lossy(n_obs) * p.sum_c2 / (p.b * p.b)
}

/// Sandwich loss `N Σc_i² / b²` at explicit per-observation `s` values.
pub fn loss_at<T: Real>(res: &ResidualBundle<T>, s: &[T], family: &CorrelationFamily<T>, path: ScorePath) -> Result<T> {
    Ok(loss_from_pass(&first_pass(res, s, family, T::one(), path)?, res.n_obs()))
}

/// `(N⁻¹ Σ ξ̃ᵢᵀWᵢξ̃ᵢ)⁻² · N⁻¹ Σ (ξ̃ᵢᵀWᵢε̃ᵢ)²`.
pub fn sandwich_loss<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>) -> Result<T> {
    let s = w.s_values(res.covariates(), res.p(), res.n_obs());
    Ok(loss_from_pass(&first_pass(res, &s, &w.family, w.scale, ScorePath::Fast)?, res.n_obs()))
}

/// Loss, s-scores and θ-score at explicit `s` values.
pub fn scores_at<T: Real>(res: &ResidualBundle<T>, s: &[T], family: &CorrelationFamily<T>, path: ScorePath) -> Result<Scores<T>> {
    scores_scaled(res, s, family, T::one(), path)
}

fn scores_scaled<T: Real>(res: &ResidualBundle<T>, s: &[T], family: &CorrelationFamily<T>, scale: T, path: ScorePath) -> Result<Scores<T>> {
    let pass = first_pass(res, s, family, scale, path)?;
    let n = T::from_usize_lossy(res.n_obs());
    let two = T::lit(2.0);
    let b = pass.b;
    let pre = -two * n / (b * b * b);
    let mut s_scores = vec![T::zero(); res.n_obs()];
    for i in 0..res.n_groups() {
        let ci = pass.c[i];
        for o in res.range(i) {
            let (xi, eps) = (res.xi()[o], res.eps()[o]);
            let a3 = two * xi * pass.cu[o];
            let a4 = xi * pass.cv[o] + eps * pass.cu[o];
            s_scores[o] = pre * (pass.sum_c2 * a3 - b * ci * a4);
        }
    }
    let theta = theta_from_pass(res, s, family, scale, path, &pass)?;
    Ok(Scores { loss: loss_from_pass(&pass, res.n_obs()), s: s_scores, theta })
}

fn theta_from_pass<T: Real>(
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    scale: T,
    path: ScorePath,
    pass: &Pass<T>,
) -> Result<Vec<T>> {
    let dim = family.dim();
    let n = T::from_usize_lossy(res.n_obs());
    let two = T::lit(2.0);
    let mut grads = Vec::with_capacity(dim);
    let mut buf = Vec::new();
    let mut u = Vec::new();
    let mut v = Vec::new();
    for comp in 0..dim {
        let mut db_terms = Vec::with_capacity(res.n_groups());
        let mut dc_terms = Vec::with_capacity(res.n_groups());
        for i in 0..res.n_groups() {
            let r = res.range(i);
            let layout = res.layout(i);
            let nn = layout.n;
            u.clear();
            v.clear();
            for o in r.clone() {
                u.push(s[o] * res.xi()[o]);
                v.push(s[o] * res.eps()[o]);
            }
            // uᵀ ∂W u and uᵀ ∂W v for this group
            let (db, dc) = match path {
                ScorePath::Fast | ScorePath::Entrywise => {
                    let ker = family.kernel(layout);
                    buf.resize(nn, T::zero());
                    if path == ScorePath::Fast {
                        ker.apply_dtheta(comp, &u, &mut buf);
                    } else {
                        for j in 0..nn {
                            let mut acc = T::zero();
                            for k in 0..nn {
                                acc += ker.dentry(j, k)[comp] * u[k];
                            }
                            buf[j] = acc;
                        }
                    }
                    let db: T = (0..nn).map(|j| u[j] * buf[j]).sum();
                    let dc: T = (0..nn).map(|j| v[j] * buf[j]).sum();
                    (db * scale, dc * scale)
                }
                ScorePath::Dense => {
                    // pass.cu, pass.cv hold scale·C⁻¹u, scale·C⁻¹v
                    let dcm = &family.dense_dcorrelation(layout)[comp];
                    let cu = &pass.cu[r.clone()];
                    let cv = &pass.cv[r.clone()];
                    let dcu = dcm.matvec(cu);
                    let db: T = -(0..nn).map(|j| cu[j] * dcu[j]).sum::<T>();
                    let dc: T = -(0..nn).map(|j| cv[j] * dcu[j]).sum::<T>();
                    (db / scale, dc / scale)
                }
            };
            db_terms.push(db);
            dc_terms.push(pass.c[i] * dc);
        }
        let sum_db = pairwise_sum(&db_terms);
        let sum_cdc = pairwise_sum(&dc_terms);
        let b = pass.b;
        grads.push(-two * n / (b * b * b) * (pass.sum_c2 * sum_db - b * sum_cdc));
    }
    Ok(grads)
}

/// s-scores via O(n²) sums over closed-form inverse entries.
pub fn s_scores_generic<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>) -> Result<Vec<T>> {
    let s = w.s_values(res.covariates(), res.p(), res.n_obs());
    Ok(scores_scaled(res, &s, &w.family, w.scale, ScorePath::Entrywise)?.s)
}

/// s-scores via the structured O(n) products (all three families).
pub fn s_scores_fast<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>) -> Result<Vec<T>> {
    let s = w.s_values(res.covariates(), res.p(), res.n_obs());
    Ok(scores_scaled(res, &s, &w.family, w.scale, ScorePath::Fast)?.s)
}

pub fn theta_score<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>) -> Result<Vec<T>> {
    theta_score_with(res, w, ScorePath::Fast)
}

pub fn theta_score_with<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>, path: ScorePath) -> Result<Vec<T>> {
    let s = w.s_values(res.covariates(), res.p(), res.n_obs());
    let pass = first_pass(res, &s, &w.family, w.scale, path)?;
    theta_from_pass(res, &s, &w.family, w.scale, path, &pass)
}

/// Dense `W_i` for every group of a bundle.
pub fn weight_matrix<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>, group: usize) -> Matrix<T> {
    let r = res.range(group);
    let s = w.s_values(&res.covariates()[r.start * res.p()..r.end * res.p()], res.p(), r.len());
    w.group_matrix(res.layout(group), &s)
}
