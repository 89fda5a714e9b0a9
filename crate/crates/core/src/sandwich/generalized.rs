//! Generalised sandwich loss for a coefficient function `β(x) = Σ_l φ_l(x) γ_l`.
//!
//! With `M_i` the `n_i × L` matrix `(φ_l(X_ij) ξ̃_ij)`, `U_i = D_s M_i`,
//! `A = Σ U_iᵀ C̃⁻¹ U_i`, `a_i = U_iᵀ C̃⁻¹ (s∘ε̃_i)` and `B = Σ a_i a_iᵀ`, the loss is
//! `N · tr(Φ A⁻¹ B A⁻¹)`. For `L = 1`, `φ ≡ 1` this is exactly the scalar
//! sandwich loss.

use std::fmt;
use std::sync::Arc;

use crate::correlation::CorrelationFamily;
use crate::data::ResidualBundle;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

use super::{ScorePath, Scores, WeightModel};

type BasisFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Basis functions `φ_1..φ_L` of a covariate row.
#[derive(Clone)]
pub struct BasisSet<T> {
    funcs: Vec<BasisFn<T>>,
    names: Vec<String>,
}

impl<T: Real> BasisSet<T> {
    pub fn new() -> Self {
        Self { funcs: Vec::new(), names: Vec::new() }
    }

    pub fn push(mut self, name: impl Into<String>, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        self.funcs.push(Arc::new(f));
        self.names.push(name.into());
        self
    }

    /// The single basis `φ ≡ 1`.
    pub fn constant() -> Self {
        Self::new().push("1", |_| T::one())
    }

    /// `{1, x_c, x_c², …, x_c^degree}` in covariate `c`.
    pub fn polynomial(coord: usize, degree: usize) -> Self {
        let mut b = Self::constant();
        for k in 1..=degree {
            b = b.push(format!("x{coord}^{k}"), move |x: &[T]| x[coord].powi(k as i32));
        }
        b
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        self.funcs.iter().map(|f| f(x)).collect()
    }

    /// Row-major `n_rows × L` matrix of basis values.
    pub fn eval_rows(&self, x: &[T], p: usize, n_rows: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n_rows * self.len());
        for r in 0..n_rows {
            let row = &x[r * p..(r + 1) * p];
            out.extend(self.funcs.iter().map(|f| f(row)));
        }
        out
    }
}

impl<T: Real> Default for BasisSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for BasisSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisSet").field("names", &self.names).finish()
    }
}

/// Empirical Gram matrix `Φ̂` of the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<T>(pub Matrix<T>);

impl<T: Real> GramMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::InvalidConfig("Gram matrix must be square".into()));
        }
        for i in 0..m.rows() {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidConfig("Gram matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self(m))
    }

    /// Mean of `φ(X_ij) φ(X_ij)ᵀ` over all observations.
    pub fn empirical(basis: &BasisSet<T>, x: &[T], p: usize, n_rows: usize) -> Self {
        let l = basis.len();
        let phi = basis.eval_rows(x, p, n_rows);
        let mut m = Matrix::zeros(l, l);
        for r in 0..n_rows {
            let row = &phi[r * l..(r + 1) * l];
            for a in 0..l {
                for b in 0..=a {
                    m[(a, b)] += row[a] * row[b];
                }
            }
        }
        let inv_n = T::one() / T::from_usize_lossy(n_rows.max(1));
        for a in 0..l {
            for b in 0..=a {
                let v = m[(a, b)] * inv_n;
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        Self(m)
    }
}

const COND_LIMIT: f64 = 1e12;

/// Per-observation and per-group quantities of one evaluation.
struct GenPass<T> {
    l: usize,
    /// `M` rows (φ ξ), row-major N × L.
    m: Vec<T>,
    /// `Z = c·C̃⁻¹U`, row-major N × L.
    z: Vec<T>,
    /// `w = c·C̃⁻¹v`.
    w: Vec<T>,
    /// `a_i`, row-major I × L.
    a: Vec<T>,
    p_inv: Matrix<T>,
    b_mat: Matrix<T>,
    loss: T,
}

fn solve_columns<T: Real>(
    path: ScorePath,
    family: &CorrelationFamily<T>,
    layout: &crate::data::GroupLayout,
    chol: Option<&crate::linalg::Cholesky<T>>,
    cols: &[Vec<T>],
) -> Vec<Vec<T>> {
    let n = layout.n;
    let ker = family.kernel(layout);
    cols.iter()
        .map(|x| {
            let mut out = vec![T::zero(); n];
            match path {
                ScorePath::Fast => ker.apply(x, &mut out),
                ScorePath::Entrywise => {
                    for j in 0..n {
                        out[j] = (0..n).fold(T::zero(), |acc, k| acc + ker.entry(j, k) * x[k]);
                    }
                }
                ScorePath::Dense => out = chol.expect("factor").solve(x),
            }
            out
        })
        .collect()
}

fn gen_pass<T: Real>(
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    scale: T,
    basis: &BasisSet<T>,
    gram: &GramMatrix<T>,
    path: ScorePath,
) -> Result<GenPass<T>> {
    let l = basis.len();
    if l == 0 || gram.0.rows() != l {
        return Err(Error::InvalidConfig(format!("basis has {l} functions but Gram matrix is {}×{}", gram.0.rows(), gram.0.cols())));
    }
    let n_obs = res.n_obs();
    let phi = basis.eval_rows(res.covariates(), res.p(), n_obs);
    let mut m = vec![T::zero(); n_obs * l];
    for o in 0..n_obs {
        for c in 0..l {
            m[o * l + c] = phi[o * l + c] * res.xi()[o];
        }
    }
    let mut z = vec![T::zero(); n_obs * l];
    let mut w = vec![T::zero(); n_obs];
    let mut a = vec![T::zero(); res.n_groups() * l];
    let mut big_a = Matrix::<T>::zeros(l, l);
    for i in 0..res.n_groups() {
        let r = res.range(i);
        let layout = res.layout(i);
        let chol = match path {
            ScorePath::Dense => Some(family.dense_correlation(layout).cholesky()?),
            _ => None,
        };
        let mut cols: Vec<Vec<T>> = (0..l).map(|c| r.clone().map(|o| s[o] * m[o * l + c]).collect()).collect();
        cols.push(r.clone().map(|o| s[o] * res.eps()[o]).collect());
        let solved = solve_columns(path, family, layout, chol.as_ref(), &cols);
        for (k, o) in r.clone().enumerate() {
            for c in 0..l {
                z[o * l + c] = scale * solved[c][k];
            }
            w[o] = scale * solved[l][k];
        }
        for c1 in 0..l {
            for c2 in 0..l {
                let mut acc = T::zero();
                for (k, o) in r.clone().enumerate() {
                    acc += cols[c1][k] * z[o * l + c2];
                }
                big_a[(c1, c2)] += acc;
            }
            let mut acc = T::zero();
            for (k, o) in r.clone().enumerate() {
                acc += cols[c1][k] * w[o];
            }
            a[i * l + c1] = acc;
        }
    }
    // symmetrise against rounding
    for c1 in 0..l {
        for c2 in 0..c1 {
            let v = (big_a[(c1, c2)] + big_a[(c2, c1)]) * T::lit(0.5);
            big_a[(c1, c2)] = v;
            big_a[(c2, c1)] = v;
        }
    }
    let cond = big_a.condition_number().as_f64();
    if !(cond < COND_LIMIT) {
        return Err(Error::SingularDesign(cond));
    }
    let p_inv = big_a.cholesky().map_err(|_| Error::SingularDesign(cond))?.inverse();
    let mut b_mat = Matrix::zeros(l, l);
    for i in 0..res.n_groups() {
        let ai = &a[i * l..(i + 1) * l];
        for c1 in 0..l {
            for c2 in 0..l {
                b_mat[(c1, c2)] += ai[c1] * ai[c2];
            }
        }
    }
    let v = p_inv.matmul(&b_mat).matmul(&p_inv);
    let loss = T::from_usize_lossy(n_obs) * gram.0.matmul(&v).trace();
    Ok(GenPass { l, m, z, w, a, p_inv, b_mat, loss })
}

/// Generalised loss at explicit per-observation `s` values.
pub fn generalized_loss_at<T: Real>(
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    basis: &BasisSet<T>,
    gram: &GramMatrix<T>,
) -> Result<T> {
    Ok(gen_pass(res, s, family, T::one(), basis, gram, ScorePath::Fast)?.loss)
}

pub fn generalized_loss<T: Real>(res: &ResidualBundle<T>, w: &WeightModel<T>, basis: &BasisSet<T>, gram: &GramMatrix<T>) -> Result<T> {
    let s = w.s_values(res.covariates(), res.p(), res.n_obs());
    Ok(gen_pass(res, &s, &w.family, w.scale, basis, gram, ScorePath::Fast)?.loss)
}

/// Loss, per-observation s-scores and θ-score of the generalised loss.
pub fn generalized_scores_at<T: Real>(
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    basis: &BasisSet<T>,
    gram: &GramMatrix<T>,
    path: ScorePath,
) -> Result<Scores<T>> {
    gen_scores(res, s, family, T::one(), basis, gram, path)
}

pub fn generalized_scores<T: Real>(
    res: &ResidualBundle<T>,
    w: &WeightModel<T>,
    basis: &BasisSet<T>,
    gram: &GramMatrix<T>,
    path: ScorePath,
) -> Result<Scores<T>> {
    let s = w.s_values(res.covariates(), res.p(), res.n_obs());
    gen_scores(res, &s, &w.family, w.scale, basis, gram, path)
}

fn gen_scores<T: Real>(
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    scale: T,
    basis: &BasisSet<T>,
    gram: &GramMatrix<T>,
    path: ScorePath,
) -> Result<Scores<T>> {
    let pass = gen_pass(res, s, family, scale, basis, gram, path)?;
    let l = pass.l;
    let n = T::from_usize_lossy(res.n_obs());
    let two = T::lit(2.0);
    let p = &pass.p_inv;
    let q = p.matmul(&gram.0).matmul(p);
    let pbq = p.matmul(&pass.b_mat).matmul(&q);
    let g = pbq.add(&pbq.transpose());

    // per-group Q a_i
    let qa: Vec<Vec<T>> = (0..res.n_groups()).map(|i| q.matvec(&pass.a[i * l..(i + 1) * l])).collect();
    let mut s_scores = vec![T::zero(); res.n_obs()];
    for i in 0..res.n_groups() {
        for o in res.range(i) {
            let mj = &pass.m[o * l..(o + 1) * l];
            let zj = &pass.z[o * l..(o + 1) * l];
            let gz = g.matvec(zj);
            let mgz: T = (0..l).map(|c| mj[c] * gz[c]).sum();
            let eps = res.eps()[o];
            let da: T = (0..l).map(|c| qa[i][c] * (mj[c] * pass.w[o] + zj[c] * eps)).sum();
            s_scores[o] = n * (-two * mgz + two * da);
        }
    }

    let mut theta = Vec::with_capacity(family.dim());
    for comp in 0..family.dim() {
        let mut da_mat = Matrix::zeros(l, l);
        let mut lin = T::zero();
        for i in 0..res.n_groups() {
            let r = res.range(i);
            let layout = res.layout(i);
            let nn = layout.n;
            let u_cols: Vec<Vec<T>> = (0..l).map(|c| r.clone().map(|o| s[o] * pass.m[o * l + c]).collect()).collect();
            let v: Vec<T> = r.clone().map(|o| s[o] * res.eps()[o]).collect();
            // dz[c] = ∂W applied to column c of U (without the D_s factors)
            let dz: Vec<Vec<T>> = match path {
                ScorePath::Fast | ScorePath::Entrywise => {
                    let ker = family.kernel(layout);
                    u_cols
                        .iter()
                        .map(|col| {
                            let mut out = vec![T::zero(); nn];
                            if path == ScorePath::Fast {
                                ker.apply_dtheta(comp, col, &mut out);
                            } else {
                                for j in 0..nn {
                                    out[j] = (0..nn).fold(T::zero(), |acc, k| acc + ker.dentry(j, k)[comp] * col[k]);
                                }
                            }
                            out.iter().map(|&x| x * scale).collect()
                        })
                        .collect()
                }
                ScorePath::Dense => {
                    // ∂(cC⁻¹) U = −C⁻¹ ∂C Z, since Z = cC⁻¹U
                    let dc = &family.dense_dcorrelation(layout)[comp];
                    let chol = family.dense_correlation(layout).cholesky()?;
                    (0..l)
                        .map(|c| {
                            let zc: Vec<T> = r.clone().map(|o| pass.z[o * l + c]).collect();
                            let t = dc.matvec(&zc);
                            chol.solve(&t).into_iter().map(|x| -x).collect()
                        })
                        .collect()
                }
            };
            for c1 in 0..l {
                for c2 in 0..l {
                    da_mat[(c1, c2)] += (0..nn).fold(T::zero(), |acc, k| acc + u_cols[c1][k] * dz[c2][k]);
                }
            }
            for c in 0..l {
                let dai = (0..nn).fold(T::zero(), |acc, k| acc + dz[c][k] * v[k]);
                lin += qa[i][c] * dai;
            }
        }
        let tr = da_mat.matmul(&g).trace();
        theta.push(n * (-tr + two * lin));
    }
    Ok(Scores { loss: pass.loss, s: s_scores, theta })
}
