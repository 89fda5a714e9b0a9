//! Classical weight estimators: homoscedastic quasi-Gaussian ML and GEE1
//! moment fits of a single correlation parameter.

use std::collections::BTreeMap;

use crate::correlation::{CorrelationFamily, FamilyKind};
use crate::data::ResidualBundle;
use crate::error::{Error, Result};
use crate::sandwich::{SFunction, WeightModel};
use crate::scalar::Real;

use super::nuisance::{fit_regression, RegressorSpec};

/// Grid points before golden-section refinement.
pub const SEARCH_GRID: usize = 101;
pub const GOLDEN_ITERS: usize = 60;
/// Floor on fitted standard deviations before inversion.
pub const SIGMA_FLOOR: f64 = 0.1;

/// ρ search interval used by the baselines.
pub fn rho_domain<T: Real>(kind: FamilyKind) -> Result<(T, T)> {
    match kind {
        FamilyKind::Equicorrelated => Ok((T::zero(), T::lit(0.999))),
        FamilyKind::Ar1 => Ok((T::lit(-0.999), T::lit(0.999))),
        FamilyKind::Nested => Err(Error::UnsupportedFamily { family: kind.to_string(), what: "ML/GEE baseline".into() }),
    }
}

/// Global minimiser of `f` on `[lo, hi]`: dense grid, then golden-section
/// refinement on the bracket around the best grid point. Returns `(x, f(x))`.
pub fn minimise_scalar<T: Real>(mut f: impl FnMut(T) -> T, lo: T, hi: T) -> Result<(T, T)> {
    let clean = |v: T| if v.is_finite() { v } else { T::infinity() };
    let step = (hi - lo) / T::from_usize_lossy(SEARCH_GRID - 1);
    let mut best = (0usize, T::infinity());
    for k in 0..SEARCH_GRID {
        let v = clean(f(lo + step * T::from_usize_lossy(k)));
        if v < best.1 {
            best = (k, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::OptimFail("objective is not finite anywhere on the search interval".into()));
    }
    let xk = |k: usize| lo + step * T::from_usize_lossy(k);
    let (mut a, mut b) = (xk(best.0.saturating_sub(1)), xk((best.0 + 1).min(SEARCH_GRID - 1)));
    let r = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (clean(f(c)), clean(f(d)));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = clean(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = clean(f(d));
        }
    }
    let (xm, fm) = if fc <= fd { (c, fc) } else { (d, fd) };
    Ok(if fm < best.1 { (xm, fm) } else { (xk(best.0), best.1) })
}

/// Profile quasi-Gaussian objective `Σ log det C_i(ρ) + N log(Q(ρ)/N)`, with
/// `Q(ρ) = Σ ε̃ᵢᵀ C_i(ρ)⁻¹ ε̃ᵢ` (σ² profiled out).
pub struct MlObjective<T> {
    kind: FamilyKind,
    n_obs: T,
    // equicorrelated: group size -> (count, Σ Σε², Σ (Σε)²)
    by_size: BTreeMap<usize, (T, T, T)>,
    // AR(1): Σ over groups with n ≥ 2 of Σε², interior Σε², lag-1 products, (n−1); plus n = 1 Σε²
    ar: [T; 5],
}

impl<T: Real> MlObjective<T> {
    pub fn new(res: &ResidualBundle<T>, kind: FamilyKind) -> Result<Self> {
        rho_domain::<T>(kind)?;
        let mut by_size = BTreeMap::new();
        let mut ar = [T::zero(); 5];
        for i in 0..res.n_groups() {
            let e = res.eps_group(i);
            let n = e.len();
            let s2: T = e.iter().map(|&v| v * v).sum();
            match kind {
                FamilyKind::Equicorrelated => {
                    let s1: T = e.iter().copied().sum();
                    let entry = by_size.entry(n).or_insert((T::zero(), T::zero(), T::zero()));
                    entry.0 += T::one();
                    entry.1 += s2;
                    entry.2 += s1 * s1;
                }
                _ => {
                    if n == 1 {
                        ar[4] += s2;
                    } else {
                        ar[0] += s2;
                        ar[1] += e[1..n - 1].iter().map(|&v| v * v).sum::<T>();
                        ar[2] += e.windows(2).map(|w| w[0] * w[1]).sum::<T>();
                        ar[3] += T::from_usize_lossy(n - 1);
                    }
                }
            }
        }
        Ok(Self { kind, n_obs: T::from_usize_lossy(res.n_obs()), by_size, ar })
    }

    pub fn value(&self, rho: T) -> T {
        let one = T::one();
        let (q, logdet) = match self.kind {
            FamilyKind::Equicorrelated => {
                let mut q = T::zero();
                let mut ld = T::zero();
                for (&n, &(cnt, s2, s1sq)) in &self.by_size {
                    let nm1 = T::from_usize_lossy(n - 1);
                    let den = one + nm1 * rho;
                    q += (s2 - rho / den * s1sq) / (one - rho);
                    ld += cnt * (nm1 * (one - rho).ln() + den.ln());
                }
                (q, ld)
            }
            _ => {
                let [s2, inner, lag, nm1, single] = self.ar;
                let q = (s2 + rho * rho * inner - (rho + rho) * lag) / (one - rho * rho) + single;
                (q, nm1 * (one - rho * rho).ln())
            }
        };
        logdet + self.n_obs * (q / self.n_obs).ln()
    }
}

/// GEE1 moment objective `Σᵢ Σ_{j≠k} (ε̃ᵢⱼε̃ᵢₖ − σⱼσₖ C_jk(ρ))²` up to a ρ-free constant.
pub struct GeeObjective<T> {
    kind: FamilyKind,
    // per lag h ≥ 1 (index h−1): Σ ε_j ε_k σ_j σ_k and Σ σ_j² σ_k² over ordered pairs
    cross: Vec<T>,
    sq: Vec<T>,
}

impl<T: Real> GeeObjective<T> {
    /// `sigma` holds one standard deviation per observation.
    pub fn new(res: &ResidualBundle<T>, kind: FamilyKind, sigma: &[T]) -> Result<Self> {
        rho_domain::<T>(kind)?;
        let lags = match kind {
            FamilyKind::Equicorrelated => 1,
            _ => (0..res.n_groups()).map(|i| res.layout(i).n).max().unwrap_or(1).saturating_sub(1).max(1),
        };
        let mut cross = vec![T::zero(); lags];
        let mut sq = vec![T::zero(); lags];
        let two = T::lit(2.0);
        for i in 0..res.n_groups() {
            let r = res.range(i);
            let e = &res.eps()[r.clone()];
            let s = &sigma[r];
            let n = e.len();
            match kind {
                FamilyKind::Equicorrelated => {
                    let es: T = e.iter().zip(s).map(|(&a, &b)| a * b).sum();
                    let es2: T = e.iter().zip(s).map(|(&a, &b)| a * a * b * b).sum();
                    let ss: T = s.iter().map(|&b| b * b).sum();
                    let ss2: T = s.iter().map(|&b| b * b * b * b).sum();
                    cross[0] += es * es - es2;
                    sq[0] += ss * ss - ss2;
                }
                _ => {
                    for h in 1..n {
                        for j in 0..n - h {
                            let k = j + h;
                            cross[h - 1] += two * e[j] * e[k] * s[j] * s[k];
                            sq[h - 1] += two * s[j] * s[j] * s[k] * s[k];
                        }
                    }
                }
            }
        }
        Ok(Self { kind, cross, sq })
    }

    pub fn value(&self, rho: T) -> T {
        let two = T::lit(2.0);
        match self.kind {
            FamilyKind::Equicorrelated => rho * rho * self.sq[0] - two * rho * self.cross[0],
            _ => {
                let mut v = T::zero();
                let mut pw = T::one();
                for h in 0..self.sq.len() {
                    pw *= rho;
                    v += pw * pw * self.sq[h] - two * pw * self.cross[h];
                }
                v
            }
        }
    }
}

fn all_singletons<T: Real>(res: &ResidualBundle<T>) -> bool {
    res.layouts().iter().all(|l| l.n == 1)
}

/// Estimated ρ of the homoscedastic ML fit.
pub fn ml_rho<T: Real>(res: &ResidualBundle<T>, kind: FamilyKind) -> Result<T> {
    let (lo, hi) = rho_domain::<T>(kind)?;
    if all_singletons(res) {
        return Ok(T::zero());
    }
    let obj = MlObjective::new(res, kind)?;
    Ok(minimise_scalar(|r| obj.value(r), lo, hi)?.0)
}

/// Homoscedastic ML weights: `s ≡ 1` and θ from the profile-likelihood ρ̂.
pub fn fit_weights_ml<T: Real>(res: &ResidualBundle<T>, kind: FamilyKind) -> Result<WeightModel<T>> {
    let rho = ml_rho(res, kind)?;
    Ok(WeightModel::new(SFunction::Constant(T::one()), CorrelationFamily::from_rho(kind, rho)?))
}

/// Per-observation σ̂ for GEE: constant `sqrt(mean ε̃²)`, or a regression of
/// `ε̃²` on the covariates floored at [`SIGMA_FLOOR`].
pub fn gee_sigma<T: Real>(res: &ResidualBundle<T>, hetero: Option<&RegressorSpec<T>>) -> Result<(Vec<T>, Option<super::nuisance::Predictor<T>>)> {
    let e2: Vec<T> = res.eps().iter().map(|&v| v * v).collect();
    match hetero {
        None => {
            let s2 = crate::scalar::pairwise_sum(&e2) / T::from_usize_lossy(e2.len());
            Ok((vec![s2.sqrt(); e2.len()], None))
        }
        Some(spec) => {
            let pred = fit_regression(res.covariates(), res.p(), &e2, spec)?;
            let floor = T::lit(SIGMA_FLOOR);
            let sig = pred
                .predict_rows(res.covariates(), res.p(), res.n_obs())
                .into_iter()
                .map(|v| v.max(T::zero()).sqrt().max(floor))
                .collect();
            Ok((sig, Some(pred)))
        }
    }
}

pub fn gee_rho<T: Real>(res: &ResidualBundle<T>, kind: FamilyKind, sigma: &[T]) -> Result<T> {
    let (lo, hi) = rho_domain::<T>(kind)?;
    if all_singletons(res) {
        return Ok(T::zero());
    }
    let obj = GeeObjective::new(res, kind, sigma)?;
    Ok(minimise_scalar(|r| obj.value(r), lo, hi)?.0)
}

/// GEE1 weights; `hetero` selects the variance smoother for the
/// heteroscedastic variant.
pub fn fit_weights_gee<T: Real>(res: &ResidualBundle<T>, kind: FamilyKind, hetero: Option<&RegressorSpec<T>>) -> Result<WeightModel<T>> {
    let (sigma, pred) = gee_sigma(res, hetero)?;
    let rho = gee_rho(res, kind, &sigma)?;
    let family = CorrelationFamily::from_rho(kind, rho)?;
    let s = match pred {
        None => {
            let sd = sigma.first().copied().unwrap_or(T::one());
            SFunction::Constant(if sd > T::zero() { T::one() / sd } else { T::one() })
        }
        Some(pred) => {
            let floor = T::lit(SIGMA_FLOOR);
            SFunction::custom(move |x| T::one() / pred.predict(x).max(T::zero()).sqrt().max(floor))
        }
    };
    Ok(WeightModel::new(s, family).with_floor(T::lit(1e-12)))
}
