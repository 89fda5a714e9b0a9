//! Working-correlation families with closed-form scaled inverses.
//!
//! Each family is stored in its θ-parametrisation. The "scaled inverse" of a
//! family is a fixed positive multiple of `C_θ⁻¹`:
//!
//! * equicorrelated: `δ_jk − θ/(1+θn)`, with `ρ = θ/(1+θ)`;
//! * AR(1): `δ_jk + θ²·1{0<j=k<n−1} − θ·1{|j−k|=1}` (`1−θ²` when `n = 1`);
//! * nested: `δ_jk − a_m·1{m=m'} − κ g_m g_m'` where `m`, `m'` are the
//!   subgroups of rows `j`, `k`, `g_m = 1/(1+θ₁n_m)`, `a_m = θ₁g_m`,
//!   `S = Σ n_m g_m` and `κ = θ₂/(1+θ₂S)`.
//!
//! Row and column indices are 0-based throughout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::GroupLayout;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Equicorrelated,
    Ar1,
    Nested,
}

impl FamilyKind {
    pub fn dim(self) -> usize {
        match self {
            FamilyKind::Nested => 2,
            _ => 1,
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equicorrelated" | "equi" | "exchangeable" => Ok(Self::Equicorrelated),
            "ar1" => Ok(Self::Ar1),
            "nested" => Ok(Self::Nested),
            other => Err(Error::InvalidConfig(format!(
                "unknown correlation family `{other}` (expected equicorrelated, ar1 or nested)"
            ))),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Equicorrelated => "equicorrelated",
            Self::Ar1 => "ar1",
            Self::Nested => "nested",
        })
    }
}

/// Box constraint Θ used when boosting projects θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBox<T> {
    pub theta_max: T,
    /// AR(1) upper bound is `1 − ar1_margin`.
    pub ar1_margin: T,
}

impl<T: Real> Default for ThetaBox<T> {
    fn default() -> Self {
        Self { theta_max: T::lit(1e6), ar1_margin: T::lit(0.01) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationFamily<T> {
    kind: FamilyKind,
    theta: [T; 2],
    domain: ThetaBox<T>,
}

impl<T: Real> CorrelationFamily<T> {
    /// Family at θ = 0 (independence) with the default box.
    pub fn independence(kind: FamilyKind) -> Self {
        Self { kind, theta: [T::zero(); 2], domain: ThetaBox::default() }
    }

    pub fn equicorrelated(theta: T) -> Self {
        Self::independence(FamilyKind::Equicorrelated).with_theta(&[theta])
    }

    pub fn ar1(theta: T) -> Self {
        Self::independence(FamilyKind::Ar1).with_theta(&[theta])
    }

    pub fn nested(theta1: T, theta2: T) -> Self {
        Self::independence(FamilyKind::Nested).with_theta(&[theta1, theta2])
    }

    /// Equicorrelated or AR(1) family expressed through the correlation ρ.
    /// AR(1) accepts negative ρ here; Θ only constrains boosting.
    pub fn from_rho(kind: FamilyKind, rho: T) -> Result<Self> {
        match kind {
            FamilyKind::Equicorrelated if rho >= T::zero() && rho < T::one() => {
                Ok(Self::equicorrelated(rho / (T::one() - rho)))
            }
            FamilyKind::Ar1 if rho.abs() < T::one() => Ok(Self::ar1(rho)),
            FamilyKind::Nested => Err(Error::UnsupportedFamily {
                family: kind.to_string(),
                what: "single-ρ parametrisation".into(),
            }),
            _ => Err(Error::DomainError(format!("ρ = {rho} outside the {kind} domain"))),
        }
    }

    pub fn with_domain(mut self, domain: ThetaBox<T>) -> Self {
        self.domain = domain;
        self
    }

    /// Same family at a new θ, taken as given (no projection).
    pub fn with_theta(mut self, theta: &[T]) -> Self {
        assert_eq!(theta.len(), self.kind.dim(), "θ has the wrong dimension for {}", self.kind);
        self.theta = [T::zero(); 2];
        self.theta[..theta.len()].copy_from_slice(theta);
        self
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn theta(&self) -> &[T] {
        &self.theta[..self.dim()]
    }

    pub fn domain(&self) -> &ThetaBox<T> {
        &self.domain
    }

    /// Componentwise clamp of a raw θ onto Θ.
    pub fn project(&self, raw: &[T]) -> Vec<T> {
        let hi = match self.kind {
            FamilyKind::Ar1 => T::one() - self.domain.ar1_margin,
            _ => self.domain.theta_max,
        };
        raw.iter().map(|&t| if t.is_nan() { T::zero() } else { t.max(T::zero()).min(hi) }).collect()
    }

    pub fn project_theta(&self, raw: &[T]) -> Self {
        self.with_theta(&self.project(raw))
    }

    /// Correlation parameters implied by θ: `[ρ]` or `[ρ₁, ρ₂]` for nested.
    pub fn rho(&self) -> Vec<T> {
        let [t1, t2] = self.theta;
        match self.kind {
            FamilyKind::Equicorrelated => vec![t1 / (T::one() + t1)],
            FamilyKind::Ar1 => vec![t1],
            FamilyKind::Nested => {
                let (r1, r2) = nested_reparam_inverse(t1, t2);
                vec![r1, r2]
            }
        }
    }

    pub fn kernel<'a>(&self, layout: &'a GroupLayout) -> GroupKernel<'a, T> {
        GroupKernel::new(self, layout)
    }

    /// Entry `(j, k)` of the scaled inverse.
    pub fn inverse_entry(&self, layout: &GroupLayout, j: usize, k: usize) -> Result<T> {
        check_index(layout, j, k)?;
        Ok(self.kernel(layout).entry(j, k))
    }

    /// Gradient over θ of [`inverse_entry`](Self::inverse_entry).
    pub fn dtheta_inverse_entry(&self, layout: &GroupLayout, j: usize, k: usize) -> Result<Vec<T>> {
        check_index(layout, j, k)?;
        Ok(self.kernel(layout).dentry(j, k)[..self.dim()].to_vec())
    }

    /// Closed-form scaled inverse as a dense matrix.
    pub fn inverse_matrix(&self, layout: &GroupLayout) -> Matrix<T> {
        let ker = self.kernel(layout);
        Matrix::from_fn(layout.n, layout.n, |j, k| ker.entry(j, k))
    }

    /// The working correlation matrix `C_θ` itself.
    pub fn dense_correlation(&self, layout: &GroupLayout) -> Matrix<T> {
        let n = layout.n;
        let [t1, t2] = self.theta;
        match self.kind {
            FamilyKind::Equicorrelated => {
                let rho = t1 / (T::one() + t1);
                Matrix::from_fn(n, n, |j, k| if j == k { T::one() } else { rho })
            }
            FamilyKind::Ar1 => Matrix::from_fn(n, n, |j, k| t1.powi(j.abs_diff(k) as i32)),
            FamilyKind::Nested => {
                let (r1, r2) = nested_reparam_inverse(t1, t2);
                let sub = row_subgroups(layout);
                Matrix::from_fn(n, n, |j, k| {
                    if j == k {
                        T::one()
                    } else if sub[j] == sub[k] {
                        r1
                    } else {
                        r2
                    }
                })
            }
        }
    }

    /// θ-derivatives of `C_θ`, one matrix per component.
    pub fn dense_dcorrelation(&self, layout: &GroupLayout) -> Vec<Matrix<T>> {
        let n = layout.n;
        let [t1, t2] = self.theta;
        let one = T::one();
        match self.kind {
            FamilyKind::Equicorrelated => {
                let dr = one / ((one + t1) * (one + t1));
                vec![Matrix::from_fn(n, n, |j, k| if j == k { T::zero() } else { dr })]
            }
            FamilyKind::Ar1 => vec![Matrix::from_fn(n, n, |j, k| {
                let h = j.abs_diff(k);
                if h == 0 {
                    T::zero()
                } else {
                    T::from_usize_lossy(h) * t1.powi(h as i32 - 1)
                }
            })],
            FamilyKind::Nested => {
                let q = one / ((one + t1 + t2) * (one + t1 + t2));
                let sub = row_subgroups(layout);
                let build = |within: T, between: T| {
                    Matrix::from_fn(n, n, |j, k| {
                        if j == k {
                            T::zero()
                        } else if sub[j] == sub[k] {
                            within
                        } else {
                            between
                        }
                    })
                };
                vec![build(q, -t2 * q), build(q, (one + t1) * q)]
            }
        }
    }
}

fn check_index(layout: &GroupLayout, j: usize, k: usize) -> Result<()> {
    if j >= layout.n || k >= layout.n {
        return Err(Error::IndexOutOfRange { j, k, n: layout.n });
    }
    Ok(())
}

fn row_subgroups(layout: &GroupLayout) -> Vec<usize> {
    layout.subgroups.iter().enumerate().flat_map(|(m, &k)| std::iter::repeat(m).take(k)).collect()
}

/// `(ρ₁, ρ₂) ↦ (θ₁, θ₂) = ((ρ₁−ρ₂)/(1−ρ₁), ρ₂/(1−ρ₁))`.
pub fn nested_reparam<T: Real>(rho1: T, rho2: T) -> Result<(T, T)> {
    if !(rho2 >= T::zero() && rho2 <= rho1 && rho1 < T::one()) {
        return Err(Error::DomainError(format!("need 0 ≤ ρ₂ ≤ ρ₁ < 1, got ρ₁ = {rho1}, ρ₂ = {rho2}")));
    }
    let q = T::one() - rho1;
    Ok(((rho1 - rho2) / q, rho2 / q))
}

/// Inverse of [`nested_reparam`].
pub fn nested_reparam_inverse<T: Real>(theta1: T, theta2: T) -> (T, T) {
    let t = T::one() + theta1 + theta2;
    ((theta1 + theta2) / t, theta2 / t)
}

/// Per-group view of a family's scaled inverse with O(n) products.
pub struct GroupKernel<'a, T> {
    kind: FamilyKind,
    theta: [T; 2],
    n: usize,
    subgroups: &'a [usize],
    // equicorrelated: c = θ/(1+θn), dc = 1/(1+θn)²
    c: T,
    dc: T,
    // nested
    g: Vec<T>,
    a: Vec<T>,
    starts: Vec<usize>,
    kappa: T,
    dkappa: [T; 2],
}

impl<'a, T: Real> GroupKernel<'a, T> {
    fn new(family: &CorrelationFamily<T>, layout: &'a GroupLayout) -> Self {
        let one = T::one();
        let [t1, t2] = family.theta;
        let n = layout.n;
        let mut ker = Self {
            kind: family.kind,
            theta: family.theta,
            n,
            subgroups: &layout.subgroups,
            c: T::zero(),
            dc: T::zero(),
            g: Vec::new(),
            a: Vec::new(),
            starts: Vec::new(),
            kappa: T::zero(),
            dkappa: [T::zero(); 2],
        };
        match family.kind {
            FamilyKind::Equicorrelated => {
                let den = one + t1 * T::from_usize_lossy(n);
                ker.c = t1 / den;
                ker.dc = one / (den * den);
            }
            FamilyKind::Ar1 => {}
            FamilyKind::Nested => {
                let mut s = T::zero();
                let mut s2 = T::zero();
                let mut start = 0;
                for &nm in &layout.subgroups {
                    let nm_t = T::from_usize_lossy(nm);
                    let g = one / (one + t1 * nm_t);
                    ker.g.push(g);
                    ker.a.push(t1 * g);
                    ker.starts.push(start);
                    start += nm;
                    s += nm_t * g;
                    s2 += nm_t * nm_t * g * g;
                }
                let den = one + t2 * s;
                ker.kappa = t2 / den;
                ker.dkappa = [t2 * t2 * s2 / (den * den), one / (den * den)];
            }
        }
        ker
    }

    fn sub_of(&self, j: usize) -> usize {
        self.starts.partition_point(|&s| s <= j) - 1
    }

    pub fn entry(&self, j: usize, k: usize) -> T {
        let one = T::one();
        let delta = if j == k { one } else { T::zero() };
        let t = self.theta[0];
        match self.kind {
            FamilyKind::Equicorrelated => delta - self.c,
            FamilyKind::Ar1 => {
                if self.n == 1 {
                    one - t * t
                } else if j == k {
                    if j > 0 && j + 1 < self.n {
                        one + t * t
                    } else {
                        one
                    }
                } else if j.abs_diff(k) == 1 {
                    -t
                } else {
                    T::zero()
                }
            }
            FamilyKind::Nested => {
                let (m, mp) = (self.sub_of(j), self.sub_of(k));
                let block = if m == mp { self.a[m] } else { T::zero() };
                delta - block - self.kappa * (self.g[m] * self.g[mp])
            }
        }
    }

    /// θ-gradient of `entry(j, k)`; unused components are zero.
    pub fn dentry(&self, j: usize, k: usize) -> [T; 2] {
        let zero = T::zero();
        let t = self.theta[0];
        match self.kind {
            FamilyKind::Equicorrelated => [-self.dc, zero],
            FamilyKind::Ar1 => {
                let v = if self.n == 1 {
                    -(t + t)
                } else if j == k {
                    if j > 0 && j + 1 < self.n {
                        t + t
                    } else {
                        zero
                    }
                } else if j.abs_diff(k) == 1 {
                    -T::one()
                } else {
                    zero
                };
                [v, zero]
            }
            FamilyKind::Nested => {
                let (m, mp) = (self.sub_of(j), self.sub_of(k));
                let (g, gp) = (self.g[m], self.g[mp]);
                let dg = -T::from_usize_lossy(self.subgroups[m]) * g * g;
                let dgp = -T::from_usize_lossy(self.subgroups[mp]) * gp * gp;
                let block = if m == mp { g * g } else { zero };
                let d1 = block + self.dkappa[0] * (g * gp) + self.kappa * (dg * gp + g * dgp);
                let d2 = self.dkappa[1] * (g * gp);
                [-d1, -d2]
            }
        }
    }

    /// `out = C̃⁻¹ x` in O(n).
    pub fn apply(&self, x: &[T], out: &mut [T]) {
        let n = self.n;
        debug_assert!(x.len() == n && out.len() == n);
        let t = self.theta[0];
        match self.kind {
            FamilyKind::Equicorrelated => {
                let s = self.c * x.iter().copied().sum::<T>();
                for j in 0..n {
                    out[j] = x[j] - s;
                }
            }
            FamilyKind::Ar1 => {
                if n == 1 {
                    out[0] = (T::one() - t * t) * x[0];
                    return;
                }
                out[0] = x[0] - t * x[1];
                out[n - 1] = x[n - 1] - t * x[n - 2];
                let d = T::one() + t * t;
                for j in 1..n - 1 {
                    out[j] = d * x[j] - t * (x[j - 1] + x[j + 1]);
                }
            }
            FamilyKind::Nested => {
                let mut big_g = T::zero();
                let mut u = Vec::with_capacity(self.subgroups.len());
                for (m, &nm) in self.subgroups.iter().enumerate() {
                    let st = self.starts[m];
                    let um: T = x[st..st + nm].iter().copied().sum();
                    big_g += self.g[m] * um;
                    u.push(um);
                }
                for (m, &nm) in self.subgroups.iter().enumerate() {
                    let st = self.starts[m];
                    let shift = self.a[m] * u[m] + self.kappa * self.g[m] * big_g;
                    for j in st..st + nm {
                        out[j] = x[j] - shift;
                    }
                }
            }
        }
    }

    /// `out = (∂C̃⁻¹/∂θ_c) x` in O(n).
    pub fn apply_dtheta(&self, c: usize, x: &[T], out: &mut [T]) {
        let n = self.n;
        let t = self.theta[0];
        match self.kind {
            FamilyKind::Equicorrelated => {
                let s = -self.dc * x.iter().copied().sum::<T>();
                out.iter_mut().for_each(|o| *o = s);
            }
            FamilyKind::Ar1 => {
                if n == 1 {
                    out[0] = -(t + t) * x[0];
                    return;
                }
                out[0] = -x[1];
                out[n - 1] = -x[n - 2];
                for j in 1..n - 1 {
                    out[j] = (t + t) * x[j] - (x[j - 1] + x[j + 1]);
                }
            }
            FamilyKind::Nested => {
                let mut big_g = T::zero();
                let mut big_h = T::zero();
                let mut u = Vec::with_capacity(self.subgroups.len());
                for (m, &nm) in self.subgroups.iter().enumerate() {
                    let st = self.starts[m];
                    let um: T = x[st..st + nm].iter().copied().sum();
                    let g = self.g[m];
                    big_g += g * um;
                    big_h += T::from_usize_lossy(nm) * g * g * um;
                    u.push(um);
                }
                for (m, &nm) in self.subgroups.iter().enumerate() {
                    let st = self.starts[m];
                    let g = self.g[m];
                    let v = if c == 0 {
                        let nm_t = T::from_usize_lossy(nm);
                        g * g * u[m] + self.dkappa[0] * g * big_g
                            - self.kappa * nm_t * g * g * big_g
                            - self.kappa * g * big_h
                    } else {
                        self.dkappa[1] * g * big_g
                    };
                    for o in &mut out[st..st + nm] {
                        *o = -v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn equicorrelated_n2_theta1() {
        let f = CorrelationFamily::equicorrelated(1.0);
        let l = GroupLayout::flat(2);
        assert_relative_eq!(f.inverse_entry(&l, 0, 0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(f.inverse_entry(&l, 0, 1).unwrap(), -1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(f.dtheta_inverse_entry(&l, 0, 1).unwrap()[0], -1.0 / 9.0, epsilon = 1e-15);
        let c = f.dense_correlation(&l);
        assert_eq!(c.as_slice(), &[1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn ar1_entries() {
        let l = GroupLayout::flat(3);
        let f = CorrelationFamily::ar1(0.0);
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(f.inverse_entry(&l, j, k).unwrap(), if j == k { 1.0 } else { 0.0 });
            }
        }
        let f = CorrelationFamily::ar1(0.3);
        assert_relative_eq!(f.dtheta_inverse_entry(&l, 1, 1).unwrap()[0], 0.6, epsilon = 1e-15);
        let c = CorrelationFamily::ar1(0.5).dense_correlation(&l);
        assert_eq!(c.as_slice(), &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        assert!(f.inverse_entry(&l, 3, 0).is_err());
    }

    #[test]
    fn nested_zero_is_identity() {
        let l = GroupLayout::new(4, vec![2, 2]);
        let c = CorrelationFamily::nested(0.0, 0.0).dense_correlation(&l);
        assert_eq!(c, Matrix::identity(4));
    }

    #[test]
    fn projection_clamps() {
        let e = CorrelationFamily::equicorrelated(0.0);
        assert_eq!(e.project(&[-0.4]), vec![0.0]);
        let a = CorrelationFamily::ar1(0.0);
        assert_relative_eq!(a.project(&[1.2])[0], 0.99);
        let n = CorrelationFamily::nested(0.0, 0.0);
        assert_eq!(n.project(&[0.5, -1.0]), vec![0.5, 0.0]);
    }

    #[test]
    fn reparam_examples() {
        assert_eq!(nested_reparam(0.0, 0.0).unwrap(), (0.0, 0.0));
        let (t1, t2) = nested_reparam(0.5, 0.25).unwrap();
        assert_relative_eq!(t1, 0.5);
        assert_relative_eq!(t2, 0.5);
        assert!(nested_reparam(0.2, 0.3).is_err());
        assert!(nested_reparam(1.0, 0.3).is_err());
    }

    #[test]
    fn family_strings() {
        assert_eq!("AR1".parse::<FamilyKind>().unwrap(), FamilyKind::Ar1);
        assert_eq!(FamilyKind::Nested.to_string(), "nested");
        assert!("toeplitz".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn apply_matches_entries() {
        let layouts = [GroupLayout::flat(1), GroupLayout::flat(2), GroupLayout::flat(5), GroupLayout::new(6, vec![1, 3, 2])];
        let fams = [
            CorrelationFamily::equicorrelated(0.7),
            CorrelationFamily::ar1(0.4),
            CorrelationFamily::nested(0.6, 0.3),
        ];
        for l in &layouts {
            for f in &fams {
                let ker = f.kernel(l);
                let x: Vec<f64> = (0..l.n).map(|i| (i as f64 * 0.37).sin() + 0.2).collect();
                let mut out = vec![0.0; l.n];
                ker.apply(&x, &mut out);
                for j in 0..l.n {
                    let direct: f64 = (0..l.n).map(|k| ker.entry(j, k) * x[k]).sum();
                    assert_relative_eq!(out[j], direct, epsilon = 1e-13);
                }
                for c in 0..f.dim() {
                    ker.apply_dtheta(c, &x, &mut out);
                    for j in 0..l.n {
                        let direct: f64 = (0..l.n).map(|k| ker.dentry(j, k)[c] * x[k]).sum();
                        assert_relative_eq!(out[j], direct, epsilon = 1e-13);
                    }
                }
            }
        }
    }
}
