//! Population-level ML, GEE and sandwich objectives for the two analytic
//! examples: ARMA errors under an AR(1) working correlation, and a tanh
//! variance approximated by a step function. Double precision only.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationFamily, FamilyKind};
use crate::data::GroupLayout;
use crate::error::{Error, Result};
use crate::estimator::minimise_scalar;
use crate::linalg::Matrix;

/// ARMA(p, q) process `X_t = Σ φ_i X_{t−i} + e_t + Σ ϑ_j e_{t−j}`, observed
/// for `n` consecutive steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaSpec {
    pub phi: Vec<f64>,
    pub vartheta: Vec<f64>,
    pub n: usize,
}

impl ArmaSpec {
    pub fn new(phi: &[f64], vartheta: &[f64], n: usize) -> Self {
        Self { phi: phi.to_vec(), vartheta: vartheta.to_vec(), n }
    }

    /// Stationarity via the Levinson step-down recursion: every partial
    /// autocorrelation must lie strictly inside (−1, 1).
    pub fn is_stationary(&self) -> bool {
        let mut a = self.phi.clone();
        while let Some(&kappa) = a.last() {
            if !(kappa.abs() < 1.0) {
                return false;
            }
            let k = a.len();
            let prev: Vec<f64> = (0..k - 1).map(|i| (a[i] + kappa * a[k - 2 - i]) / (1.0 - kappa * kappa)).collect();
            a = prev;
        }
        true
    }

    /// MA(∞) weights `ψ_0..ψ_m`.
    fn psi(&self, m: usize) -> Vec<f64> {
        let mut psi = vec![0.0; m + 1];
        psi[0] = 1.0;
        for k in 1..=m {
            let mut v = self.vartheta.get(k - 1).copied().unwrap_or(0.0);
            for (i, &f) in self.phi.iter().enumerate() {
                if i < k {
                    v += f * psi[k - 1 - i];
                }
            }
            psi[k] = v;
        }
        psi
    }

    /// Autocorrelations `γ(0..n)/γ(0)`.
    pub fn autocorrelation(&self) -> Result<Vec<f64>> {
        if !self.is_stationary() {
            return Err(Error::NonStationary);
        }
        let p = self.phi.len();
        let q = self.vartheta.len();
        let psi = self.psi(q);
        let theta = |j: usize| if j == 0 { 1.0 } else { self.vartheta.get(j - 1).copied().unwrap_or(0.0) };
        // Σ_{j=k}^{q} ϑ_j ψ_{j−k}
        let rhs = |k: usize| (k..=q).map(|j| theta(j) * psi[j - k]).sum::<f64>();

        // γ(k) − Σ_i φ_i γ(|k−i|) = rhs(k), k = 0..p
        let mut a = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut b = DVector::<f64>::zeros(p + 1);
        for k in 0..=p {
            a[(k, k)] += 1.0;
            for (i, &f) in self.phi.iter().enumerate() {
                let lag = (k as isize - (i as isize + 1)).unsigned_abs();
                a[(k, lag)] -= f;
            }
            b[k] = rhs(k);
        }
        let head = a.lu().solve(&b).ok_or(Error::NonStationary)?;
        let len = self.n.max(p + 1);
        let mut gamma = vec![0.0; len];
        for k in 0..=p.min(len - 1) {
            gamma[k] = head[k];
        }
        for k in p + 1..len {
            let mut v = rhs(k);
            for (i, &f) in self.phi.iter().enumerate() {
                v += f * gamma[k - 1 - i];
            }
            gamma[k] = v;
        }
        let g0 = gamma[0];
        if !(g0 > 0.0) {
            return Err(Error::NonStationary);
        }
        gamma.truncate(self.n);
        Ok(gamma.into_iter().map(|g| g / g0).collect())
    }
}

/// Toeplitz `n × n` autocorrelation matrix of a stationary ARMA process.
pub fn arma_covariance(spec: &ArmaSpec) -> Result<Matrix<f64>> {
    let r = spec.autocorrelation()?;
    Ok(Matrix::from_fn(spec.n, spec.n, |j, k| r[j.abs_diff(k)]))
}

/// True error covariance `Σ`, covariance of `D`, and the working family.
#[derive(Debug, Clone)]
pub struct PopulationSetting {
    pub sigma: Matrix<f64>,
    pub omega_d: Matrix<f64>,
    pub kind: FamilyKind,
    /// Domain scanned for the working correlation parameter.
    pub domain: (f64, f64),
}

impl PopulationSetting {
    pub fn n(&self) -> usize {
        self.sigma.rows()
    }

    fn family(&self, rho: f64) -> CorrelationFamily<f64> {
        match self.kind {
            FamilyKind::Ar1 => CorrelationFamily::ar1(0.0).with_theta(&[rho]),
            _ => CorrelationFamily::equicorrelated(0.0).with_theta(&[rho / (1.0 - rho)]),
        }
    }

    fn layout(&self) -> GroupLayout {
        GroupLayout::flat(self.n())
    }
}

/// `(1/8) 𝟙𝟙ᵀ + (7/8) I`.
pub fn example_omega_d(n: usize) -> Matrix<f64> {
    Matrix::from_fn(n, n, |j, k| if j == k { 1.0 } else { 0.125 })
}

/// Example settings with ARMA(2,1) errors and an AR(1) working correlation:
/// `'a'` (n = 100) and `'b'` (n = 30).
pub fn example_setting(which: char) -> Result<PopulationSetting> {
    let spec = match which {
        'a' | 'A' => ArmaSpec::new(&[0.3, 0.6], &[-0.5], 100),
        'b' | 'B' => ArmaSpec::new(&[0.1, 0.85], &[-0.4], 30),
        other => return Err(Error::InvalidConfig(format!("unknown setting `{other}` (expected a or b)"))),
    };
    Ok(PopulationSetting {
        sigma: arma_covariance(&spec)?,
        omega_d: example_omega_d(spec.n),
        kind: FamilyKind::Ar1,
        domain: (-0.999, 0.999),
    })
}

/// Asymptotic MSE `tr(WΩ_D)⁻² tr(WΣWΩ_D)` of the estimator weighted by
/// `W` = inverse working correlation at `rho`.
pub fn population_sl(setting: &PopulationSetting, rho: f64) -> f64 {
    let w = setting.family(rho).inverse_matrix(&setting.layout());
    sl_with_weights(setting, &w)
}

/// The population sandwich loss for an arbitrary weight matrix.
pub fn sl_with_weights(setting: &PopulationSetting, w: &Matrix<f64>) -> f64 {
    let wo = w.matmul(&setting.omega_d);
    let num = w.matmul(&setting.sigma).matmul(&wo).trace();
    let den = wo.trace();
    num / (den * den)
}

/// Profiled Gaussian objective `log det C_ρ + n log(tr(C_ρ⁻¹Σ)/n)`.
pub fn population_ml(setting: &PopulationSetting, rho: f64) -> f64 {
    let n = setting.n();
    let c = setting.family(rho).dense_correlation(&setting.layout());
    let Ok(ch) = c.cholesky() else { return f64::INFINITY };
    let inv = ch.inverse();
    let tr = (0..n).map(|j| (0..n).map(|k| inv[(j, k)] * setting.sigma[(k, j)]).sum::<f64>()).sum::<f64>();
    ch.log_det() + n as f64 * (tr / n as f64).ln()
}

/// Moment-fit objective `Σ_{j,k} (Σ_jk − σ² C_ρ,jk)²` with `σ² = tr(Σ)/n`.
pub fn population_gee(setting: &PopulationSetting, rho: f64) -> f64 {
    GeeCurve::new(setting).value(rho)
}

/// [`population_gee`] with the Σ-dependent sums precomputed per lag, so
/// each evaluation costs O(n).
#[derive(Debug, Clone)]
pub struct GeeCurve {
    kind: FamilyKind,
    s2: f64,
    const_term: f64,
    /// Σ_{|j−k|=h} Σ_jk and the number of such pairs, h = 0..n−1.
    lag_sum: Vec<f64>,
    lag_count: Vec<f64>,
}

impl GeeCurve {
    pub fn new(setting: &PopulationSetting) -> Self {
        let n = setting.n();
        let mut lag_sum = vec![0.0; n];
        let mut lag_count = vec![0.0; n];
        let mut const_term = 0.0;
        for j in 0..n {
            for k in 0..n {
                let v = setting.sigma[(j, k)];
                const_term += v * v;
                lag_sum[j.abs_diff(k)] += v;
                lag_count[j.abs_diff(k)] += 1.0;
            }
        }
        Self { kind: setting.kind, s2: setting.sigma.trace() / n as f64, const_term, lag_sum, lag_count }
    }

    /// Working correlation at lag `h`.
    fn corr(&self, rho: f64, h: usize) -> f64 {
        match (h, self.kind) {
            (0, _) => 1.0,
            (_, FamilyKind::Ar1) => rho.powi(h as i32),
            _ => rho,
        }
    }

    pub fn value(&self, rho: f64) -> f64 {
        let mut v = self.const_term;
        for h in 0..self.lag_sum.len() {
            let c = self.s2 * self.corr(rho, h);
            v += -2.0 * c * self.lag_sum[h] + c * c * self.lag_count[h];
        }
        v
    }

    /// Objective divided by the number of matrix entries.
    pub fn mean_value(&self, rho: f64) -> f64 {
        self.value(rho) / self.lag_count.iter().sum::<f64>()
    }
}

/// Gradient descent from `start` with a fixed step on the per-entry GEE
/// objective ([`GeeCurve::mean_value`]), central-difference derivatives and
/// iterates clamped into the domain.
pub fn gee_gradient_descent(setting: &PopulationSetting, start: f64, step: f64, max_iter: usize) -> f64 {
    let curve = GeeCurve::new(setting);
    let (lo, hi) = setting.domain;
    let h = 1e-6;
    let mut rho = start;
    for _ in 0..max_iter {
        let a = (rho - h).max(lo);
        let b = (rho + h).min(hi);
        let g = (curve.mean_value(b) - curve.mean_value(a)) / (b - a);
        let next = (rho - step * g).clamp(lo, hi);
        if (next - rho).abs() < 1e-12 {
            return next;
        }
        rho = next;
    }
    rho
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub grid: Vec<(f64, f64)>,
    /// Grid points below both neighbours (endpoints: below their one
    /// neighbour), refined by golden-section search.
    pub local_minima: Vec<(f64, f64)>,
}

/// Tabulates `f` on `resolution` equispaced points of `[lo, hi]` and lists local minima.
pub fn scan_objective(f: impl Fn(f64) -> f64 + Sync, (lo, hi): (f64, f64), resolution: usize) -> Result<Scan> {
    if resolution < 3 {
        return Err(Error::InvalidConfig("scan needs at least 3 points".into()));
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..resolution)
        .into_par_iter()
        .map(|k| {
            let x = lo + step * k as f64;
            (x, f(x))
        })
        .collect();
    let mut local_minima = Vec::new();
    for k in 0..resolution {
        let v = grid[k].1;
        let left = k == 0 || v < grid[k - 1].1;
        let right = k + 1 == resolution || v < grid[k + 1].1;
        if left && right {
            let a = grid[k.saturating_sub(1)].0;
            let b = grid[(k + 1).min(resolution - 1)].0;
            let refined = golden(&f, a, b);
            local_minima.push(if refined.1 <= v { refined } else { grid[k] });
        }
    }
    Ok(Scan { grid, local_minima })
}

fn golden(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimisers and MSE ratios of one correlation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub rho_ml: f64,
    pub rho_sl: f64,
    /// GEE estimate by gradient descent from ρ = 0.
    pub rho_gee_descent: f64,
    pub gee_local_minima: Vec<f64>,
    pub mse_sl: f64,
    /// Asymptotic MSE relative to the SL minimiser.
    pub ratio_unweighted: f64,
    pub ratio_ml: f64,
    pub ratio_gee: f64,
}

pub const GEE_DESCENT_STEP: f64 = 1e-3;

pub fn summarise_setting(setting: &PopulationSetting) -> Result<CorrelationSummary> {
    let (lo, hi) = setting.domain;
    let rho_ml = minimise_scalar(|r| population_ml(setting, r), lo, hi)?.0;
    let (rho_sl, mse_sl) = minimise_scalar(|r| population_sl(setting, r), lo, hi)?;
    let rho_gee_descent = gee_gradient_descent(setting, 0.0, GEE_DESCENT_STEP, 1_000_000);
    let curve = GeeCurve::new(setting);
    let scan = scan_objective(|r| curve.value(r), (lo, hi), 1999)?;
    Ok(CorrelationSummary {
        rho_ml,
        rho_sl,
        rho_gee_descent,
        gee_local_minima: scan.local_minima.iter().map(|m| m.0).collect(),
        mse_sl,
        ratio_unweighted: population_sl(setting, 0.0) / mse_sl,
        ratio_ml: population_sl(setting, rho_ml) / mse_sl,
        ratio_gee: population_sl(setting, rho_gee_descent) / mse_sl,
    })
}

/// Step-function variance example: `X ~ U[0,1]`, true variance
/// `σ₀²(x) = 2 + tanh(λ(x − μ))`, working standard deviation
/// `σ(x; η) = 1 + 2·𝟙[η, ∞)(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceExample {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceLosses {
    pub ml: f64,
    pub gee: f64,
    pub sl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub eta_ml: f64,
    pub eta_gee: f64,
    pub eta_sl: f64,
    /// `L_SL` at each minimiser divided by the unweighted MSE `E σ₀²`.
    pub ratio_ml: f64,
    pub ratio_gee: f64,
    pub ratio_sl: f64,
}

pub const QUAD_TOL: f64 = 1e-10;
pub const ETA_RANGE: (f64, f64) = (-0.1, 1.1);
pub const ETA_GRID: f64 = 1e-4;

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    quadrature::integrate(f, a, b, QUAD_TOL).integral
}

impl VarianceExample {
    pub fn sigma0_sq(&self, x: f64) -> f64 {
        2.0 + (self.lambda * (x - self.mu)).tanh()
    }

    /// `(∫σ₀², ∫σ₀⁴)` over `[0, c]` and over `[c, 1]`.
    fn moments(&self, c: f64) -> [f64; 4] {
        let v = |x: f64| self.sigma0_sq(x);
        let v2 = |x: f64| self.sigma0_sq(x).powi(2);
        [integrate(v, 0.0, c), integrate(v2, 0.0, c), integrate(v, c, 1.0), integrate(v2, c, 1.0)]
    }

    pub fn losses(&self, eta: f64) -> VarianceLosses {
        let c = eta.clamp(0.0, 1.0);
        let [a0, b0, a1, b1] = self.moments(c);
        // σ² = 1 on [0, c), 9 on [c, 1]
        VarianceLosses {
            ml: (1.0 - c) * 9f64.ln() + a0 + a1 / 9.0,
            gee: (b0 - 2.0 * a0 + c) + (b1 - 18.0 * a1 + 81.0 * (1.0 - c)),
            sl: (a0 + a1 / 81.0) / (c + (1.0 - c) / 9.0).powi(2),
        }
    }

    /// Unweighted asymptotic MSE `E[σ₀²]`.
    pub fn unweighted_mse(&self) -> f64 {
        integrate(|x| self.sigma0_sq(x), 0.0, 1.0)
    }

    /// Minimisers of the three losses over η by grid search on
    /// [`ETA_RANGE`] with spacing [`ETA_GRID`], refined locally.
    pub fn summary(&self) -> VarianceSummary {
        let (lo, hi) = ETA_RANGE;
        let m = ((hi - lo) / ETA_GRID).round() as usize;
        let grid: Vec<(f64, VarianceLosses)> = (0..=m)
            .into_par_iter()
            .map(|k| {
                let eta = lo + ETA_GRID * k as f64;
                (eta, self.losses(eta))
            })
            .collect();
        let argmin = |pick: fn(&VarianceLosses) -> f64| {
            let mut best = 0;
            for (k, g) in grid.iter().enumerate() {
                if pick(&g.1) < pick(&grid[best].1) {
                    best = k;
                }
            }
            let a = grid[best.saturating_sub(1)].0;
            let b = grid[(best + 1).min(m)].0;
            let refined = golden(&|e| pick(&self.losses(e)), a, b);
            if refined.1 < pick(&grid[best].1) {
                refined.0
            } else {
                grid[best].0
            }
        };
        let eta_ml = argmin(|l| l.ml);
        let eta_gee = argmin(|l| l.gee);
        let eta_sl = argmin(|l| l.sl);
        let base = self.unweighted_mse();
        VarianceSummary {
            eta_ml,
            eta_gee,
            eta_sl,
            ratio_ml: self.losses(eta_ml).sl / base,
            ratio_gee: self.losses(eta_gee).sl / base,
            ratio_sl: self.losses(eta_sl).sl / base,
        }
    }
}

/// `(L_ML, L_GEE, L_SL)` of the step-function variance example at `η`.
pub fn variance_example_losses(lambda: f64, mu: f64, eta: f64) -> VarianceLosses {
    VarianceExample { lambda, mu }.losses(eta)
}
