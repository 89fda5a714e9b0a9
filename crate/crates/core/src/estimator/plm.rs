//! Cross-fitted weighted DML estimation of the scalar `β` in
//! `Y = D β + g(X) + ε`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::boosting::{boost_with, select_m_stop_with, BoostConfig, Objective};
use crate::correlation::{CorrelationFamily, FamilyKind};
use crate::data::{FoldPartition, GroupedDataset, ResidualBundle};
use crate::error::{Error, Result};
use crate::sandwich::WeightModel;
use crate::scalar::{pairwise_sum, Real};

use super::baselines::{fit_weights_gee, fit_weights_ml};
use super::nuisance::{fit_nuisance, NuisanceSpec, RegressorSpec, Target};

/// How the per-fold weights `Ŵ^(k)` are obtained.
#[derive(Debug, Clone)]
pub enum WeightMethod<T> {
    Unweighted,
    SandwichBoost(BoostConfig<T>),
    HomoscedasticMl,
    HomoscedasticGee,
    /// GEE with `σ̂²(x)` from a regression of `ε̃²` on the covariates.
    HeteroscedasticGee(RegressorSpec<T>),
    /// A weight model supplied by the caller (used for every fold).
    Fixed(WeightModel<T>),
}

impl<T> fmt::Display for WeightMethod<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMethod::Unweighted => "unweighted",
            WeightMethod::SandwichBoost(_) => "sandwich-boost",
            WeightMethod::HomoscedasticMl => "homoscedastic-ml",
            WeightMethod::HomoscedasticGee => "homoscedastic-gee",
            WeightMethod::HeteroscedasticGee(_) => "heteroscedastic-gee",
            WeightMethod::Fixed(_) => "fixed",
        })
    }
}

/// Cross-fitting settings shared by the scalar and coefficient-function estimators.
#[derive(Debug, Clone)]
pub struct PlmConfig<T> {
    pub family: FamilyKind,
    pub folds: usize,
    pub splits: usize,
    pub alpha: f64,
    pub nuisance: NuisanceSpec<T>,
    pub seed: u64,
}

impl<T: Real> Default for PlmConfig<T> {
    fn default() -> Self {
        Self { family: FamilyKind::Equicorrelated, folds: 5, splits: 1, alpha: 0.05, nuisance: NuisanceSpec::default(), seed: 0 }
    }
}

impl<T: Real> PlmConfig<T> {
    pub fn validate(&self, n_groups: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.splits == 0 {
            return Err(Error::InvalidConfig("need at least one split".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if n_groups < self.folds {
            return Err(Error::TooFewGroups { needed: self.folds, have: n_groups });
        }
        Ok(())
    }

    /// Seed of split `s`.
    pub fn split_seed(&self, s: usize) -> u64 {
        self.seed.wrapping_add((s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitEstimate {
    pub beta: f64,
    pub v: f64,
}

/// Fitted weights of one fold, summarised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldWeightSummary {
    pub split: usize,
    pub fold: usize,
    pub theta: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
}

/// Output of [`fit_plm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub beta_hat: f64,
    /// Estimate of `N · Var(β̂)`.
    pub v_hat: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub n_groups: usize,
    pub n_obs: usize,
    pub family: String,
    pub weight_method: String,
    pub per_split: Vec<SplitEstimate>,
    pub weight_summary: Vec<FoldWeightSummary>,
    /// Set when `V̂ = 0` (an exact fit), in which case the interval is a point.
    pub degenerate: bool,
}

/// `Φ⁻¹(1 − α/2)`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Element at position `⌊(n−1)/2⌋` in sorted order, and that position's source index.
pub(crate) fn lower_median(values: &[f64]) -> (f64, usize) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let at = idx[(values.len() - 1) / 2];
    (values[at], at)
}

/// Median aggregation of per-split `(β̂_s, V̂_s)`: lower median of `β̂_s`,
/// then lower median of `V̂_s + N(β̂ − β̂_s)²`. The spread is scaled by `N`
/// because `V̂_s` estimates `N · Var(β̂_s)`.
pub fn aggregate_splits(per_split: &[SplitEstimate], n_obs: usize) -> (f64, f64) {
    let betas: Vec<f64> = per_split.iter().map(|e| e.beta).collect();
    let (beta, _) = lower_median(&betas);
    let n = n_obs as f64;
    let vs: Vec<f64> = per_split.iter().map(|e| e.v + n * (beta - e.beta).powi(2)).collect();
    (beta, lower_median(&vs).0)
}

/// Nuisance residuals for one fold: `(R^D, R^Y)` on the complement and on the fold.
pub(crate) struct FoldResiduals<T> {
    pub train: GroupedDataset<T>,
    pub test: GroupedDataset<T>,
    pub train_d: Vec<T>,
    pub train_y: Vec<T>,
    pub test_d: Vec<T>,
    pub test_y: Vec<T>,
}

fn stack<T: Real>(ds: &GroupedDataset<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut x = Vec::with_capacity(ds.n_obs() * ds.d_covariates());
    let mut y = Vec::with_capacity(ds.n_obs());
    let mut d = Vec::with_capacity(ds.n_obs());
    for g in ds.groups() {
        x.extend_from_slice(g.x());
        y.extend_from_slice(g.y());
        d.extend_from_slice(g.d());
    }
    (x, y, d)
}

pub(crate) fn fold_residuals<T: Real>(
    data: &GroupedDataset<T>,
    folds: &FoldPartition,
    k: usize,
    nuisance: &NuisanceSpec<T>,
) -> Result<FoldResiduals<T>> {
    let train = data.subset(&folds.complement(k));
    let test = data.subset(&folds.members(k));
    let l_hat = fit_nuisance(&train, Target::Y, nuisance)?;
    let m_hat = fit_nuisance(&train, Target::D, nuisance)?;
    let p = data.d_covariates();
    let resid = |ds: &GroupedDataset<T>| {
        let (x, y, d) = stack(ds);
        let n = y.len();
        let lp = l_hat.predict_rows(&x, p, n);
        let mp = m_hat.predict_rows(&x, p, n);
        let ry: Vec<T> = y.iter().zip(&lp).map(|(&a, &b)| a - b).collect();
        let rd: Vec<T> = d.iter().zip(&mp).map(|(&a, &b)| a - b).collect();
        (rd, ry)
    };
    let (train_d, train_y) = resid(&train);
    let (test_d, test_y) = resid(&test);
    Ok(FoldResiduals { train, test, train_d, train_y, test_d, test_y })
}

/// Unweighted slope `Σ R^D R^Y / Σ (R^D)²`.
pub(crate) fn pooled_slope<T: Real>(rd: &[T], ry: &[T]) -> Result<T> {
    let num: Vec<T> = rd.iter().zip(ry).map(|(&a, &b)| a * b).collect();
    let den: Vec<T> = rd.iter().map(|&a| a * a).collect();
    let den = pairwise_sum(&den);
    if !(den > T::zero()) {
        return Err(Error::SingularDenominator);
    }
    Ok(pairwise_sum(&num) / den)
}

/// Fits weights for one fold complement. `objective` is the boosted loss
/// when `method` is [`WeightMethod::SandwichBoost`].
pub(crate) fn fit_fold_weights<T: Real>(
    res: &ResidualBundle<T>,
    kind: FamilyKind,
    method: &WeightMethod<T>,
    objective: &Objective<T>,
    seed: u64,
) -> Result<WeightModel<T>> {
    match method {
        WeightMethod::Unweighted => Ok(WeightModel::constant(CorrelationFamily::independence(kind))),
        WeightMethod::Fixed(w) => Ok(w.clone()),
        WeightMethod::HomoscedasticMl => fit_weights_ml(res, kind),
        WeightMethod::HomoscedasticGee => fit_weights_gee(res, kind, None),
        WeightMethod::HeteroscedasticGee(spec) => fit_weights_gee(res, kind, Some(spec)),
        WeightMethod::SandwichBoost(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = cfg.seed.wrapping_add(seed);
            let family = CorrelationFamily::independence(kind);
            let m = if cfg.cv_folds >= 2 { select_m_stop_with(res, &family, &cfg, objective)? } else { cfg.m_stop };
            let (_, trace) = boost_with(res, &family, &cfg, objective)?;
            Ok(trace.model_at(m))
        }
    }
}

fn summarise<T: Real>(w: &WeightModel<T>, test: &GroupedDataset<T>, split: usize, fold: usize) -> FoldWeightSummary {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for g in test.groups() {
        for v in w.s_values(g.x(), g.p(), g.n()) {
            lo = lo.min(v.as_f64());
            hi = hi.max(v.as_f64());
        }
    }
    FoldWeightSummary { split, fold, theta: w.family.theta().iter().map(|t| t.as_f64()).collect(), s_min: lo, s_max: hi }
}

/// Per-group sums of one fold (see [`group_sums`]).
struct FoldSums<T> {
    qdd: Vec<T>,
    qdy: Vec<T>,
    c: Vec<T>,
    summary: FoldWeightSummary,
}

fn run_fold<T: Real>(
    data: &GroupedDataset<T>,
    folds: &FoldPartition,
    k: usize,
    method: &WeightMethod<T>,
    cfg: &PlmConfig<T>,
    split: usize,
    seed: u64,
) -> Result<FoldSums<T>> {
    let fr = fold_residuals(data, folds, k, &cfg.nuisance)?;
    let beta_k = pooled_slope(&fr.train_d, &fr.train_y)?;
    let eps: Vec<T> = fr.train_y.iter().zip(&fr.train_d).map(|(&y, &d)| y - beta_k * d).collect();
    let (xtr, _, _) = stack(&fr.train);
    let train_res = ResidualBundle::new(
        fr.train_d.clone(),
        eps,
        xtr,
        data.d_covariates(),
        fr.train.groups().iter().map(|g| g.layout()).collect(),
    )?;
    let w = fit_fold_weights(&train_res, cfg.family, method, &Objective::Sandwich, seed.wrapping_add(k as u64))?;

    let (xte, _, _) = stack(&fr.test);
    let test_res = ResidualBundle::new(
        fr.test_d,
        fr.test_y,
        xte,
        data.d_covariates(),
        fr.test.groups().iter().map(|g| g.layout()).collect(),
    )?;
    let (qdd, qdy, c) = group_sums(&test_res, beta_k, &w);
    let summary = summarise(&w, &fr.test, split, k);
    Ok(FoldSums { qdd, qdy, c, summary })
}

/// Per-group `R̂^DᵀŴR̂^D`, `R̂^DᵀŴR̂^Y` and `ξ̂ᵀŴε̂` with `ε̂ = R̂^Y − β̃ R̂^D`;
/// `res` carries `R̂^D` as ξ and `R̂^Y` as ε.
fn group_sums<T: Real>(res: &ResidualBundle<T>, beta_tilde: T, w: &WeightModel<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..res.n_groups() {
        let r = res.range(i);
        let n = r.len();
        let (rd, ry) = (res.xi_group(i), res.eps_group(i));
        let s = w.s_values(&res.covariates()[r.start * res.p()..r.end * res.p()], res.p(), n);
        let ker = w.family.kernel(res.layout(i));
        let u: Vec<T> = rd.iter().zip(&s).map(|(&a, &b)| a * b).collect();
        let mut cu = vec![T::zero(); n];
        ker.apply(&u, &mut cu);
        let wrd: Vec<T> = cu.iter().zip(&s).map(|(&a, &b)| w.scale * a * b).collect();
        let dot = |v: &[T]| wrd.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
        let eh: Vec<T> = ry.iter().zip(rd).map(|(&y, &d)| y - beta_tilde * d).collect();
        out.0.push(dot(rd));
        out.1.push(dot(ry));
        out.2.push(dot(&eh));
    }
    out
}

fn combine<T: Real>(qdd: &[T], qdy: &[T], c: &[T]) -> Result<SplitEstimate> {
    let n_groups = qdd.len();
    let qdd = pairwise_sum(qdd);
    let qdy = pairwise_sum(qdy);
    let c2: Vec<T> = c.iter().map(|&c| c * c).collect();
    let tiny = T::epsilon() * T::from_usize_lossy(n_groups.max(1));
    if !(qdd.abs() > tiny) || !qdd.is_finite() {
        return Err(Error::SingularDenominator);
    }
    Ok(SplitEstimate { beta: (qdy / qdd).as_f64(), v: (pairwise_sum(&c2) / (qdd * qdd)).as_f64() })
}

/// Weighted estimate from held-out residuals with a single weight model:
/// `β̂ = ΣR̂^DᵀŴR̂^Y / ΣR̂^DᵀŴR̂^D` and `V̂ = N Σ(ξ̂ᵀŴε̂)² / (ΣR̂^DᵀŴR̂^D)²`.
pub fn dml_from_residuals<T: Real>(res: &ResidualBundle<T>, beta_tilde: T, w: &WeightModel<T>) -> Result<SplitEstimate> {
    let (qdd, qdy, c) = group_sums(res, beta_tilde, w);
    let mut e = combine(&qdd, &qdy, &c)?;
    e.v *= res.n_obs() as f64;
    Ok(e)
}

fn run_split<T: Real>(
    data: &GroupedDataset<T>,
    method: &WeightMethod<T>,
    cfg: &PlmConfig<T>,
    split: usize,
) -> Result<(SplitEstimate, Vec<FoldWeightSummary>)> {
    let seed = cfg.split_seed(split);
    let folds = FoldPartition::random(data.n_groups(), cfg.folds, seed)?;
    let sums: Vec<FoldSums<T>> =
        (0..cfg.folds).into_par_iter().map(|k| run_fold(data, &folds, k, method, cfg, split, seed)).collect::<Result<_>>()?;
    let cat = |f: fn(&FoldSums<T>) -> &Vec<T>| sums.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<T>>();
    let mut est = combine(&cat(|s| &s.qdd), &cat(|s| &s.qdy), &cat(|s| &s.c))?;
    est.v *= data.n_obs() as f64;
    Ok((est, sums.into_iter().map(|s| s.summary).collect()))
}

/// Cross-fitted weighted DML estimate of `β` with `cfg.splits` repetitions.
pub fn fit_plm<T: Real>(data: &GroupedDataset<T>, method: &WeightMethod<T>, cfg: &PlmConfig<T>) -> Result<EstimateReport> {
    cfg.validate(data.n_groups())?;
    if let WeightMethod::SandwichBoost(b) = method {
        b.validate()?;
    }
    let data = data.subset(&data.canonical_order());
    let outcomes: Vec<(SplitEstimate, Vec<FoldWeightSummary>)> =
        (0..cfg.splits).into_par_iter().map(|s| run_split(&data, method, cfg, s)).collect::<Result<_>>()?;
    let per_split: Vec<SplitEstimate> = outcomes.iter().map(|o| o.0).collect();
    let n_obs = data.n_obs();
    let (beta_hat, v_hat) = aggregate_splits(&per_split, n_obs);
    let std_error = (v_hat / n_obs as f64).sqrt();
    let half = std_error * normal_quantile(cfg.alpha);
    Ok(EstimateReport {
        beta_hat,
        v_hat,
        std_error,
        ci: (beta_hat - half, beta_hat + half),
        alpha: cfg.alpha,
        n_groups: data.n_groups(),
        n_obs,
        family: cfg.family.to_string(),
        weight_method: method.to_string(),
        per_split,
        weight_summary: outcomes.into_iter().flat_map(|o| o.1).collect(),
        degenerate: v_hat == 0.0,
    })
}
