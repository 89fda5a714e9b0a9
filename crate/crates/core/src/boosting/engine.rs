use std::sync::Arc;

use crate::correlation::CorrelationFamily;
use crate::data::{FoldPartition, ResidualBundle};
use crate::error::{Error, Result};
use crate::sandwich::{
    generalized_loss_at, generalized_scores_at, loss_at, scores_at, BasisSet, GramMatrix, SFunction, ScorePath, Scores,
    WeightModel,
};
use crate::scalar::Real;

use super::learner::{fit_base_learner, LearnerSpec};
use super::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode<T> {
    /// `ŝ ← max(ε, ŝ − λ^(s) û)`.
    Fixed,
    /// `ŝ ← max(ε, ŝ − μ λ_m û)` with `λ_m` from a quadratic model of the loss
    /// along `−û`, clamped into `interval`.
    Variable { interval: (T, T), shrinkage: T },
}

/// Boosting hyperparameters.
///
/// Steps act on normalised scores: the base learner is fitted to
/// `N·U^(s)/L̂` and θ moves along `U^(θ)/L̂`, i.e. gradients of `log L̂`
/// rescaled to be free of sample size and residual scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostConfig<T> {
    pub m_stop: usize,
    pub lambda_s: T,
    pub lambda_theta: T,
    pub step_mode: StepMode<T>,
    pub s_floor: T,
    /// Folds for choosing the iteration count; below 2 disables the search and
    /// `m_stop` is used as is.
    pub cv_folds: usize,
    pub learner: LearnerSpec,
    pub seed: u64,
    pub path: ScorePath,
}

impl<T: Real> Default for BoostConfig<T> {
    fn default() -> Self {
        Self {
            m_stop: 100,
            lambda_s: T::lit(0.1),
            lambda_theta: T::lit(0.1),
            step_mode: StepMode::Variable { interval: (T::lit(0.01), T::lit(1.0)), shrinkage: T::lit(0.1) },
            s_floor: T::lit(0.1),
            cv_folds: 2,
            learner: LearnerSpec::default(),
            seed: 0,
            path: ScorePath::Fast,
        }
    }
}

impl<T: Real> BoostConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !(self.lambda_s >= T::zero()) || !(self.lambda_theta >= T::zero()) || !pos(self.s_floor) {
            return Err(Error::InvalidConfig("step sizes must be non-negative and the s floor positive".into()));
        }
        if let StepMode::Variable { interval: (lo, hi), shrinkage } = self.step_mode {
            if !(pos(lo) && lo <= hi && hi.is_finite() && pos(shrinkage)) {
                return Err(Error::InvalidConfig("step interval must be a positive closed interval, shrinkage positive".into()));
            }
        }
        Ok(())
    }
}

/// Loss being boosted.
#[derive(Debug, Clone, Default)]
pub enum Objective<T> {
    #[default]
    Sandwich,
    Generalized { basis: BasisSet<T>, gram: GramMatrix<T> },
}

impl<T: Real> Objective<T> {
    fn loss(&self, res: &ResidualBundle<T>, s: &[T], fam: &CorrelationFamily<T>, path: ScorePath) -> Result<T> {
        match self {
            Objective::Sandwich => loss_at(res, s, fam, path),
            Objective::Generalized { basis, gram } => generalized_loss_at(res, s, fam, basis, gram),
        }
    }

    fn scores(&self, res: &ResidualBundle<T>, s: &[T], fam: &CorrelationFamily<T>, path: ScorePath) -> Result<Scores<T>> {
        match self {
            Objective::Sandwich => scores_at(res, s, fam, path),
            Objective::Generalized { basis, gram } => generalized_scores_at(res, s, fam, basis, gram, path),
        }
    }
}

/// Record of one boosting run.
#[derive(Debug, Clone)]
pub struct BoostTrace<T> {
    /// Training loss before each iteration and after the last (`m_stop + 1` values).
    pub losses: Vec<T>,
    /// θ before each iteration and after the last.
    pub thetas: Vec<Vec<T>>,
    /// Step length applied to each fitted learner.
    pub steps: Vec<T>,
    pub ensemble: Arc<Ensemble<T>>,
    family: CorrelationFamily<T>,
    s_floor: T,
}

impl<T: Real> BoostTrace<T> {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Weight model after the first `m` iterations.
    pub fn model_at(&self, m: usize) -> WeightModel<T> {
        let m = m.min(self.iterations());
        let ens = if m == self.ensemble.len() { self.ensemble.clone() } else { Arc::new(self.ensemble.truncated(m)) };
        WeightModel::new(SFunction::Boosted(ens), self.family.with_theta(&self.thetas[m])).with_floor(self.s_floor)
    }
}

/// Minimiser of the quadratic model of `g` at 0 built from central
/// differences with step `h`, clamped into `[lo, hi]`; `hi` when the model
/// is not convex.
pub fn quadratic_step<T: Real>(mut g: impl FnMut(T) -> Result<T>, h: T, (lo, hi): (T, T)) -> Result<T> {
    let g0 = g(T::zero())?;
    let gp = g(h)?;
    let gm = g(-h)?;
    let d1 = (gp - gm) / (h + h);
    let d2 = (gp - g0 - g0 + gm) / (h * h);
    if !d1.is_finite() || !d2.is_finite() {
        return Ok(lo);
    }
    if d2 <= T::zero() {
        return Ok(hi);
    }
    Ok((-d1 / d2).max(lo).min(hi))
}

/// Variable step length for the sandwich loss along `−direction`.
pub fn variable_step<T: Real>(
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    direction: &[T],
    interval: (T, T),
) -> Result<T> {
    step_for(&Objective::Sandwich, res, s, family, direction, interval, ScorePath::Fast)
}

fn step_for<T: Real>(
    obj: &Objective<T>,
    res: &ResidualBundle<T>,
    s: &[T],
    family: &CorrelationFamily<T>,
    direction: &[T],
    interval: (T, T),
    path: ScorePath,
) -> Result<T> {
    let umax = direction.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if umax == T::zero() {
        return Ok(interval.1);
    }
    let smax = s.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let h = T::lit(1e-4) * smax / umax;
    let mut buf = vec![T::zero(); s.len()];
    quadratic_step(
        |lam| {
            for ((b, &sv), &u) in buf.iter_mut().zip(s).zip(direction) {
                *b = sv - lam * u;
            }
            obj.loss(res, &buf, family, path)
        },
        h,
        interval,
    )
}

/// Sandwich boosting from `ŝ ≡ 1`, `θ = 0`.
pub fn boost<T: Real>(
    res: &ResidualBundle<T>,
    family: &CorrelationFamily<T>,
    config: &BoostConfig<T>,
) -> Result<(WeightModel<T>, BoostTrace<T>)> {
    boost_with(res, family, config, &Objective::Sandwich)
}

pub fn boost_with<T: Real>(
    res: &ResidualBundle<T>,
    family: &CorrelationFamily<T>,
    config: &BoostConfig<T>,
    objective: &Objective<T>,
) -> Result<(WeightModel<T>, BoostTrace<T>)> {
    config.validate()?;
    if res.xi().iter().all(|&v| v == T::zero()) {
        return Err(Error::DegenerateResiduals);
    }
    let n = res.n_obs();
    let n_t = T::from_usize_lossy(n);
    let (x, p) = (res.covariates(), res.p());
    let mut s = vec![T::one(); n];
    let mut fam = family.with_theta(&vec![T::zero(); family.dim()]);
    let mut ens = Ensemble::new(T::one(), config.s_floor);
    let mut losses = Vec::with_capacity(config.m_stop + 1);
    let mut thetas = Vec::with_capacity(config.m_stop + 1);
    let mut steps = Vec::with_capacity(config.m_stop);

    for m in 0..config.m_stop {
        let sc = objective.scores(res, &s, &fam, config.path)?;
        if !sc.loss.is_finite() {
            return Err(Error::NonFiniteLoss(m));
        }
        let norm = if sc.loss > T::zero() { T::one() / sc.loss } else { T::one() };
        losses.push(sc.loss);
        thetas.push(fam.theta().to_vec());

        let target: Vec<T> = sc.s.iter().map(|&u| u * n_t * norm).collect();
        let h = fit_base_learner(x, p, &target, &config.learner)?;
        let u = h.predict_rows(x, p, n);
        let step = match config.step_mode {
            StepMode::Fixed => config.lambda_s,
            StepMode::Variable { interval, shrinkage } => {
                shrinkage * step_for(objective, res, &s, &fam, &u, interval, config.path)?
            }
        };
        for (sv, &uv) in s.iter_mut().zip(&u) {
            *sv = (*sv - step * uv).max(config.s_floor);
        }
        ens.push(step, h);
        steps.push(step);

        let raw: Vec<T> = fam.theta().iter().zip(&sc.theta).map(|(&t, &g)| t - config.lambda_theta * g * norm).collect();
        fam = fam.project_theta(&raw);
    }
    let last = objective.loss(res, &s, &fam, config.path)?;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss(config.m_stop));
    }
    losses.push(last);
    thetas.push(fam.theta().to_vec());

    let trace = BoostTrace { losses, thetas, steps, ensemble: Arc::new(ens), family: fam, s_floor: config.s_floor };
    Ok((trace.model_at(config.m_stop), trace))
}

/// Held-out loss after each iteration `m = 0..=m_stop`, averaged over folds.
/// Held-out `s` values are advanced step by step alongside the ensemble.
pub fn cv_curve<T: Real>(
    res: &ResidualBundle<T>,
    family: &CorrelationFamily<T>,
    config: &BoostConfig<T>,
    objective: &Objective<T>,
) -> Result<Vec<T>> {
    let folds = FoldPartition::random(res.n_groups(), config.cv_folds, config.seed)?;
    let mut total = vec![T::zero(); config.m_stop + 1];
    for f in 0..folds.k {
        let train = res.subset(&folds.complement(f));
        let hold = res.subset(&folds.members(f));
        let (_, trace) = boost_with(&train, family, config, objective)?;
        let (x, p, n) = (hold.covariates(), hold.p(), hold.n_obs());
        let mut s = vec![T::one().max(config.s_floor); n];
        for m in 0..=config.m_stop {
            let fam = family.with_theta(&trace.thetas[m]);
            total[m] += objective.loss(&hold, &s, &fam, config.path)?;
            if m < config.m_stop {
                let (lam, h) = &trace.ensemble.steps()[m];
                for (r, sv) in s.iter_mut().enumerate() {
                    *sv = (*sv - *lam * h.predict(&x[r * p..(r + 1) * p])).max(config.s_floor);
                }
            }
        }
    }
    let k = T::from_usize_lossy(folds.k);
    Ok(total.into_iter().map(|v| v / k).collect())
}

/// Iteration count minimising the cross-validated loss; ties go to the smallest.
pub fn select_m_stop<T: Real>(res: &ResidualBundle<T>, family: &CorrelationFamily<T>, config: &BoostConfig<T>) -> Result<usize> {
    select_m_stop_with(res, family, config, &Objective::Sandwich)
}

pub fn select_m_stop_with<T: Real>(
    res: &ResidualBundle<T>,
    family: &CorrelationFamily<T>,
    config: &BoostConfig<T>,
    objective: &Objective<T>,
) -> Result<usize> {
    if config.cv_folds < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    let curve = cv_curve(res, family, config, objective)?;
    let mut best = 0;
    for (m, &v) in curve.iter().enumerate() {
        if v < curve[best] {
            best = m;
        }
    }
    Ok(best)
}
