//! Seeded generators for the four simulation scenarios and a Monte-Carlo
//! runner reporting MSE and interval coverage per weight method.
//! Double precision only.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::BoostConfig;
use crate::correlation::{CorrelationFamily, FamilyKind};
use crate::data::{Group, GroupedDataset};
use crate::error::{Error, Result};
use crate::estimator::{fit_plm, NuisanceSpec, PlmConfig, RegressorSpec, WeightMethod};
use crate::population::{arma_covariance, ArmaSpec};
use crate::sandwich::{SFunction, WeightModel};
use crate::scalar::pairwise_sum;

pub const TRUE_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Heteroscedastic equicorrelated errors with `σ₀(x) = 2 + cos(λx)`, n = 10.
    Complexity { lambda: f64 },
    /// Confounded scale mixture with misspecification `η ≥ 1`, n = 4.
    Misspecification { eta: f64 },
    /// Linear model with ARMA(2,1) errors and an AR(1) working correlation.
    CorrMisspec { n: usize },
    /// Variance depending on `D` as well as `X`: `σ₀(d,x) = 2 + tanh(d − 3x)`.
    VarMisspec { n: usize },
}

impl Scenario {
    pub fn group_size(&self) -> usize {
        match *self {
            Scenario::Complexity { .. } => 10,
            Scenario::Misspecification { .. } => 4,
            Scenario::CorrMisspec { n } | Scenario::VarMisspec { n } => n,
        }
    }

    /// Group count used at full scale.
    pub fn full_groups(&self) -> usize {
        match *self {
            Scenario::Complexity { .. } => 2000,
            Scenario::Misspecification { .. } => 10_000,
            Scenario::CorrMisspec { n } | Scenario::VarMisspec { n } => (1 << 15) / n.max(1),
        }
    }

    /// Working correlation fitted by every method.
    pub fn family(&self) -> FamilyKind {
        match self {
            Scenario::CorrMisspec { .. } => FamilyKind::Ar1,
            _ => FamilyKind::Equicorrelated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Scenario::Complexity { lambda } => lambda >= 0.0 && lambda.is_finite(),
            Scenario::Misspecification { eta } => eta >= 1.0 && eta.is_finite(),
            Scenario::CorrMisspec { n } | Scenario::VarMisspec { n } => n >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("scenario parameters out of range: {self}")))
        }
    }

    /// `m₀`.
    pub fn m0(&self, x: f64) -> f64 {
        match self {
            Scenario::Complexity { .. } | Scenario::Misspecification { .. } => x.cos(),
            Scenario::VarMisspec { .. } => -6.0 * (-x).exp(),
            Scenario::CorrMisspec { .. } => 0.0,
        }
    }

    /// `g₀`.
    pub fn g0(&self, x: f64) -> f64 {
        match self {
            Scenario::CorrMisspec { .. } => 0.0,
            _ => x.tanh(),
        }
    }

    /// Known `l₀ = β m₀ + g₀` and `m₀`.
    pub fn known_nuisance(&self) -> NuisanceSpec<f64> {
        let (a, b) = (*self, *self);
        NuisanceSpec::Known {
            l: Arc::new(move |x: &[f64]| if x.is_empty() { 0.0 } else { TRUE_BETA * a.m0(x[0]) + a.g0(x[0]) }),
            m: Arc::new(move |x: &[f64]| if x.is_empty() { 0.0 } else { b.m0(x[0]) }),
        }
    }

    /// True inverse-covariance weights where they are a function of `X`
    /// (the heteroscedastic equicorrelated scenario only).
    pub fn oracle_weights(&self) -> Option<WeightModel<f64>> {
        match *self {
            Scenario::Complexity { lambda } => {
                let s = SFunction::custom(move |x: &[f64]| 1.0 / (2.0 + (lambda * x[0]).cos()));
                // ρ = 0.2 ⇔ θ = ρ/(1−ρ)
                Some(WeightModel::new(s, CorrelationFamily::equicorrelated(0.25)).with_floor(1e-12))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Complexity { lambda } => write!(f, "complexity(lambda={lambda})"),
            Scenario::Misspecification { eta } => write!(f, "misspecification(eta={eta})"),
            Scenario::CorrMisspec { n } => write!(f, "corr-misspec(n={n})"),
            Scenario::VarMisspec { n } => write!(f, "var-misspec(n={n})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub groups: usize,
    pub reps: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Desk-scale defaults: at most 1024 groups and 200 repetitions.
    pub fn desk(scenario: Scenario, seed: u64) -> Self {
        Self { scenario, groups: scenario.full_groups().min(1024), reps: 200, seed }
    }

    pub fn full(scenario: Scenario, seed: u64) -> Self {
        Self { scenario, groups: scenario.full_groups(), reps: 500, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidConfig("need at least one repetition".into()));
        }
        if self.groups < 2 {
            return Err(Error::TooFewGroups { needed: 2, have: self.groups });
        }
        Ok(())
    }

    /// Random stream of repetition `rep`.
    pub fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `n` draws with unit variances and common correlation `r ≥ 0`.
fn equicorrelated_normals(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    let shared = normal(rng) * r.sqrt();
    let own = (1.0 - r).sqrt();
    (0..n).map(|_| shared + own * normal(rng)).collect()
}

/// Dataset of repetition `rep`.
pub fn generate(spec: &ScenarioSpec, rep: usize) -> Result<GroupedDataset<f64>> {
    spec.validate()?;
    let mut rng = spec.rng(rep);
    let sc = spec.scenario;
    let n = sc.group_size();
    let arma_chol = match sc {
        Scenario::CorrMisspec { n } => {
            let c = arma_covariance(&ArmaSpec::new(&[0.3, 0.6], &[-0.5], n))?;
            Some(c.to_nalgebra().cholesky().ok_or(Error::NotPositiveDefinite)?.l())
        }
        _ => None,
    };
    let mut groups = Vec::with_capacity(spec.groups);
    for i in 0..spec.groups {
        let (x, xi, eps): (Vec<f64>, Vec<f64>, Vec<f64>) = match sc {
            Scenario::Complexity { lambda } => {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                let xi = equicorrelated_normals(&mut rng, n, 0.1);
                let z = equicorrelated_normals(&mut rng, n, 0.2);
                let eps = z.iter().zip(&x).map(|(&z, &x)| (2.0 + (lambda * x).cos()) * z).collect();
                (x, xi, eps)
            }
            Scenario::Misspecification { eta } => {
                let x = equicorrelated_normals(&mut rng, n, 0.9);
                let xbar = x.iter().sum::<f64>() / n as f64;
                let p = if xbar >= 0.0 { 1.0 } else { 1.0 / eta };
                let b = rng.random::<f64>() < p;
                let zeta = if b { 1.0 / p } else { 0.0 };
                let xi = (0..n).map(|_| zeta.sqrt() * normal(&mut rng)).collect();
                // AR(1)-type Σ = 0.2^{|j−k|}
                let mut eps = Vec::with_capacity(n);
                let mut prev = normal(&mut rng);
                eps.push(prev);
                for _ in 1..n {
                    prev = 0.2 * prev + (1.0f64 - 0.04).sqrt() * normal(&mut rng);
                    eps.push(prev);
                }
                let eps = eps.into_iter().map(|e| zeta.sqrt() * e).collect();
                (x, xi, eps)
            }
            Scenario::CorrMisspec { .. } => {
                let xi = equicorrelated_normals(&mut rng, n, 0.125);
                let l = arma_chol.as_ref().expect("factor");
                let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
                let eps = (0..n).map(|j| (0..=j).map(|k| l[(j, k)] * z[k]).sum()).collect();
                (Vec::new(), xi, eps)
            }
            Scenario::VarMisspec { .. } => {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let xi: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut rng)).collect();
                let z = equicorrelated_normals(&mut rng, n, 0.2);
                let eps = (0..n)
                    .map(|j| {
                        let d = sc.m0(x[j]) + xi[j];
                        (2.0 + (d - 3.0 * x[j]).tanh()) * z[j]
                    })
                    .collect();
                (x, xi, eps)
            }
        };
        let p = if x.is_empty() { 0 } else { 1 };
        let xr = |j: usize| if p == 0 { 0.0 } else { x[j] };
        let d: Vec<f64> = (0..n).map(|j| sc.m0(xr(j)) + xi[j]).collect();
        let y: Vec<f64> = (0..n).map(|j| TRUE_BETA * d[j] + sc.g0(xr(j)) + eps[j]).collect();
        groups.push(Group::new(format!("g{i}"), y, d, x, p, None)?);
    }
    GroupedDataset::new(groups)
}

/// A weight method compared in an experiment.
#[derive(Debug, Clone)]
pub struct SimMethod {
    pub name: String,
    pub weights: WeightMethod<f64>,
    /// Use the true nuisance functions instead of the configured regressor.
    pub known_nuisance: bool,
}

impl SimMethod {
    pub fn new(name: impl Into<String>, weights: WeightMethod<f64>) -> Self {
        Self { name: name.into(), weights, known_nuisance: false }
    }

    /// Parses `unweighted`, `sandwich-boost`, `ml`, `gee`, `hetero-gee` or
    /// `oracle`; the boosted method uses `boost`.
    pub fn parse(name: &str, scenario: &Scenario, boost: &BoostConfig<f64>) -> Result<Self> {
        let w = match name {
            "unweighted" => WeightMethod::Unweighted,
            "sandwich-boost" | "sandwich" | "sb" => WeightMethod::SandwichBoost(boost.clone()),
            "ml" | "homoscedastic-ml" => WeightMethod::HomoscedasticMl,
            "gee" | "homoscedastic-gee" => WeightMethod::HomoscedasticGee,
            "hetero-gee" | "heteroscedastic-gee" => WeightMethod::HeteroscedasticGee(RegressorSpec::l2boost_default()),
            "oracle" => {
                let w = scenario
                    .oracle_weights()
                    .ok_or_else(|| Error::InvalidConfig(format!("no oracle weights for {scenario}")))?;
                return Ok(Self { name: name.into(), weights: WeightMethod::Fixed(w), known_nuisance: true });
            }
            other => return Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        };
        Ok(Self::new(name, w))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub alpha: f64,
    pub nuisance: NuisanceSpec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { folds: 2, alpha: 0.05, nuisance: NuisanceSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub mse: f64,
    pub mse_se: f64,
    /// MSE divided by the reference method's MSE.
    pub rel_mse: Option<f64>,
    pub coverage: f64,
    pub coverage_se: f64,
    /// Squared errors `(β̂ − β)²` of successful repetitions, in repetition order.
    pub squared_errors: Vec<f64>,
    pub covered: Vec<bool>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ScenarioSpec,
    pub folds: usize,
    pub alpha: f64,
    pub reference: Option<String>,
    pub methods: Vec<MethodResult>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = pairwise_sum(v) / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    (m, (pairwise_sum(&dev) / (v.len() - 1) as f64 / v.len() as f64).sqrt())
}

struct RepOutcome {
    sq: Option<f64>,
    covered: bool,
}

pub fn run_experiment(spec: &ScenarioSpec, methods: &[SimMethod], cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods to compare".into()));
    }
    let known = spec.scenario.known_nuisance();
    let per_rep: Vec<Vec<RepOutcome>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RepOutcome>> {
            let data = generate(spec, rep)?;
            Ok(methods
                .iter()
                .map(|m| {
                    let plm = PlmConfig {
                        family: spec.scenario.family(),
                        folds: cfg.folds,
                        splits: 1,
                        alpha: cfg.alpha,
                        nuisance: if m.known_nuisance { known.clone() } else { cfg.nuisance.clone() },
                        seed: spec.seed.wrapping_add(rep as u64),
                    };
                    match fit_plm(&data, &m.weights, &plm) {
                        Ok(r) => RepOutcome {
                            sq: Some((r.beta_hat - TRUE_BETA).powi(2)),
                            covered: r.ci.0 <= TRUE_BETA && TRUE_BETA <= r.ci.1,
                        },
                        Err(_) => RepOutcome { sq: None, covered: false },
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut results: Vec<MethodResult> = methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let ok: Vec<&RepOutcome> = per_rep.iter().map(|r| &r[k]).filter(|o| o.sq.is_some()).collect();
            let squared_errors: Vec<f64> = ok.iter().map(|o| o.sq.unwrap()).collect();
            let covered: Vec<bool> = ok.iter().map(|o| o.covered).collect();
            let (mse, mse_se) = mean_se(&squared_errors);
            let cov: Vec<f64> = covered.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
            let (coverage, coverage_se) = mean_se(&cov);
            MethodResult {
                method: m.name.clone(),
                mse,
                mse_se,
                rel_mse: None,
                coverage,
                coverage_se,
                failures: spec.reps - squared_errors.len(),
                squared_errors,
                covered,
            }
        })
        .collect();
    let reference = ["oracle", "unweighted"].into_iter().find(|r| results.iter().any(|m| m.method == *r)).map(String::from);
    if let Some(r) = &reference {
        let base = results.iter().find(|m| &m.method == r).map(|m| m.mse).unwrap_or(f64::NAN);
        for m in &mut results {
            m.rel_mse = Some(m.mse / base);
        }
    }
    Ok(ExperimentResult { spec: *spec, folds: cfg.folds, alpha: cfg.alpha, reference, methods: results })
}

impl ExperimentResult {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Mean of `sq_a − sq_b` over repetitions where both succeeded, and its
    /// Monte-Carlo standard error.
    pub fn paired_difference(&self, a: &str, b: &str) -> Option<(f64, f64)> {
        let (ma, mb) = (self.method(a)?, self.method(b)?);
        if ma.failures > 0 || mb.failures > 0 {
            return None;
        }
        let d: Vec<f64> = ma.squared_errors.iter().zip(&mb.squared_errors).map(|(x, y)| x - y).collect();
        Some(mean_se(&d))
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "method,mse,mse_se,rel_mse,coverage,coverage_se,reps,failures")?;
        for m in &self.methods {
            let rel = m.rel_mse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.method, m.mse, m.mse_se, rel, m.coverage, m.coverage_se, self.spec.reps, m.failures
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl FromStr for Scenario {
    type Err = Error;
    /// `complexity:<λ>`, `misspecification:<η>`, `corr-misspec:<n>`, `var-misspec:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').ok_or_else(|| Error::InvalidConfig(format!("scenario `{s}` needs a parameter, e.g. var-misspec:4")))?;
        let num = |what: &str| -> Result<f64> {
            arg.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad {what} `{arg}` in scenario `{s}`")))
        };
        let size = || -> Result<usize> {
            arg.trim().parse::<usize>().map_err(|_| Error::InvalidConfig(format!("bad group size `{arg}` in scenario `{s}`")))
        };
        let sc = match name.trim() {
            "complexity" => Scenario::Complexity { lambda: num("lambda")? },
            "misspecification" | "misspec" => Scenario::Misspecification { eta: num("eta")? },
            "corr-misspec" | "corr" => Scenario::CorrMisspec { n: size()? },
            "var-misspec" | "var" => Scenario::VarMisspec { n: size()? },
            other => return Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        };
        sc.validate()?;
        Ok(sc)
    }
}
