use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sandboost::data::load_csv;
use sandboost::population::{example_setting, population_gee, population_ml, population_sl, summarise_setting, VarianceExample, ETA_RANGE};
use sandboost::sim::{run_experiment, ExperimentConfig, Scenario, ScenarioSpec, SimMethod};
use sandboost::{
    BoostConfig, CsvSchema, FamilyKind, LearnerSpec, NuisanceSpec, PlmConfig, RegressorSpec, StepMode, WeightMethod,
};

use crate::config::{pick, ConfigFile};
use crate::{BoostArgs, CliError, Example21Args, Example22Args, FitArgs, NuisanceArgs, ScenarioName, SimulateArgs};

const MULTI_SPLITS: usize = 50;

const BOOST_KEYS: &[&str] =
    &["m-stop", "lambda-s", "lambda-theta", "step", "lambda-interval", "shrinkage", "s-floor", "cv-folds", "learner", "max-depth", "min-leaf", "knn-k"];
const NUISANCE_KEYS: &[&str] = &["nuisance", "nuisance-rounds"];
const FIT_KEYS: &[&str] = &[
    "data", "group-col", "response", "treatment", "covariates", "subgroup-col", "weights", "correlation", "folds",
    "splits", "multi-split", "alpha", "seed", "output",
];
const SIM_KEYS: &[&str] = &["lambda", "eta", "n", "groups", "reps", "seed", "full", "methods", "folds", "alpha", "output"];

fn load_config(path: Option<&Path>, keys: &[&[&str]]) -> Result<ConfigFile, CliError> {
    let allowed: Vec<&str> = keys.iter().flat_map(|k| k.iter().copied()).collect();
    match path {
        Some(p) => ConfigFile::load(p, &allowed),
        None => Ok(ConfigFile::default()),
    }
}

fn parse_with<T>(s: &str, f: impl FnOnce(&str) -> sandboost::Result<T>) -> Result<T, CliError> {
    f(s).map_err(|e| CliError::Config(e.to_string()))
}

fn boost_config(a: &BoostArgs, cfg: &ConfigFile, seed: u64) -> Result<BoostConfig<f64>, CliError> {
    let mut b = BoostConfig::<f64> { seed, ..BoostConfig::default() };
    if let Some(v) = pick(a.m_stop, cfg, "m-stop")? {
        b.m_stop = v;
    }
    if let Some(v) = pick(a.lambda_s, cfg, "lambda-s")? {
        b.lambda_s = v;
    }
    if let Some(v) = pick(a.lambda_theta, cfg, "lambda-theta")? {
        b.lambda_theta = v;
    }
    if let Some(v) = pick(a.s_floor, cfg, "s-floor")? {
        b.s_floor = v;
    }
    if let Some(v) = pick(a.cv_folds, cfg, "cv-folds")? {
        b.cv_folds = v;
    }
    match pick(a.step.clone(), cfg, "step")?.as_deref() {
        None | Some("variable") => {}
        Some("fixed") => b.step_mode = StepMode::Fixed,
        Some(other) => return Err(CliError::Config(format!("unknown step rule `{other}` (expected fixed or variable)"))),
    }
    let interval = pick(a.lambda_interval.clone(), cfg, "lambda-interval")?;
    let shrink = pick(a.shrinkage, cfg, "shrinkage")?;
    if let StepMode::Variable { interval: iv, shrinkage } = &mut b.step_mode {
        if let Some(text) = interval {
            let bad = || CliError::Config(format!("lambda interval must look like `0.01,1`, got `{text}`"));
            let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
            *iv = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
        }
        *shrinkage = shrink.unwrap_or(*shrinkage);
    } else if interval.is_some() || shrink.is_some() {
        return Err(CliError::Config("--lambda-interval and --shrinkage apply to the variable step rule only".into()));
    }
    if let Some(l) = pick(a.learner.clone(), cfg, "learner")? {
        b.learner = parse_with(&l, str::parse::<LearnerSpec>)?;
    }
    let (depth, leaf, k) = (pick(a.max_depth, cfg, "max-depth")?, pick(a.min_leaf, cfg, "min-leaf")?, pick(a.knn_k, cfg, "knn-k")?);
    match &mut b.learner {
        LearnerSpec::RegressionTree { max_depth, min_leaf } => {
            *max_depth = depth.unwrap_or(*max_depth);
            *min_leaf = leaf.unwrap_or(*min_leaf);
        }
        LearnerSpec::Knn { k: kk } => *kk = k.unwrap_or(*kk),
    }
    b.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(b)
}

fn nuisance_spec(a: &NuisanceArgs, cfg: &ConfigFile) -> Result<NuisanceSpec<f64>, CliError> {
    let rounds = pick(a.nuisance_rounds, cfg, "nuisance-rounds")?;
    let spec = match pick(a.nuisance.clone(), cfg, "nuisance")?.as_deref() {
        None | Some("l2boost") => match RegressorSpec::<f64>::l2boost_default() {
            RegressorSpec::L2Boost { max_depth, min_leaf, rounds: r, shrinkage } => {
                RegressorSpec::L2Boost { max_depth, min_leaf, rounds: rounds.unwrap_or(r), shrinkage }
            }
            other => other,
        },
        Some("knn") => RegressorSpec::Knn { k: 10 },
        Some("mean") => RegressorSpec::Mean,
        Some(other) => return Err(CliError::Config(format!("unknown nuisance regressor `{other}` (expected l2boost, knn or mean)"))),
    };
    Ok(NuisanceSpec::Learned(spec))
}

fn weight_method(name: &str, boost: &BoostConfig<f64>) -> Result<WeightMethod<f64>, CliError> {
    Ok(match name {
        "unweighted" => WeightMethod::Unweighted,
        "sandwich-boost" | "sandwich" => WeightMethod::SandwichBoost(boost.clone()),
        "ml" | "homoscedastic-ml" => WeightMethod::HomoscedasticMl,
        "gee" | "homoscedastic-gee" => WeightMethod::HomoscedasticGee,
        "hetero-gee" | "heteroscedastic-gee" => WeightMethod::HeteroscedasticGee(RegressorSpec::l2boost_default()),
        other => {
            return Err(CliError::Config(format!(
                "unknown weighting `{other}` (expected unweighted, sandwich-boost, ml, gee or hetero-gee)"
            )))
        }
    })
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required option --{flag}")))
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref(), &[FIT_KEYS, BOOST_KEYS, NUISANCE_KEYS])?;
    let data_path: std::path::PathBuf = required(pick(a.data, &cfg, "data")?, "data")?;
    let group = required(pick(a.group_col, &cfg, "group-col")?, "group-col")?;
    let response = required(pick(a.response, &cfg, "response")?, "response")?;
    let treatment = required(pick(a.treatment, &cfg, "treatment")?, "treatment")?;
    let covariates: Vec<String> = match a.covariates {
        Some(c) => c,
        None => cfg
            .get::<String>("covariates")?
            .map(|s| s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
            .unwrap_or_default(),
    };
    let subgroup = pick(a.subgroup_col, &cfg, "subgroup-col")?;
    let family = match pick(a.correlation, &cfg, "correlation")? {
        Some(f) => parse_with(&f, str::parse::<FamilyKind>)?,
        None => FamilyKind::Equicorrelated,
    };
    if family == FamilyKind::Nested && subgroup.is_none() {
        return Err(CliError::Config("nested correlation needs --subgroup-col".into()));
    }
    let multi = a.multi_split || cfg.flag("multi-split")?;
    let seed = pick(a.seed, &cfg, "seed")?.unwrap_or(0);
    let plm = PlmConfig {
        family,
        folds: pick(a.folds, &cfg, "folds")?.unwrap_or(5),
        splits: pick(a.splits, &cfg, "splits")?.unwrap_or(if multi { MULTI_SPLITS } else { 1 }),
        alpha: pick(a.alpha, &cfg, "alpha")?.unwrap_or(0.05),
        nuisance: nuisance_spec(&a.nuisance, &cfg)?,
        seed,
    };
    let boost = boost_config(&a.boost, &cfg, seed)?;
    let method = weight_method(&pick(a.weights, &cfg, "weights")?.unwrap_or_else(|| "sandwich-boost".into()), &boost)?;
    let output: Option<std::path::PathBuf> = pick(a.output, &cfg, "output")?;

    let x: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let mut schema = CsvSchema::new(&group, &response, &treatment, &x);
    schema.subgroup_col = subgroup;
    let data = load_csv::<f64>(&data_path, &schema)?;
    let report = sandboost::fit_plm(&data, &method, &plm)?;

    if let Some(path) = output {
        std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(sandboost::Error::from)? + "\n")?;
    }
    let level = 100.0 * (1.0 - report.alpha);
    let mut out = io::stdout().lock();
    writeln!(out, "groups      {}", report.n_groups)?;
    writeln!(out, "observations {}", report.n_obs)?;
    writeln!(out, "weights     {} ({})", report.weight_method, report.family)?;
    writeln!(out, "beta_hat    {:.6}", report.beta_hat)?;
    writeln!(out, "{level}% CI     [{:.6}, {:.6}]", report.ci.0, report.ci.1)?;
    writeln!(out, "V_hat       {:.6}", report.v_hat)?;
    if report.degenerate {
        writeln!(out, "warning: variance estimate is exactly zero")?;
    }
    Ok(())
}

fn default_methods(scenario: &Scenario) -> Vec<String> {
    let mut m: Vec<String> = ["unweighted", "sandwich-boost", "ml", "gee"].iter().map(|s| s.to_string()).collect();
    if scenario.oracle_weights().is_some() {
        m.push("oracle".into());
    }
    m
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref(), &[SIM_KEYS, BOOST_KEYS, NUISANCE_KEYS])?;
    let scenario = match a.scenario {
        ScenarioName::Complexity => Scenario::Complexity { lambda: pick(a.lambda, &cfg, "lambda")?.unwrap_or(0.0) },
        ScenarioName::Misspecification => Scenario::Misspecification { eta: pick(a.eta, &cfg, "eta")?.unwrap_or(1.0) },
        ScenarioName::CorrMisspec => Scenario::CorrMisspec { n: pick(a.n, &cfg, "n")?.unwrap_or(4) },
        ScenarioName::VarMisspec => Scenario::VarMisspec { n: pick(a.n, &cfg, "n")?.unwrap_or(4) },
    };
    scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let seed = pick(a.seed, &cfg, "seed")?.unwrap_or(0);
    let full = a.full || cfg.flag("full")?;
    let mut spec = if full { ScenarioSpec::full(scenario, seed) } else { ScenarioSpec::desk(scenario, seed) };
    if let Some(g) = pick(a.groups, &cfg, "groups")? {
        spec.groups = g;
    }
    if let Some(r) = pick(a.reps, &cfg, "reps")? {
        spec.reps = r;
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let boost = boost_config(&a.boost, &cfg, seed)?;
    let names = match a.methods {
        Some(m) => m,
        None => match cfg.get::<String>("methods")? {
            Some(s) => s.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect(),
            None => default_methods(&scenario),
        },
    };
    if names.is_empty() {
        return Err(CliError::Config("--methods must name at least one method".into()));
    }
    let methods = names
        .iter()
        .map(|n| SimMethod::parse(n, &scenario, &boost).map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let exp = ExperimentConfig {
        folds: pick(a.folds, &cfg, "folds")?.unwrap_or(2),
        alpha: pick(a.alpha, &cfg, "alpha")?.unwrap_or(0.05),
        nuisance: nuisance_spec(&a.nuisance, &cfg)?,
    };
    if exp.folds < 2 || exp.folds > spec.groups {
        return Err(CliError::Config(format!("--folds must lie in [2, {}]", spec.groups)));
    }
    if !(exp.alpha > 0.0 && exp.alpha < 1.0) {
        return Err(CliError::Config("--alpha must lie in (0, 1)".into()));
    }

    let started = Instant::now();
    let result = run_experiment(&spec, &methods, &exp)?;
    eprintln!(
        "{}: {} groups x {} reps in {:.1}s",
        spec.scenario,
        spec.groups,
        spec.reps,
        started.elapsed().as_secs_f64()
    );

    let output: Option<std::path::PathBuf> = pick(a.output, &cfg, "output")?;
    match output {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => result.save_json(&p)?,
        Some(p) => result.write_csv(BufWriter::new(File::create(&p)?))?,
        None => result.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

struct ScanTable {
    rows: Vec<[f64; 4]>,
}

impl ScanTable {
    fn build(lo: f64, hi: f64, resolution: usize, eval: impl Fn(f64) -> [f64; 3] + Sync) -> Result<Self, CliError> {
        if resolution < 3 {
            return Err(CliError::Config("--resolution must be at least 3".into()));
        }
        let h = (hi - lo) / (resolution - 1) as f64;
        let rows = (0..resolution)
            .into_par_iter()
            .map(|k| {
                let t = if k + 1 == resolution { hi } else { lo + h * k as f64 };
                let [a, b, c] = eval(t);
                [t, a, b, c]
            })
            .collect();
        Ok(Self { rows })
    }

    fn subtract_min(&mut self) {
        for c in 1..4 {
            let m = self.rows.iter().map(|r| r[c]).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
            for r in &mut self.rows {
                r[c] -= m;
            }
        }
    }

    fn write(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "parameter,ml,gee,sl")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r[0], r[1], r[2], r[3])?;
        }
        out.flush()
    }
}

/// Writes the scan to `output` (summary on stdout) or to stdout (summary on stderr).
fn emit(table: &ScanTable, output: Option<&Path>, summary: &str) -> Result<(), CliError> {
    match output {
        Some(p) => {
            table.write(BufWriter::new(File::create(p)?))?;
            print!("{summary}");
        }
        None => {
            table.write(BufWriter::new(io::stdout().lock()))?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

pub fn example21(a: Example21Args) -> Result<(), CliError> {
    let setting = example_setting(a.setting).map_err(|e| CliError::Config(e.to_string()))?;
    let (lo, hi) = setting.domain;
    let mut table = ScanTable::build(lo, hi, a.resolution, |r| {
        [population_ml(&setting, r), population_gee(&setting, r), population_sl(&setting, r)]
    })?;
    if a.min_subtract {
        table.subtract_min();
    }
    let s = summarise_setting(&setting)?;
    let minima: Vec<String> = s.gee_local_minima.iter().map(|m| format!("{m:.4}")).collect();
    let summary = format!(
        "setting {} (n = {})\n\
         method      rho      mse/mse_sl\n\
         unweighted  -        {:.3}\n\
         ml          {:<8.4} {:.3}\n\
         gee         {:<8.4} {:.3}\n\
         sl          {:<8.4} 1.000\n\
         gee local minima: {}\n",
        a.setting,
        setting.n(),
        s.ratio_unweighted,
        s.rho_ml,
        s.ratio_ml,
        s.rho_gee_descent,
        s.ratio_gee,
        s.rho_sl,
        minima.join(", ")
    );
    emit(&table, a.output.as_deref(), &summary)
}

pub fn example22(a: Example22Args) -> Result<(), CliError> {
    if !(a.lambda.is_finite() && a.mu.is_finite()) {
        return Err(CliError::Config("--lambda and --mu must be finite".into()));
    }
    let ex = VarianceExample { lambda: a.lambda, mu: a.mu };
    let (lo, hi) = ETA_RANGE;
    let mut table = ScanTable::build(lo, hi, a.resolution, |eta| {
        let l = ex.losses(eta);
        [l.ml, l.gee, l.sl]
    })?;
    if a.min_subtract {
        table.subtract_min();
    }
    let s = ex.summary();
    let summary = format!(
        "lambda = {}, mu = {}\n\
         method      eta      mse/mse_unweighted\n\
         unweighted  -        1.000\n\
         ml          {:<8.4} {:.3}\n\
         gee         {:<8.4} {:.3}\n\
         sl          {:<8.4} {:.3}\n",
        a.lambda, a.mu, s.eta_ml, s.ratio_ml, s.eta_gee, s.ratio_gee, s.eta_sl, s.ratio_sl
    );
    emit(&table, a.output.as_deref(), &summary)
}
