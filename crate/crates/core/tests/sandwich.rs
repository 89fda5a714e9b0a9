mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sandboost::boosting::{boost, cv_curve, Objective};
use sandboost::linalg::Matrix;
use sandboost::sandwich::{
    generalized_loss_at, generalized_scores_at, loss_at, sandwich_loss, scores_at, BasisSet, GramMatrix, ScorePath,
};
use sandboost::{BoostConfig, CorrelationFamily, FamilyKind, SFunction, WeightModel};

fn fd_scores(res: &sandboost::ResidualBundle<f64>, s: &[f64], fam: &CorrelationFamily<f64>) -> (Vec<f64>, Vec<f64>) {
    let h = 1e-6;
    let f = |s: &[f64], fam: &CorrelationFamily<f64>| loss_at(res, s, fam, ScorePath::Fast).unwrap();
    let ds = (0..s.len())
        .map(|o| {
            let (mut up, mut dn) = (s.to_vec(), s.to_vec());
            up[o] += h;
            dn[o] -= h;
            (f(&up, fam) - f(&dn, fam)) / (2.0 * h)
        })
        .collect();
    let dt = (0..fam.dim())
        .map(|c| {
            let (mut up, mut dn) = (fam.theta().to_vec(), fam.theta().to_vec());
            up[c] += h;
            dn[c] -= h;
            (f(s, &fam.with_theta(&up)) - f(s, &fam.with_theta(&dn))) / (2.0 * h)
        })
        .collect();
    (ds, dt)
}

fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}

#[test]
fn scores_match_finite_differences() {
    let mut r = rng(101);
    for case in 0..30 {
        let kind = KINDS[case % 3];
        let groups = r.random_range(1..=6);
        let res = random_bundle(&mut r, groups, 8);
        let fam = random_family(&mut r, kind);
        let s = random_s(&mut r, res.n_obs());
        let sc = scores_at(&res, &s, &fam, ScorePath::Fast).unwrap();
        let (ds, dt) = fd_scores(&res, &s, &fam);
        let scale = sc.s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in sc.s.iter().zip(&ds) {
            assert!(close(*a, *b, 1e-5, scale * 1e-3), "{kind}: s-score {a} vs {b}");
        }
        for (a, b) in sc.theta.iter().zip(&dt) {
            assert!(close(*a, *b, 1e-5, 1e-8), "{kind}: θ-score {a} vs {b}");
        }
    }
}

#[test]
fn score_paths_agree() {
    let mut r = rng(7);
    for case in 0..30 {
        let kind = KINDS[case % 3];
        let res = random_bundle(&mut r, 5, 12);
        let fam = random_family(&mut r, kind);
        let s = random_s(&mut r, res.n_obs());
        let fast = scores_at(&res, &s, &fam, ScorePath::Fast).unwrap();
        for path in [ScorePath::Entrywise, ScorePath::Dense] {
            let other = scores_at(&res, &s, &fam, path).unwrap();
            assert!(max_rel_diff(&fast.s, &other.s) < 1e-10, "{kind} {path:?}");
            assert!(max_rel_diff(&fast.theta, &other.theta) < 1e-10, "{kind} {path:?}");
            assert!(close(fast.loss, other.loss, 1e-10, 0.0));
        }
    }
}

#[test]
fn generalized_with_constant_basis_is_scalar_loss() {
    let mut r = rng(19);
    let basis = BasisSet::<f64>::constant();
    let gram = GramMatrix::new(Matrix::identity(1)).unwrap();
    for case in 0..20 {
        let kind = KINDS[case % 3];
        let res = random_bundle(&mut r, 6, 7);
        let fam = random_family(&mut r, kind);
        let s = random_s(&mut r, res.n_obs());
        let scalar = scores_at(&res, &s, &fam, ScorePath::Fast).unwrap();
        let gen = generalized_scores_at(&res, &s, &fam, &basis, &gram, ScorePath::Fast).unwrap();
        assert!(close(scalar.loss, generalized_loss_at(&res, &s, &fam, &basis, &gram).unwrap(), 1e-9, 0.0));
        assert!(close(scalar.loss, gen.loss, 1e-9, 0.0));
        assert!(max_rel_diff(&scalar.s, &gen.s) < 1e-9);
        assert!(max_rel_diff(&scalar.theta, &gen.theta) < 1e-9);
    }
}

#[test]
fn generalized_fast_path_matches_generic() {
    let mut r = rng(23);
    let basis = BasisSet::<f64>::polynomial(0, 2);
    for _ in 0..20 {
        let res = random_bundle(&mut r, 12, 6);
        let gram = GramMatrix::empirical(&basis, res.covariates(), 1, res.n_obs());
        let fam = random_family(&mut r, FamilyKind::Equicorrelated);
        let s = random_s(&mut r, res.n_obs());
        let fast = generalized_scores_at(&res, &s, &fam, &basis, &gram, ScorePath::Fast).unwrap();
        let slow = generalized_scores_at(&res, &s, &fam, &basis, &gram, ScorePath::Entrywise).unwrap();
        assert!(close(fast.loss, slow.loss, 1e-9, 0.0));
        assert!(max_rel_diff(&fast.s, &slow.s) < 1e-9);
        assert!(max_rel_diff(&fast.theta, &slow.theta) < 1e-9);
    }
}

#[test]
fn generalized_scores_match_finite_differences() {
    let mut r = rng(29);
    let basis = BasisSet::<f64>::polynomial(0, 1);
    for case in 0..9 {
        let kind = KINDS[case % 3];
        let res = random_bundle(&mut r, 10, 5);
        let gram = GramMatrix::empirical(&basis, res.covariates(), 1, res.n_obs());
        let fam = random_family(&mut r, kind);
        let s = random_s(&mut r, res.n_obs());
        let sc = generalized_scores_at(&res, &s, &fam, &basis, &gram, ScorePath::Fast).unwrap();
        let h = 1e-6;
        let scale = sc.s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for o in 0..s.len() {
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[o] += h;
            dn[o] -= h;
            let fd = (generalized_loss_at(&res, &up, &fam, &basis, &gram).unwrap()
                - generalized_loss_at(&res, &dn, &fam, &basis, &gram).unwrap())
                / (2.0 * h);
            assert!(close(sc.s[o], fd, 1e-5, scale * 1e-3), "{kind}: {} vs {fd}", sc.s[o]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_invariant_to_weight_scale(seed in any::<u64>(), c in 0.01f64..100.0, kind in 0usize..3) {
        let mut r = rng(seed);
        let res = random_bundle(&mut r, 4, 6);
        let fam = random_family(&mut r, KINDS[kind]);
        let s = random_s(&mut r, res.n_obs());
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let a = loss_at(&res, &s, &fam, ScorePath::Fast).unwrap();
        let b = loss_at(&res, &scaled, &fam, ScorePath::Fast).unwrap();
        prop_assert!(close(a, b, 1e-10, 0.0));
        let w = WeightModel::constant(fam).with_scale(c);
        let w1 = WeightModel::constant(fam);
        prop_assert!(close(sandwich_loss(&res, &w).unwrap(), sandwich_loss(&res, &w1).unwrap(), 1e-10, 0.0));
    }

    #[test]
    fn loss_is_non_negative(seed in any::<u64>(), kind in 0usize..3) {
        let mut r = rng(seed);
        let res = random_bundle(&mut r, 3, 5);
        let fam = random_family(&mut r, KINDS[kind]);
        let s = random_s(&mut r, res.n_obs());
        prop_assert!(loss_at(&res, &s, &fam, ScorePath::Fast).unwrap() >= 0.0);
    }
}

#[test]
fn single_precision_loss_tracks_double() {
    let mut r = rng(5);
    let res = random_bundle(&mut r, 20, 6);
    let xi: Vec<f32> = res.xi().iter().map(|&v| v as f32).collect();
    let eps: Vec<f32> = res.eps().iter().map(|&v| v as f32).collect();
    let x: Vec<f32> = res.covariates().iter().map(|&v| v as f32).collect();
    let res32 = sandboost::ResidualBundle::new(xi, eps, x, 1, res.layouts().to_vec()).unwrap();
    let a = sandwich_loss(&res, &WeightModel::constant(CorrelationFamily::equicorrelated(0.7))).unwrap();
    let b = sandwich_loss(&res32, &WeightModel::constant(CorrelationFamily::<f32>::equicorrelated(0.7))).unwrap();
    assert!(close(a, b as f64, 1e-4, 0.0));
}

/// Equicorrelated errors with heteroscedastic scale `1 + 2·𝟙(x > 0)`.
fn hetero_bundle(seed: u64, groups: usize) -> sandboost::ResidualBundle<f64> {
    let mut r = rng(seed);
    let n = 4;
    let (mut xi, mut eps, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..groups {
        let shared = normal(&mut r);
        for _ in 0..n {
            let xv: f64 = r.random_range(-1.0..1.0);
            let sd = if xv > 0.0 { 3.0 } else { 1.0 };
            x.push(xv);
            xi.push(normal(&mut r));
            eps.push(sd * (0.6f64.sqrt() * shared + 0.4f64.sqrt() * normal(&mut r)));
        }
    }
    sandboost::ResidualBundle::new(xi, eps, x, 1, vec![sandboost::GroupLayout::flat(n); groups]).unwrap()
}

#[test]
fn boosting_lowers_the_loss_and_learns_the_shape() {
    let res = hetero_bundle(3, 400);
    let cfg = BoostConfig { m_stop: 60, cv_folds: 0, ..BoostConfig::default() };
    let (model, trace) = boost(&res, &CorrelationFamily::equicorrelated(0.0), &cfg).unwrap();
    assert!(trace.losses.last().unwrap() < &trace.losses[0]);
    // weights should favour the low-variance half
    assert!(model.s.eval(&[-0.5]) > model.s.eval(&[0.5]));
    assert!(model.family.theta()[0] > 0.0);
}

#[test]
fn boosting_is_deterministic() {
    let res = hetero_bundle(4, 100);
    let cfg = BoostConfig { m_stop: 20, ..BoostConfig::default() };
    let fam = CorrelationFamily::equicorrelated(0.0);
    let a = boost(&res, &fam, &cfg).unwrap().1.losses;
    let b = boost(&res, &fam, &cfg).unwrap().1.losses;
    assert_eq!(a, b);
}

#[test]
fn cv_curve_covers_every_iteration() {
    let res = hetero_bundle(5, 120);
    let cfg = BoostConfig { m_stop: 15, cv_folds: 3, ..BoostConfig::default() };
    let curve = cv_curve(&res, &CorrelationFamily::equicorrelated(0.0), &cfg, &Objective::Sandwich).unwrap();
    assert_eq!(curve.len(), cfg.m_stop + 1);
    assert!(curve.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn constant_s_function_has_no_effect_on_loss() {
    let res = hetero_bundle(6, 30);
    let fam = CorrelationFamily::ar1(0.4);
    let a = sandwich_loss(&res, &WeightModel::constant(fam)).unwrap();
    let b = sandwich_loss(&res, &WeightModel::new(SFunction::Constant(5.0), fam)).unwrap();
    assert!(close(a, b, 1e-12, 0.0));
}

