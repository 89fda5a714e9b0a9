mod common;

use common::*;
use rand::Rng;
use sandboost::linalg::Matrix;
use sandboost::population::{
    example_omega_d, example_setting, population_gee, population_ml, population_sl, scan_objective,
    sl_with_weights, summarise_setting, ArmaSpec, PopulationSetting, VarianceExample,
};
use sandboost::{CorrelationFamily, FamilyKind, GroupLayout};

/// Autocorrelations from a long truncation of `γ(k) = Σ ψ_j ψ_{j+k}`.
fn psi_oracle(phi: &[f64], theta: &[f64], n: usize) -> Vec<f64> {
    let m = 20_000;
    let mut psi = vec![0.0; m];
    psi[0] = 1.0;
    for k in 1..m {
        let mut v = theta.get(k - 1).copied().unwrap_or(0.0);
        for (i, f) in phi.iter().enumerate() {
            if k > i {
                v += f * psi[k - 1 - i];
            }
        }
        psi[k] = v;
    }
    let gamma: Vec<f64> = (0..n).map(|h| (0..m - h).map(|j| psi[j] * psi[j + h]).sum()).collect();
    gamma.iter().map(|g| g / gamma[0]).collect()
}

#[test]
fn arma_autocorrelation_matches_ma_expansion() {
    for (phi, theta) in [(vec![0.3, 0.6], vec![-0.5]), (vec![0.1, 0.85], vec![-0.4]), (vec![0.5], vec![0.3]), (vec![], vec![0.7])] {
        let got = ArmaSpec::new(&phi, &theta, 25).autocorrelation().unwrap();
        let want = psi_oracle(&phi, &theta, 25);
        assert!(max_rel_diff(&got, &want) < 1e-9, "{phi:?} {theta:?}");
    }
}

#[test]
fn arma_one_one_closed_form() {
    let (f, t) = (0.6, -0.2);
    let r = ArmaSpec::new(&[f], &[t], 6).autocorrelation().unwrap();
    let r1 = (1.0 + f * t) * (f + t) / (1.0 + 2.0 * f * t + t * t);
    for k in 1..6 {
        assert!((r[k] - r1 * f.powi(k as i32 - 1)).abs() < 1e-12);
    }
}

#[test]
fn arma_autocorrelation_matches_simulation() {
    let spec = ArmaSpec::new(&[0.3, 0.6], &[-0.5], 4);
    let want = spec.autocorrelation().unwrap();
    let mut r = rng(77);
    let len = 400_000;
    let (mut x, mut e_prev) = (vec![0.0f64; len], 0.0);
    for t in 0..len {
        let e = normal(&mut r);
        let ar = if t >= 2 { 0.3 * x[t - 1] + 0.6 * x[t - 2] } else { 0.0 };
        x[t] = ar + e - 0.5 * e_prev;
        e_prev = e;
    }
    let x = &x[1000..];
    let v0: f64 = x.iter().map(|v| v * v).sum();
    for h in 1..4 {
        let vh: f64 = x.iter().zip(&x[h..]).map(|(a, b)| a * b).sum();
        assert!((vh / v0 - want[h]).abs() < 0.02, "lag {h}");
    }
}

#[test]
fn non_stationary_is_rejected() {
    assert!(ArmaSpec::new(&[0.5, 0.6], &[], 5).autocorrelation().is_err());
    assert!(!ArmaSpec::new(&[1.0], &[], 5).is_stationary());
}

#[test]
fn example_covariances_are_positive_definite() {
    for which in ['a', 'b'] {
        let s = example_setting(which).unwrap();
        assert!(s.sigma.cholesky().is_ok());
        assert!(s.omega_d.cholesky().is_ok());
    }
    assert!(example_setting('c').is_err());
}

#[test]
fn well_specified_minimisers_coincide() {
    let n = 8;
    let sigma = CorrelationFamily::ar1(0.5).dense_correlation(&GroupLayout::flat(n));
    let setting = PopulationSetting { sigma, omega_d: example_omega_d(n), kind: FamilyKind::Ar1, domain: (-0.999, 0.999) };
    let s = summarise_setting(&setting).unwrap();
    assert!((s.rho_ml - 0.5).abs() < 1e-5, "{}", s.rho_ml);
    assert!((s.rho_sl - 0.5).abs() < 1e-5, "{}", s.rho_sl);
    assert!((s.rho_gee_descent - 0.5).abs() < 1e-4, "{}", s.rho_gee_descent);
    assert!((s.ratio_ml - 1.0).abs() < 1e-8);
    assert!(population_gee(&setting, 0.5) < 1e-20);
    assert!(population_ml(&setting, 0.5) < population_ml(&setting, 0.4));
}

#[test]
fn setting_b_minimisers() {
    let s = summarise_setting(&example_setting('b').unwrap()).unwrap();
    assert!(s.rho_ml.abs() < 0.02, "{}", s.rho_ml);
    assert!((s.rho_sl - 0.30).abs() < 0.02, "{}", s.rho_sl);
    assert!((s.ratio_unweighted - 1.4).abs() < 0.1);
    assert!((s.ratio_ml - 1.4).abs() < 0.1);
    assert!(s.ratio_gee >= 1.0);
}

#[test]
fn sandwich_loss_ignores_weight_scale() {
    let setting = example_setting('b').unwrap();
    let mut r = rng(3);
    for _ in 0..10 {
        let rho: f64 = r.random_range(-0.9..0.9);
        let w = CorrelationFamily::ar1(rho).inverse_matrix(&GroupLayout::flat(setting.n()));
        let c: f64 = r.random_range(0.01..100.0);
        let scaled = Matrix::from_fn(w.rows(), w.cols(), |j, k| c * w[(j, k)]);
        let (a, b) = (sl_with_weights(&setting, &w), sl_with_weights(&setting, &scaled));
        assert!((a - b).abs() <= 1e-12 * a);
        assert!((a - population_sl(&setting, rho)).abs() <= 1e-12 * a);
    }
}

#[test]
fn setting_a_sl_curve_dips_below_independence() {
    let setting = example_setting('a').unwrap();
    let base = population_sl(&setting, 0.0);
    for k in 0..=14 {
        let rho = 0.1 + 0.05 * k as f64;
        assert!(population_sl(&setting, rho) < base, "{rho}");
    }
}

#[test]
fn scan_reports_every_point_and_minima() {
    let scan = scan_objective(|x| (x - 0.3).powi(2), (-1.0, 1.0), 500).unwrap();
    assert_eq!(scan.grid.len(), 500);
    assert_eq!(scan.local_minima.len(), 1);
    assert!((scan.local_minima[0].0 - 0.3).abs() < 1e-6);
    assert!(scan_objective(|x| x, (0.0, 1.0), 2).is_err());
}

#[test]
fn variance_example_orders_the_methods() {
    for (lambda, mu) in [(2.0, 0.1), (10.0, 0.5), (30.0, 0.9)] {
        let ex = VarianceExample { lambda, mu };
        let s = ex.summary();
        assert!(s.ratio_sl <= s.ratio_ml + 1e-9 && s.ratio_sl <= s.ratio_gee + 1e-9);
        assert!(s.ratio_sl <= 1.0 + 1e-9);
    }
}

#[test]
fn constant_variance_makes_weighting_pointless() {
    let ex = VarianceExample { lambda: 0.0, mu: 0.5 };
    assert!((ex.unweighted_mse() - 2.0).abs() < 1e-9);
    assert!((ex.summary().ratio_sl - 1.0).abs() < 1e-9);
}

#[test]
fn variance_losses_at_a_known_point() {
    // η = 0: weights are constant and L_SL = E σ₀² / 81 · 81
    let ex = VarianceExample { lambda: 4.0, mu: 0.3 };
    let l = ex.losses(0.0);
    assert!((l.sl - ex.unweighted_mse()).abs() < 1e-9);
    let l1 = ex.losses(1.0);
    assert!((l1.sl - ex.unweighted_mse()).abs() < 1e-9);
    assert!((l1.ml - ex.unweighted_mse()).abs() < 1e-9);
}
