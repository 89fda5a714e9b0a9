mod common;

use approx::assert_relative_eq;
use common::*;
use proptest::prelude::*;
use sandboost::correlation::{nested_reparam, nested_reparam_inverse};
use sandboost::linalg::Matrix;
use sandboost::{CorrelationFamily, FamilyKind, GroupLayout};

/// Largest deviation of `a` from the best multiple of `b`, relative to `max|a|`.
fn proportional_deviation(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let num: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
    let den: f64 = b.as_slice().iter().map(|y| y * y).sum();
    let c = num / den;
    let dev = a.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - c * y).abs()));
    dev / a.max_abs()
}

fn family_strategy() -> impl Strategy<Value = (usize, u64)> {
    (0usize..3, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_is_proportional_to_dense_inverse((kind, seed) in family_strategy(), n in 1usize..30) {
        let mut r = rng(seed);
        let fam = random_family(&mut r, KINDS[kind]);
        let layout = random_layout(&mut r, n);
        let dense = fam.dense_correlation(&layout).cholesky().unwrap().inverse();
        let closed = fam.inverse_matrix(&layout);
        prop_assert!(proportional_deviation(&dense, &closed) < 1e-9);
    }

    #[test]
    fn inverse_is_symmetric((kind, seed) in family_strategy(), n in 1usize..20) {
        let mut r = rng(seed);
        let fam = random_family(&mut r, KINDS[kind]);
        let layout = random_layout(&mut r, n);
        for j in 0..n {
            for k in 0..n {
                prop_assert_eq!(fam.inverse_entry(&layout, j, k).unwrap(), fam.inverse_entry(&layout, k, j).unwrap());
            }
        }
    }

    #[test]
    fn derivative_matches_central_difference((kind, seed) in family_strategy(), n in 1usize..12) {
        let mut r = rng(seed);
        let fam = random_family(&mut r, KINDS[kind]);
        let layout = random_layout(&mut r, n);
        let h = 1e-6;
        for c in 0..fam.dim() {
            let shift = |d: f64| {
                let mut t = fam.theta().to_vec();
                t[c] += d;
                fam.with_theta(&t)
            };
            let (up, down) = (shift(h), shift(-h));
            for j in 0..n {
                for k in 0..n {
                    let fd = (up.inverse_entry(&layout, j, k).unwrap() - down.inverse_entry(&layout, j, k).unwrap()) / (2.0 * h);
                    let an = fam.dtheta_inverse_entry(&layout, j, k).unwrap()[c];
                    prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn projection_lands_in_box(raw in -5.0f64..5.0, raw2 in -5.0f64..5.0) {
        for fam in [CorrelationFamily::<f64>::equicorrelated(0.0), CorrelationFamily::ar1(0.0), CorrelationFamily::nested(0.0, 0.0)] {
            let p = fam.project_theta(&[raw, raw2][..fam.dim()]);
            for &t in p.theta() {
                prop_assert!(t >= 0.0);
            }
            if fam.kind() == FamilyKind::Ar1 {
                prop_assert!(p.theta()[0] <= 0.99);
            }
        }
    }

    #[test]
    fn nested_reparam_round_trips(r2 in 0.0f64..0.9, gap in 0.0f64..0.09) {
        let r1 = r2 + gap;
        let (t1, t2) = nested_reparam(r1, r2).unwrap();
        let (b1, b2) = nested_reparam_inverse(t1, t2);
        prop_assert!((b1 - r1).abs() < 1e-12 && (b2 - r2).abs() < 1e-12);
    }
}

#[test]
fn equicorrelated_entries() {
    let fam = CorrelationFamily::equicorrelated(1.0);
    let l = GroupLayout::flat(2);
    assert_relative_eq!(fam.inverse_entry(&l, 0, 0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(fam.inverse_entry(&l, 0, 1).unwrap(), -1.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(fam.dtheta_inverse_entry(&l, 0, 1).unwrap()[0], -1.0 / 9.0, epsilon = 1e-15);
    let c = fam.dense_correlation(&l);
    assert_eq!(c.as_slice(), &[1.0, 0.5, 0.5, 1.0]);
}

#[test]
fn ar1_entries() {
    let l = GroupLayout::flat(3);
    let id = CorrelationFamily::ar1(0.0).inverse_matrix(&l);
    assert_eq!(id.as_slice(), Matrix::<f64>::identity(3).as_slice());
    let c = CorrelationFamily::ar1(0.5).dense_correlation(&l);
    assert_eq!(c.as_slice(), &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
    assert_relative_eq!(CorrelationFamily::ar1(0.3).dtheta_inverse_entry(&l, 1, 1).unwrap()[0], 0.6, epsilon = 1e-15);
    let one = GroupLayout::flat(1);
    assert_relative_eq!(CorrelationFamily::ar1(0.3).inverse_entry(&one, 0, 0).unwrap(), 0.91, epsilon = 1e-15);
}

#[test]
fn nested_two_by_two_against_dense() {
    let l = GroupLayout::new(4, vec![2, 2]);
    let fam = CorrelationFamily::nested(0.5, 0.2);
    let dense = fam.dense_correlation(&l).cholesky().unwrap().inverse();
    assert!(proportional_deviation(&dense, &fam.inverse_matrix(&l)) < 1e-12);
    let zero = CorrelationFamily::nested(0.0, 0.0).dense_correlation(&l);
    assert_eq!(zero.as_slice(), Matrix::<f64>::identity(4).as_slice());
}

#[test]
fn projection_examples() {
    assert_eq!(CorrelationFamily::equicorrelated(0.0).project(&[-0.4]), vec![0.0]);
    assert_eq!(CorrelationFamily::ar1(0.0).project(&[1.2]), vec![0.99]);
    assert_eq!(CorrelationFamily::nested(0.0, 0.0).project(&[0.5, -1.0]), vec![0.5, 0.0]);
}

#[test]
fn out_of_range_index() {
    let l = GroupLayout::flat(3);
    assert!(CorrelationFamily::equicorrelated(0.2).inverse_entry(&l, 3, 0).is_err());
}

#[test]
fn single_precision_agrees() {
    let l = GroupLayout::new(6, vec![2, 4]);
    let f64_fam = CorrelationFamily::nested(0.4, 0.3);
    let f32_fam = CorrelationFamily::<f32>::nested(0.4, 0.3);
    let a = f64_fam.inverse_matrix(&l);
    let b = f32_fam.inverse_matrix(&l);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - *y as f64).abs() < 1e-5);
    }
}
