#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sandboost::{CorrelationFamily, FamilyKind, GroupLayout, ResidualBundle};

pub const KINDS: [FamilyKind; 3] = [FamilyKind::Equicorrelated, FamilyKind::Ar1, FamilyKind::Nested];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random split of `n` into consecutive subgroup sizes.
pub fn random_layout(rng: &mut ChaCha8Rng, n: usize) -> GroupLayout {
    let mut sizes = Vec::new();
    let mut left = n;
    while left > 0 {
        let k = rng.random_range(1..=left.min(4));
        sizes.push(k);
        left -= k;
    }
    GroupLayout::new(n, sizes)
}

/// A family with θ drawn from the interior of its box.
pub fn random_family(rng: &mut ChaCha8Rng, kind: FamilyKind) -> CorrelationFamily<f64> {
    match kind {
        FamilyKind::Equicorrelated => CorrelationFamily::equicorrelated(rng.random_range(0.05..3.0)),
        FamilyKind::Ar1 => CorrelationFamily::ar1(rng.random_range(0.05..0.9)),
        FamilyKind::Nested => CorrelationFamily::nested(rng.random_range(0.05..2.0), rng.random_range(0.05..2.0)),
    }
}

/// Bundle with `groups` groups of size `1..=max_n`, one covariate.
pub fn random_bundle(rng: &mut ChaCha8Rng, groups: usize, max_n: usize) -> ResidualBundle<f64> {
    let mut layouts = Vec::new();
    let (mut xi, mut eps, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..groups {
        let n = rng.random_range(1..=max_n);
        layouts.push(random_layout(rng, n));
        for _ in 0..n {
            xi.push(normal(rng));
            eps.push(normal(rng));
            x.push(rng.random_range(-1.0..1.0));
        }
    }
    ResidualBundle::new(xi, eps, x, 1, layouts).unwrap()
}

pub fn random_s(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.5..2.0)).collect()
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
