//! Base learners used to regress scores (and nuisance targets) on covariates.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerSpec {
    /// Greedy squared-error CART grown to `max_depth`, every leaf holding at
    /// least `min_leaf` points.
    RegressionTree { max_depth: usize, min_leaf: usize },
    /// Mean of the `k` nearest training targets (Euclidean, ties by index).
    Knn { k: usize },
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::RegressionTree { max_depth: 1, min_leaf: 100 }
    }
}

impl FromStr for LearnerSpec {
    type Err = Error;
    /// Accepts `tree` or `knn`; hyperparameters take their defaults.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tree" | "regression-tree" | "regression_tree" => Ok(LearnerSpec::default()),
            "knn" => Ok(LearnerSpec::Knn { k: 10 }),
            other => Err(Error::InvalidConfig(format!("unknown base learner `{other}` (expected tree or knn)"))),
        }
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerSpec::RegressionTree { max_depth, min_leaf } => write!(f, "tree(depth={max_depth}, min_leaf={min_leaf})"),
            LearnerSpec::Knn { k } => write!(f, "knn(k={k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node<T> {
    Leaf(T),
    Split { feature: usize, threshold: T, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> RegressionTree<T> {
    pub fn predict(&self, x: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn fit(x: &[T], p: usize, y: &[T], max_depth: usize, min_leaf: usize) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        let idx: Vec<usize> = (0..y.len()).collect();
        tree.grow(x, p, y, idx, max_depth, min_leaf.max(1));
        tree
    }

    fn grow(&mut self, x: &[T], p: usize, y: &[T], idx: Vec<usize>, depth_left: usize, min_leaf: usize) -> usize {
        let me = self.nodes.len();
        let total: T = idx.iter().map(|&i| y[i]).sum();
        let mean = total / T::from_usize_lossy(idx.len());
        self.nodes.push(Node::Leaf(mean));
        if depth_left == 0 || idx.len() < 2 * min_leaf {
            return me;
        }
        let Some((feature, threshold)) = best_split(x, p, y, &idx, min_leaf) else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i * p + feature] <= threshold);
        let left = self.grow(x, p, y, l, depth_left - 1, min_leaf);
        let right = self.grow(x, p, y, r, depth_left - 1, min_leaf);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

/// Split maximising the reduction in squared error, first best on ties.
fn best_split<T: Real>(x: &[T], p: usize, y: &[T], idx: &[usize], min_leaf: usize) -> Option<(usize, T)> {
    let m = idx.len();
    let total: T = idx.iter().map(|&i| y[i]).sum();
    let base = total * total / T::from_usize_lossy(m);
    let mut best: Option<(T, usize, T)> = None;
    let mut order = idx.to_vec();
    for f in 0..p {
        order.sort_by(|&a, &b| x[a * p + f].partial_cmp(&x[b * p + f]).expect("finite covariates").then(a.cmp(&b)));
        let mut left_sum = T::zero();
        for k in 0..m - 1 {
            left_sum += y[order[k]];
            let nl = k + 1;
            let (xa, xb) = (x[order[k] * p + f], x[order[k + 1] * p + f]);
            if nl < min_leaf || m - nl < min_leaf || xa == xb {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / T::from_usize_lossy(nl) + right_sum * right_sum / T::from_usize_lossy(m - nl) - base;
            if best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                best = Some((gain, f, xa + (xb - xa) * T::lit(0.5)));
            }
        }
    }
    let tol = T::lit(1e-12) * (base.abs() + T::one());
    best.filter(|(g, _, _)| *g > tol).map(|(_, f, t)| (f, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnSmoother<T> {
    x: Vec<T>,
    y: Vec<T>,
    p: usize,
    k: usize,
}

impl<T: Real> KnnSmoother<T> {
    pub fn predict(&self, q: &[T]) -> T {
        let m = self.y.len();
        let k = self.k.min(m);
        let mut d: Vec<(T, usize)> = (0..m)
            .map(|i| {
                let row = &self.x[i * self.p..(i + 1) * self.p];
                (row.iter().zip(q).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>(), i)
            })
            .collect();
        let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).expect("finite distance").then(a.1.cmp(&b.1));
        if k < m {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        let s: T = d[..k].iter().map(|&(_, i)| self.y[i]).sum();
        s / T::from_usize_lossy(k)
    }
}

/// A fitted base learner.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner<T> {
    Tree(RegressionTree<T>),
    Knn(KnnSmoother<T>),
}

impl<T: Real> Learner<T> {
    pub fn predict(&self, x: &[T]) -> T {
        match self {
            Learner::Tree(t) => t.predict(x),
            Learner::Knn(k) => k.predict(x),
        }
    }

    pub fn predict_rows(&self, x: &[T], p: usize, n_rows: usize) -> Vec<T> {
        (0..n_rows).map(|r| self.predict(&x[r * p..(r + 1) * p])).collect()
    }
}

/// Fits `spec` to rows of `x` (row-major, `p` columns) against `y`.
pub fn fit_base_learner<T: Real>(x: &[T], p: usize, y: &[T], spec: &LearnerSpec) -> Result<Learner<T>> {
    if y.is_empty() {
        return Err(Error::EmptyInput("base learner needs at least one point".into()));
    }
    if x.len() != y.len() * p {
        return Err(Error::InvalidConfig(format!("{} covariate values for {} points of dimension {p}", x.len(), y.len())));
    }
    Ok(match *spec {
        LearnerSpec::RegressionTree { max_depth, min_leaf } => Learner::Tree(RegressionTree::fit(x, p, y, max_depth, min_leaf)),
        LearnerSpec::Knn { k } => {
            if k == 0 {
                return Err(Error::InvalidConfig("knn needs k ≥ 1".into()));
            }
            Learner::Knn(KnnSmoother { x: x.to_vec(), y: y.to_vec(), p, k })
        }
    })
}
