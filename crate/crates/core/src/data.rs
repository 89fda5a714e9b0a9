//! Grouped observations, CSV ingestion, fold partitions and residual bundles.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One group (cluster) of observations: response, treatment and covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Group<T> {
    id: String,
    y: Vec<T>,
    d: Vec<T>,
    /// Row-major `n × p` covariates.
    x: Vec<T>,
    p: usize,
    subgroup_sizes: Option<Vec<usize>>,
}

impl<T: Real> Group<T> {
    pub fn new(
        id: impl Into<String>,
        y: Vec<T>,
        d: Vec<T>,
        x: Vec<T>,
        p: usize,
        subgroup_sizes: Option<Vec<usize>>,
    ) -> Result<Self> {
        let id = id.into();
        let bad = |reason: String| Error::InvalidGroup { id: id.clone(), reason };
        let n = y.len();
        if n == 0 {
            return Err(bad("group has no rows".into()));
        }
        if d.len() != n || x.len() != n * p {
            return Err(bad(format!(
                "array lengths disagree (y {}, d {}, x {} for {} covariates)",
                n,
                d.len(),
                x.len(),
                p
            )));
        }
        if y.iter().chain(&d).chain(&x).any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        if let Some(sizes) = &subgroup_sizes {
            if sizes.iter().any(|&m| m == 0) || sizes.iter().sum::<usize>() != n {
                return Err(bad(format!("subgroup sizes {sizes:?} do not partition {n} rows")));
            }
        }
        Ok(Self { id, y, d, x, p, subgroup_sizes })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn d(&self) -> &[T] {
        &self.d
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    pub fn x_row(&self, j: usize) -> &[T] {
        &self.x[j * self.p..(j + 1) * self.p]
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subgroup_sizes(&self) -> Option<&[usize]> {
        self.subgroup_sizes.as_deref()
    }

    pub fn layout(&self) -> GroupLayout {
        GroupLayout::new(self.n(), subgroup_layout(self))
    }
}

/// Subgroup sizes used by the nested correlation; one block when unset.
pub fn subgroup_layout<T: Real>(group: &Group<T>) -> Vec<usize> {
    match &group.subgroup_sizes {
        Some(s) => s.clone(),
        None => vec![group.n()],
    }
}

/// Size and subgroup structure of a group, all the correlation kernels need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub n: usize,
    pub subgroups: Vec<usize>,
}

impl GroupLayout {
    pub fn new(n: usize, subgroups: Vec<usize>) -> Self {
        debug_assert_eq!(subgroups.iter().sum::<usize>(), n);
        Self { n, subgroups }
    }

    pub fn flat(n: usize) -> Self {
        Self { n, subgroups: vec![n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset<T> {
    groups: Vec<Group<T>>,
    d_covariates: usize,
}

impl<T: Real> GroupedDataset<T> {
    pub fn new(groups: Vec<Group<T>>) -> Result<Self> {
        let first = groups.first().ok_or(Error::EmptyFile)?;
        let p = first.p();
        let mut seen = HashMap::new();
        for g in &groups {
            if g.p() != p {
                return Err(Error::InvalidGroup {
                    id: g.id.clone(),
                    reason: format!("has {} covariates, expected {p}", g.p()),
                });
            }
            if seen.insert(g.id.clone(), ()).is_some() {
                return Err(Error::InvalidGroup { id: g.id.clone(), reason: "duplicate group id".into() });
            }
        }
        Ok(Self { groups, d_covariates: p })
    }

    pub fn groups(&self) -> &[Group<T>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(Group::n).sum()
    }

    pub fn d_covariates(&self) -> usize {
        self.d_covariates
    }

    /// Group indices sorted by identifier, numerically where both ids are integers.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.groups.len()).collect();
        idx.sort_by(|&a, &b| compare_ids(&self.groups[a].id, &self.groups[b].id));
        idx
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { groups: indices.iter().map(|&i| self.groups[i].clone()).collect(), d_covariates: self.d_covariates }
    }

    /// Copy converted to another scalar type.
    pub fn cast<U: Real>(&self) -> GroupedDataset<U> {
        let conv = |v: &[T]| v.iter().map(|&a| U::lit(a.as_f64())).collect::<Vec<U>>();
        GroupedDataset {
            groups: self
                .groups
                .iter()
                .map(|g| Group {
                    id: g.id.clone(),
                    y: conv(&g.y),
                    d: conv(&g.d),
                    x: conv(&g.x),
                    p: g.p,
                    subgroup_sizes: g.subgroup_sizes.clone(),
                })
                .collect(),
            d_covariates: self.d_covariates,
        }
    }
}

fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub group_col: String,
    pub y_col: String,
    pub d_col: String,
    pub x_cols: Vec<String>,
    pub subgroup_col: Option<String>,
}

impl CsvSchema {
    pub fn new(group: &str, y: &str, d: &str, x: &[&str]) -> Self {
        Self {
            group_col: group.into(),
            y_col: y.into(),
            d_col: d.into(),
            x_cols: x.iter().map(|s| s.to_string()).collect(),
            subgroup_col: None,
        }
    }
}

struct Pending<T> {
    y: Vec<T>,
    d: Vec<T>,
    x: Vec<T>,
    sub_labels: Vec<String>,
}

/// Reads a grouped dataset. Rows sharing a group id form one group, in file
/// order; groups are ordered by first appearance. Reported row numbers are
/// file line numbers (the header is line 1).
pub fn load_csv<T: Real>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GroupedDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let gi = col(&schema.group_col)?;
    let yi = col(&schema.y_col)?;
    let di = col(&schema.d_col)?;
    let xi: Vec<usize> = schema.x_cols.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let si = schema.subgroup_col.as_deref().map(col).transpose()?;
    let p = xi.len();

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending<T>> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        let num = |c: usize, name: &str| -> Result<T> {
            let cell = rec.get(c).unwrap_or("");
            let v: T = cell.parse().map_err(|_| Error::NonNumericCell { row: line, col: name.to_string() })?;
            if !v.is_finite() {
                return Err(Error::NaNValue { row: line, col: name.to_string() });
            }
            Ok(v)
        };
        let id = rec.get(gi).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::NonNumericCell { row: line, col: schema.group_col.clone() });
        }
        let y = num(yi, &schema.y_col)?;
        let d = num(di, &schema.d_col)?;
        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending { y: Vec::new(), d: Vec::new(), x: Vec::new(), sub_labels: Vec::new() }
        });
        entry.y.push(y);
        entry.d.push(d);
        for (&c, name) in xi.iter().zip(&schema.x_cols) {
            entry.x.push(num(c, name)?);
        }
        if let Some(c) = si {
            entry.sub_labels.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyFile);
    }
    let groups = order
        .into_iter()
        .map(|id| {
            let g = pending.remove(&id).expect("group recorded on first sight");
            let subs = si.map(|_| run_lengths(&g.sub_labels));
            Group::new(id, g.y, g.d, g.x, p, subs)
        })
        .collect::<Result<Vec<_>>>()?;
    GroupedDataset::new(groups)
}

fn run_lengths(labels: &[String]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: Option<&String> = None;
    for l in labels {
        if prev == Some(l) {
            *out.last_mut().unwrap() += 1;
        } else {
            out.push(1);
        }
        prev = Some(l);
    }
    out
}

/// Writes a dataset with the column names of `schema`; values use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<T: Real>(dataset: &GroupedDataset<T>, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    if schema.x_cols.len() != dataset.d_covariates() {
        return Err(Error::InvalidConfig(format!(
            "schema names {} covariates but dataset has {}",
            schema.x_cols.len(),
            dataset.d_covariates()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![schema.group_col.clone(), schema.y_col.clone(), schema.d_col.clone()];
    header.extend(schema.x_cols.iter().cloned());
    if let Some(s) = &schema.subgroup_col {
        header.push(s.clone());
    }
    w.write_record(&header)?;
    for g in dataset.groups() {
        let labels: Vec<usize> = subgroup_layout(g).iter().enumerate().flat_map(|(m, &k)| std::iter::repeat(m).take(k)).collect();
        for j in 0..g.n() {
            let mut rec = vec![g.id.clone(), g.y[j].to_string(), g.d[j].to_string()];
            rec.extend(g.x_row(j).iter().map(|v| v.to_string()));
            if schema.subgroup_col.is_some() {
                rec.push(labels[j].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Assignment of groups to cross-fitting folds (0-based fold indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl FoldPartition {
    /// Shuffles `0..n_groups` with a seeded ChaCha stream and deals the
    /// shuffled positions to folds round-robin.
    pub fn random(n_groups: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("fold count must be at least 2, got {k}")));
        }
        if k > n_groups {
            return Err(Error::TooFewGroups { needed: k, have: n_groups });
        }
        let mut perm: Vec<usize> = (0..n_groups).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = vec![0; n_groups];
        for (r, &g) in perm.iter().enumerate() {
            assignments[g] = r % k;
        }
        Ok(Self { assignments, k })
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&g| self.assignments[g] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&g| self.assignments[g] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

pub fn partition_folds<T: Real>(dataset: &GroupedDataset<T>, k: usize, seed: u64) -> Result<FoldPartition> {
    FoldPartition::random(dataset.n_groups(), k, seed)
}

/// Per-group residual vectors `ξ̃ᵢ`, `ε̃ᵢ` stored flat, with the covariates of
/// the source rows and each group's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBundle<T> {
    xi: Vec<T>,
    eps: Vec<T>,
    x: Vec<T>,
    p: usize,
    offsets: Vec<usize>,
    layouts: Vec<GroupLayout>,
}

impl<T: Real> ResidualBundle<T> {
    pub fn new(xi: Vec<T>, eps: Vec<T>, x: Vec<T>, p: usize, layouts: Vec<GroupLayout>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(layouts.len() + 1);
        offsets.push(0);
        for l in &layouts {
            if l.n == 0 || l.subgroups.iter().sum::<usize>() != l.n {
                return Err(Error::InvalidConfig("invalid group layout".into()));
            }
            offsets.push(offsets.last().unwrap() + l.n);
        }
        let n = *offsets.last().unwrap();
        if xi.len() != n || eps.len() != n || x.len() != n * p {
            return Err(Error::InvalidConfig(format!(
                "residual lengths (xi {}, eps {}, x {}) do not match {} observations",
                xi.len(),
                eps.len(),
                x.len(),
                n
            )));
        }
        if xi.iter().chain(&eps).any(|v| !v.is_finite()) {
            return Err(Error::NaNValue { row: 0, col: "residual".into() });
        }
        Ok(Self { xi, eps, x, p, offsets, layouts })
    }

    /// Convenience constructor from per-group vectors without covariates.
    pub fn from_groups(xi: Vec<Vec<T>>, eps: Vec<Vec<T>>) -> Result<Self> {
        let layouts = xi.iter().map(|g| GroupLayout::flat(g.len())).collect();
        Self::new(xi.concat(), eps.concat(), Vec::new(), 0, layouts)
    }

    /// Bundle of the residuals `R^D`, `R^Y − βR^D` for a dataset.
    pub fn from_dataset(data: &GroupedDataset<T>, xi: Vec<T>, eps: Vec<T>) -> Result<Self> {
        let x = data.groups().iter().flat_map(|g| g.x().iter().copied()).collect();
        let layouts = data.groups().iter().map(Group::layout).collect();
        Self::new(xi, eps, x, data.d_covariates(), layouts)
    }

    pub fn n_groups(&self) -> usize {
        self.layouts.len()
    }

    pub fn n_obs(&self) -> usize {
        self.xi.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn layout(&self, i: usize) -> &GroupLayout {
        &self.layouts[i]
    }

    pub fn layouts(&self) -> &[GroupLayout] {
        &self.layouts
    }

    pub fn xi(&self) -> &[T] {
        &self.xi
    }

    pub fn eps(&self) -> &[T] {
        &self.eps
    }

    pub fn covariates(&self) -> &[T] {
        &self.x
    }

    pub fn x_row(&self, obs: usize) -> &[T] {
        &self.x[obs * self.p..(obs + 1) * self.p]
    }

    pub fn xi_group(&self, i: usize) -> &[T] {
        &self.xi[self.range(i)]
    }

    pub fn eps_group(&self, i: usize) -> &[T] {
        &self.eps[self.range(i)]
    }

    pub fn with_residuals(&self, xi: Vec<T>, eps: Vec<T>) -> Result<Self> {
        Self::new(xi, eps, self.x.clone(), self.p, self.layouts.clone())
    }

    pub fn subset(&self, groups: &[usize]) -> Self {
        let mut xi = Vec::new();
        let mut eps = Vec::new();
        let mut x = Vec::new();
        let mut layouts = Vec::with_capacity(groups.len());
        for &g in groups {
            let r = self.range(g);
            xi.extend_from_slice(&self.xi[r.clone()]);
            eps.extend_from_slice(&self.eps[r.clone()]);
            x.extend_from_slice(&self.x[r.start * self.p..r.end * self.p]);
            layouts.push(self.layouts[g].clone());
        }
        Self::new(xi, eps, x, self.p, layouts).expect("subset of a valid bundle is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GroupedDataset<f64> {
        let g1 = Group::new("a", vec![1.0, 2.0], vec![0.5, 0.1], vec![0.0, 1.0], 1, None).unwrap();
        let g2 = Group::new("b", vec![3.0, 4.0], vec![0.2, 0.3], vec![2.0, 3.0], 1, None).unwrap();
        GroupedDataset::new(vec![g1, g2]).unwrap()
    }

    #[test]
    fn direct_construction_counts() {
        let ds = tiny();
        assert_eq!((ds.n_groups(), ds.n_obs(), ds.d_covariates()), (2, 4, 1));
    }

    #[test]
    fn subgroup_layout_defaults_and_passthrough() {
        let g = Group::new("g", vec![0.0; 6], vec![0.0; 6], vec![], 0, Some(vec![2, 4])).unwrap();
        assert_eq!(subgroup_layout(&g), vec![2, 4]);
        let h = Group::new("h", vec![0.0; 3], vec![0.0; 3], vec![], 0, None).unwrap();
        assert_eq!(subgroup_layout(&h), vec![3]);
        assert!(Group::new("k", vec![0.0; 3], vec![0.0; 3], vec![], 0, Some(vec![2, 2])).is_err());
    }

    #[test]
    fn folds_balanced() {
        let p = FoldPartition::random(10, 2, 3).unwrap();
        assert_eq!(p.sizes(), vec![5, 5]);
        let mut s = FoldPartition::random(11, 2, 3).unwrap().sizes();
        s.sort();
        assert_eq!(s, vec![5, 6]);
        assert_eq!(FoldPartition::random(11, 2, 3).unwrap(), FoldPartition::random(11, 2, 3).unwrap());
        assert!(matches!(FoldPartition::random(3, 4, 0), Err(Error::TooFewGroups { .. })));
    }

    #[test]
    fn canonical_order_is_numeric_aware() {
        let mk = |id: &str| Group::new(id, vec![0.0], vec![0.0], vec![], 0, None).unwrap();
        let ds = GroupedDataset::new(vec![mk("10"), mk("2"), mk("b"), mk("a")]).unwrap();
        assert_eq!(ds.canonical_order(), vec![1, 0, 3, 2]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mk = || Group::new("x", vec![0.0], vec![0.0], vec![], 0, None).unwrap();
        assert!(GroupedDataset::new(vec![mk(), mk()]).is_err());
    }

    #[test]
    fn bundle_subset_keeps_rows() {
        let ds = tiny();
        let b = ResidualBundle::from_dataset(&ds, vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]).unwrap();
        let s = b.subset(&[1]);
        assert_eq!(s.xi(), &[3.0, 4.0]);
        assert_eq!(s.covariates(), &[2.0, 3.0]);
    }
}
