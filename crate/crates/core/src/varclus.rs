//! Agglomerative clustering of variables (columns) by correlation strength,
//! with the own-cluster / nearest-cluster R² diagnostics used to judge a cut.
//!
//! Distance between two variables is `1 - r²`, so strongly anti-correlated
//! variables are as close as strongly correlated ones. Cluster centroids are
//! the mean of the z-scored member columns, sign-aligned to the first member.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_matrix, Dataset};
use crate::error::{Error, Result};

/// `|corr|` above this marks a variable as a member of a cluster.
pub const MEMBERSHIP_THRESHOLD: f64 = 0.7;
const NEXT_R2_CAP: f64 = 1.0 - 1e-12;
/// Merge heights closer than this are treated as equal.
const HEIGHT_EPS: f64 = 1e-12;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson correlations between all columns of `x`. Constant columns
/// correlate 0 with everything (diagonal stays 1).
pub fn correlation_of_columns(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: x.nrows(),
        });
    }
    let cols: Vec<Vec<f64>> = x
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    for (j, c) in cols.iter().enumerate() {
        if c.iter().all(|&v| v == c[0]) {
            log::warn!("column {j} is constant; its correlations are set to 0");
        }
    }
    let d = cols.len();
    let mut corr = DMatrix::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = pearson(&cols[i], &cols[j]);
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
    }
    Ok(corr)
}

/// Correlation matrix over the dataset's `m + s` features (inputs first).
pub fn correlation_matrix(d: &Dataset) -> Result<DMatrix<f64>> {
    correlation_of_columns(&d.feature_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            _ => Err(Error::InvalidConfig(format!("unknown linkage `{s}`"))),
        }
    }
}

/// One agglomeration step. Node ids `0..p` are leaves; the merge at position
/// `i` creates node `p + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaf_count(&self) -> usize {
        self.labels.len()
    }

    /// Graphviz rendering; internal nodes are labelled with their height.
    pub fn to_dot(&self) -> String {
        let p = self.leaf_count();
        let mut out = String::from("digraph dendrogram {\n  node [shape=box];\n");
        for (i, label) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"{label}\"];");
        }
        for (i, m) in self.merges.iter().enumerate() {
            let id = p + i;
            let _ = writeln!(out, "  n{id} [shape=ellipse, label=\"{:.4}\"];", m.height);
            let _ = writeln!(out, "  n{id} -> n{};", m.a);
            let _ = writeln!(out, "  n{id} -> n{};", m.b);
        }
        out.push_str("}\n");
        out
    }
}

/// Agglomerates variables using `1 - corr²` distances and Lance–Williams
/// updates. Ties go to the lexicographically smallest `(a, b)` node pair.
pub fn agglomerate(corr: &DMatrix<f64>, labels: &[String], linkage: Linkage) -> Result<Dendrogram> {
    let p = corr.nrows();
    if corr.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: corr.ncols(),
        });
    }
    if labels.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: labels.len(),
        });
    }
    let total = 2 * p.max(1) - 1;
    let mut dist = vec![vec![f64::INFINITY; total]; total];
    for i in 0..p {
        for j in 0..p {
            dist[i][j] = 1.0 - corr[(i, j)] * corr[(i, j)];
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..p).collect();
    let mut merges = Vec::with_capacity(p.saturating_sub(1));

    while active.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let d = dist[a][b];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, height) = best.expect("at least two active clusters");
        let node = p + merges.len();
        size[node] = size[a] + size[b];
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let (da, db) = (dist[k][a], dist[k][b]);
            let d = match linkage {
                Linkage::Average => {
                    (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64
                }
                Linkage::Complete => da.max(db),
                Linkage::Single => da.min(db),
            };
            dist[k][node] = d;
            dist[node][k] = d;
        }
        active.retain(|&k| k != a && k != b);
        active.push(node);
        merges.push(Merge {
            a,
            b,
            height: height.max(0.0),
            size: size[node],
        });
    }
    Ok(Dendrogram {
        labels: labels.to_vec(),
        merges,
    })
}

/// Flat partition with `k` clusters: applies all but the last `k - 1` merges.
/// Returns one cluster index per leaf, numbered by first appearance in leaf order.
pub fn cut(t: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let p = t.leaf_count();
    if k < 1 || k > p {
        return Err(Error::KOutOfRange { k, max: p });
    }
    let total = p + t.merges.len();
    let mut parent: Vec<usize> = (0..total).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, m) in t.merges.iter().take(p - k).enumerate() {
        let node = p + i;
        parent[m.a] = node;
        parent[m.b] = node;
    }
    let mut ids: Vec<Option<usize>> = vec![None; total];
    let mut next = 0;
    let mut out = Vec::with_capacity(p);
    for leaf in 0..p {
        let r = root(&mut parent, leaf);
        let id = *ids[r].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        out.push(id);
    }
    Ok(out)
}

fn cluster_count(partition: &[usize]) -> usize {
    partition.iter().max().map_or(0, |&c| c + 1)
}

/// Mean of the z-scored member columns, one vector per cluster. Members
/// negatively correlated with the cluster's first member are sign-flipped
/// first so opposite-signed pairs do not cancel.
fn centroids(z: &DMatrix<f64>, partition: &[usize]) -> Vec<Vec<f64>> {
    let k = cluster_count(partition);
    let n = z.nrows();
    let mut sums = vec![vec![0.0; n]; k];
    let mut counts = vec![0usize; k];
    let mut anchor: Vec<Option<usize>> = vec![None; k];
    for (j, &c) in partition.iter().enumerate() {
        let first = *anchor[c].get_or_insert(j);
        let sign = if z.column(j).dot(&z.column(first)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        counts[c] += 1;
        for i in 0..n {
            sums[c][i] += sign * z[(i, j)];
        }
    }
    for (c, sum) in sums.iter_mut().enumerate() {
        let cnt = counts[c].max(1) as f64;
        sum.iter_mut().for_each(|v| *v /= cnt);
    }
    sums
}

/// Correlation of every variable with every cluster centroid (`p × k`).
fn centroid_correlations(d: &Dataset, partition: &[usize]) -> Result<(DMatrix<f64>, usize)> {
    let x = d.feature_matrix();
    let p = x.ncols();
    if partition.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: partition.len(),
        });
    }
    if x.nrows() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: x.nrows(),
        });
    }
    let (z, _) = normalize_matrix(&x)?;
    let cents = centroids(&z, partition);
    let k = cents.len();
    let cols: Vec<Vec<f64>> = z
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let corr = DMatrix::from_fn(p, k, |j, c| pearson(&cols[j], &cents[c]));
    Ok((corr, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableClusterStats {
    pub variable: String,
    pub cluster: usize,
    pub own_r2: f64,
    pub next_r2: f64,
    pub one_minus_r2_ratio: f64,
}

pub fn cluster_stats(d: &Dataset, partition: &[usize]) -> Result<Vec<VariableClusterStats>> {
    let (corr, k) = centroid_correlations(d, partition)?;
    let mut sizes = vec![0usize; k];
    for &c in partition {
        sizes[c] += 1;
    }
    Ok(d.feature_names()
        .into_iter()
        .enumerate()
        .map(|(j, variable)| {
            let own = partition[j];
            let own_r2 = if sizes[own] == 1 {
                1.0
            } else {
                corr[(j, own)].powi(2)
            };
            let next_r2 = (0..k)
                .filter(|&c| c != own)
                .map(|c| corr[(j, c)].powi(2))
                .fold(0.0, f64::max);
            VariableClusterStats {
                variable,
                cluster: own,
                own_r2,
                next_r2,
                one_minus_r2_ratio: (1.0 - own_r2) / (1.0 - next_r2.min(NEXT_R2_CAP)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCorrelationRow {
    pub variable: String,
    pub membership_count: usize,
    pub correlations: Vec<f64>,
}

pub fn cluster_correlation_table(
    d: &Dataset,
    partition: &[usize],
) -> Result<Vec<ClusterCorrelationRow>> {
    let (corr, k) = centroid_correlations(d, partition)?;
    Ok(d.feature_names()
        .into_iter()
        .enumerate()
        .map(|(j, variable)| {
            let correlations: Vec<f64> = (0..k).map(|c| corr[(j, c)]).collect();
            ClusterCorrelationRow {
                variable,
                membership_count: correlations
                    .iter()
                    .filter(|r| r.abs() > MEMBERSHIP_THRESHOLD)
                    .count(),
                correlations,
            }
        })
        .collect())
}

/// Whether a cut passes both diagnostics: every ratio below 1 and every
/// variable a member of exactly one cluster.
pub fn cut_is_valid(d: &Dataset, partition: &[usize]) -> Result<bool> {
    let stats = cluster_stats(d, partition)?;
    let table = cluster_correlation_table(d, partition)?;
    Ok(stats.iter().all(|s| s.one_minus_r2_ratio < 1.0)
        && table.iter().all(|r| r.membership_count == 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCandidate {
    pub k: usize,
    /// `(h_next - h_last) / h_last` around the cut; infinite when `h_last = 0 < h_next`.
    pub relative_gap: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub candidates: Vec<GapCandidate>,
    pub warnings: Vec<String>,
}

fn relative_gap(t: &Dendrogram, k: usize) -> f64 {
    let p = t.leaf_count();
    if k >= p || k == 0 {
        return f64::NEG_INFINITY;
    }
    let last = t.merges[p - k - 1].height;
    let next = t.merges[p - k].height;
    if next - last <= HEIGHT_EPS {
        0.0
    } else if last > HEIGHT_EPS {
        (next - last) / last
    } else if next > last {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Picks `k ∈ [2, k_max]` with the largest relative merge-height gap among
/// valid cuts, falling back to the overall gap maximum with a warning.
pub fn select_k(t: &Dendrogram, d: &Dataset, k_max: usize) -> Result<KSelection> {
    let p = t.leaf_count();
    if k_max > p || k_max < 2 {
        return Err(Error::KOutOfRange { k: k_max, max: p });
    }
    let mut candidates = Vec::new();
    for k in 2..=k_max {
        let partition = cut(t, k)?;
        candidates.push(GapCandidate {
            k,
            relative_gap: relative_gap(t, k),
            valid: cut_is_valid(d, &partition)?,
        });
    }
    let argmax = |only_valid: bool| {
        candidates
            .iter()
            .filter(|c| !only_valid || c.valid)
            .fold(None::<&GapCandidate>, |best, c| match best {
                Some(b) if b.relative_gap >= c.relative_gap => Some(b),
                _ => Some(c),
            })
            .map(|c| c.k)
    };
    let mut warnings = Vec::new();
    let k = match argmax(true) {
        Some(k) => k,
        None => {
            let k = argmax(false).expect("at least one candidate");
            warnings.push(format!(
                "no cut in [2, {k_max}] passes the R² ratio and membership checks; using gap maximum k = {k}"
            ));
            k
        }
    };

    let abs_gaps: Vec<f64> = (2..=k_max.min(p - 1))
        .map(|k| t.merges[p - k].height - t.merges[p - k - 1].height)
        .collect();
    if abs_gaps.len() > 1 {
        let hi = abs_gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = abs_gaps.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = t.merges.iter().map(|m| m.height).fold(1.0, f64::max);
        if hi - lo <= 1e-9 * scale {
            warnings.push("merge heights are evenly spaced; no distinguished gap".to_owned());
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(KSelection {
        k,
        candidates,
        warnings,
    })
}

/// Everything the variable-clustering stage reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableClusterReport {
    pub linkage: Linkage,
    pub dendrogram: Dendrogram,
    pub chosen_k: usize,
    pub k_overridden: bool,
    pub selection: Option<KSelection>,
    pub partition: Vec<usize>,
    pub stats: Vec<VariableClusterStats>,
    pub correlations: Vec<ClusterCorrelationRow>,
}

/// Runs the whole stage. `k_override` skips [`select_k`].
pub fn analyze(
    d: &Dataset,
    linkage: Linkage,
    k_override: Option<usize>,
) -> Result<VariableClusterReport> {
    let corr = correlation_matrix(d)?;
    let dendrogram = agglomerate(&corr, &d.feature_names(), linkage)?;
    let p = dendrogram.leaf_count();
    let (chosen_k, selection) = match k_override {
        Some(k) => {
            if k < 1 || k > p {
                return Err(Error::KOutOfRange { k, max: p });
            }
            log::info!("cluster count overridden: k = {k}");
            (k, None)
        }
        None if p < 2 => (1, None),
        None => {
            let sel = select_k(&dendrogram, d, p)?;
            (sel.k, Some(sel))
        }
    };
    let partition = cut(&dendrogram, chosen_k)?;
    Ok(VariableClusterReport {
        linkage,
        stats: cluster_stats(d, &partition)?,
        correlations: cluster_correlation_table(d, &partition)?,
        dendrogram,
        chosen_k,
        k_overridden: k_override.is_some(),
        selection,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BranchRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("v{i}")).collect()
    }

    /// Dataset with the given columns; the first column is the only input.
    fn from_columns(cols: &[Vec<f64>]) -> Dataset {
        let n = cols[0].len();
        let records = (0..n)
            .map(|i| BranchRecord {
                id: format!("r{i}"),
                inputs: vec![cols[0][i]],
                outputs: cols[1..].iter().map(|c| c[i]).collect(),
            })
            .collect();
        Dataset::new(
            vec!["v0".into()],
            (1..cols.len()).map(|i| format!("v{i}")).collect(),
            records,
        )
        .unwrap()
    }

    fn normal_column(rng: &mut ChaCha8Rng, n: usize, offset: f64) -> Vec<f64> {
        (0..n)
            .map(|_| offset + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn perfect_dependence() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let x = DMatrix::from_fn(4, 3, |i, j| match j {
            0 => a[i],
            1 => 2.0 * a[i],
            _ => -a[i],
        });
        let c = correlation_of_columns(&x).unwrap();
        assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((c[(0, 2)] + 1.0).abs() < 1e-12);
        assert_eq!(c[(1, 0)], c[(0, 1)]);
    }

    #[test]
    fn independent_columns_have_small_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| normal_column(&mut rng, 10_000, 0.0))
            .collect();
        let x = DMatrix::from_fn(10_000, 3, |i, j| cols[j][i]);
        let c = correlation_of_columns(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(c[(i, j)].abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn correlation_needs_three_rows() {
        let x = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            correlation_of_columns(&x),
            Err(Error::TooFewRows { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn constant_column_correlates_zero() {
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { i as f64 } else { 7.0 });
        let c = correlation_of_columns(&x).unwrap();
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 1)], 1.0);
    }

    #[test]
    fn single_pair_merges_at_zero() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let t = agglomerate(&corr, &names(2), Linkage::Average).unwrap();
        assert_eq!(t.merges.len(), 1);
        assert_eq!(t.merges[0].height, 0.0);
    }

    fn two_pairs() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, //
                1.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, -1.0, //
                0.0, 0.0, -1.0, 1.0,
            ],
        )
    }

    #[test]
    fn block_distances_merge_pairs_first() {
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let t = agglomerate(&two_pairs(), &names(4), linkage).unwrap();
            let h: Vec<f64> = t.merges.iter().map(|m| m.height).collect();
            assert_eq!(h, vec![0.0, 0.0, 1.0]);
            assert_eq!((t.merges[0].a, t.merges[0].b), (0, 1));
            assert_eq!((t.merges[1].a, t.merges[1].b), (2, 3));
            assert_eq!(t.merges[2].size, 4);
        }
    }

    #[test]
    fn cut_extremes() {
        let t = agglomerate(&two_pairs(), &names(4), Linkage::Average).unwrap();
        assert_eq!(cut(&t, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(cut(&t, 1).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(cut(&t, 2).unwrap(), vec![0, 0, 1, 1]);
        assert!(matches!(cut(&t, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(cut(&t, 5), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn dot_mentions_every_leaf() {
        let t = agglomerate(&two_pairs(), &names(4), Linkage::Average).unwrap();
        let dot = t.to_dot();
        for name in names(4) {
            assert!(dot.contains(&name));
        }
        assert!(dot.contains("n6 -> n4"));
    }

    fn pairs_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = normal_column(&mut rng, 200, 10.0);
        let b = normal_column(&mut rng, 200, 10.0);
        let b_neg: Vec<f64> = b.iter().map(|v| 20.0 - v).collect();
        from_columns(&[a.clone(), a, b, b_neg])
    }

    #[test]
    fn exact_pair_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = normal_column(&mut rng, 500, 10.0);
        let c = normal_column(&mut rng, 500, 10.0);
        let d = from_columns(&[a.clone(), a, c]);
        let stats = cluster_stats(&d, &[0, 0, 1]).unwrap();
        assert!((stats[0].own_r2 - 1.0).abs() < 1e-12);
        assert!(stats[0].next_r2 < 0.02);
        assert!(stats[0].one_minus_r2_ratio < 1e-10);
        // singleton
        assert_eq!(stats[2].own_r2, 1.0);
        assert_eq!(stats[2].one_minus_r2_ratio, 0.0);
    }

    #[test]
    fn variable_tied_to_two_clusters_counts_twice() {
        // a and b correlate at 0.62, so v = a + b correlates ≈0.9 with each.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = normal_column(&mut rng, 4000, 0.0);
        let e1 = normal_column(&mut rng, 4000, 0.0);
        let e2 = normal_column(&mut rng, 4000, 0.0);
        let (shared, private) = (0.62f64.sqrt(), 0.38f64.sqrt());
        let a: Vec<f64> = (0..4000).map(|i| shared * g[i] + private * e1[i]).collect();
        let b: Vec<f64> = (0..4000).map(|i| shared * g[i] + private * e2[i]).collect();
        let v: Vec<f64> = (0..4000).map(|i| 20.0 + a[i] + b[i]).collect();
        let shift = |c: &[f64]| c.iter().map(|x| x + 20.0).collect::<Vec<_>>();
        let d = from_columns(&[v, shift(&a), shift(&b)]);
        let table = cluster_correlation_table(&d, &[0, 0, 1]).unwrap();
        assert!(
            (table[0].correlations[1] - 0.9).abs() < 0.02,
            "{:?}",
            table[0]
        );
        assert_eq!(table[0].membership_count, 2);
    }

    #[test]
    fn uncorrelated_variable_has_no_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| normal_column(&mut rng, 3000, 10.0))
            .collect();
        let d = from_columns(&cols);
        // v3 sits in a cluster with v0..v2, whose centroid it barely tracks,
        // while v0 is put in its own cluster so no centroid equals v3.
        let table = cluster_correlation_table(&d, &[0, 1, 1, 1]).unwrap();
        assert!(table[3].correlations[0].abs() < 0.1);
        assert!(table[3].correlations[1].abs() < 0.7);
        assert_eq!(table[3].membership_count, 0);
    }

    #[test]
    fn two_pairs_select_two() {
        let d = pairs_dataset(1);
        let corr = correlation_matrix(&d).unwrap();
        let t = agglomerate(&corr, &d.feature_names(), Linkage::Average).unwrap();
        let sel = select_k(&t, &d, 4).unwrap();
        assert_eq!(sel.k, 2);
        assert!(sel.candidates[0].relative_gap.is_infinite());
    }

    #[test]
    fn evenly_spaced_chain_warns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cols: Vec<Vec<f64>> = (0..5).map(|_| normal_column(&mut rng, 100, 10.0)).collect();
        let d = from_columns(&cols);
        let t = Dendrogram {
            labels: names(5),
            merges: vec![
                Merge {
                    a: 0,
                    b: 1,
                    height: 0.1,
                    size: 2,
                },
                Merge {
                    a: 5,
                    b: 2,
                    height: 0.2,
                    size: 3,
                },
                Merge {
                    a: 6,
                    b: 3,
                    height: 0.3,
                    size: 4,
                },
                Merge {
                    a: 7,
                    b: 4,
                    height: 0.4,
                    size: 5,
                },
            ],
        };
        let sel = select_k(&t, &d, 4).unwrap();
        assert!(sel
            .warnings
            .iter()
            .any(|w| w.contains("no distinguished gap")));
        // gaps are 1, 1/2, 1/3 for k = 4, 3, 2
        let best_gap = sel
            .candidates
            .iter()
            .filter(|c| c.valid || sel.candidates.iter().all(|c| !c.valid))
            .map(|c| c.relative_gap)
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen = sel.candidates.iter().find(|c| c.k == sel.k).unwrap();
        assert_eq!(chosen.relative_gap, best_gap);
    }

    #[test]
    fn analyze_honours_override() {
        let d = pairs_dataset(4);
        let report = analyze(&d, Linkage::Average, Some(3)).unwrap();
        assert_eq!(report.chosen_k, 3);
        assert!(report.k_overridden && report.selection.is_none());
        assert_eq!(cluster_count(&report.partition), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cut_always_partitions(seed in 0u64..1000, p in 3usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<Vec<f64>> = (0..p).map(|_| normal_column(&mut rng, 30, 5.0)).collect();
            let x = DMatrix::from_fn(30, p, |i, j| cols[j][i]);
            let corr = correlation_of_columns(&x).unwrap();
            let t = agglomerate(&corr, &names(p), Linkage::Average).unwrap();
            prop_assert_eq!(t.merges.len(), p - 1);
            for w in t.merges.windows(2) {
                prop_assert!(w[1].height >= w[0].height - 1e-12);
            }
            for k in 1..=p {
                let part = cut(&t, k).unwrap();
                prop_assert_eq!(part.len(), p);
                prop_assert_eq!(cluster_count(&part), k);
            }
        }

        #[test]
        fn ratio_below_one_iff_own_beats_next(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<Vec<f64>> = (0..5).map(|_| normal_column(&mut rng, 40, 5.0)).collect();
            let d = from_columns(&cols);
            let part = vec![0, 0, 1, 1, 2];
            for s in cluster_stats(&d, &part).unwrap() {
                prop_assert_eq!(s.one_minus_r2_ratio < 1.0, s.own_r2 > s.next_r2);
            }
        }

        #[test]
        fn row_order_does_not_matter(seed in 0u64..1000) {
            let d = pairs_dataset(seed);
            let mut order: Vec<usize> = (0..d.n()).collect();
            order.reverse();
            order.rotate_left((seed % 17) as usize);
            let shuffled = d.permuted(&order).unwrap();
            let part = vec![0, 0, 1, 1];
            let a = cluster_stats(&d, &part).unwrap();
            let b = cluster_stats(&shuffled, &part).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.own_r2 - y.own_r2).abs() <= 1e-12);
                prop_assert!((x.next_r2 - y.next_r2).abs() <= 1e-12);
            }
            let ca = correlation_matrix(&d).unwrap();
            let cb = correlation_matrix(&shuffled).unwrap();
            prop_assert!((ca - cb).abs().max() <= 1e-12);
        }
    }
}
