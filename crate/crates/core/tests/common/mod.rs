//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use modular_dea::lp::{Relation, Sense};
use modular_dea::varclus::Linkage;

/// Dense Gaussian elimination with partial pivoting. `None` when singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Best objective over all basic feasible solutions of
/// `sense c·x` s.t. `A x (rel) b`, `x >= 0`. `None` when no vertex is feasible.
/// Only meaningful for bounded problems.
pub fn vertex_enumeration(
    sense: Sense,
    c: &[f64],
    a: &[Vec<f64>],
    rel: &[Relation],
    b: &[f64],
) -> Option<f64> {
    let n = c.len();
    // Hyperplanes: constraint rows, then x_j = 0.
    let mut planes: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e, 0.0));
    }
    let feasible = |x: &[f64]| {
        x.iter().all(|&v| v >= -1e-9)
            && a.iter().zip(rel).zip(b).all(|((row, r), &rhs)| {
                let lhs: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum();
                let tol = 1e-9 * (1.0 + rhs.abs());
                match r {
                    Relation::Le => lhs <= rhs + tol,
                    Relation::Ge => lhs >= rhs - tol,
                    Relation::Eq => (lhs - rhs).abs() <= tol,
                }
            })
    };
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let m: Vec<Vec<f64>> = subset.iter().map(|&i| planes[i].0.clone()).collect();
        let r: Vec<f64> = subset.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = gauss_solve(m, r) {
            if feasible(&x) {
                let obj: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                best = Some(match (best, sense) {
                    (None, _) => obj,
                    (Some(v), Sense::Minimize) => v.min(obj),
                    (Some(v), Sense::Maximize) => v.max(obj),
                });
            }
        }
        // Next n-subset in lexicographic order.
        let total = planes.len();
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < total - n + i {
                break;
            }
        }
        subset[i] += 1;
        for k in i + 1..n {
            subset[k] = subset[k - 1] + 1;
        }
    }
}

/// Single-input single-output CCR efficiency: own ratio over the best ratio.
pub fn ratio_theta(x: &[f64], y: &[f64]) -> Vec<f64> {
    let ratios: Vec<f64> = x.iter().zip(y).map(|(a, b)| b / a).collect();
    let best = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ratios.iter().map(|r| r / best).collect()
}

/// Multiplier-form efficiency for two inputs and one output, by searching
/// the input-weight direction `v = (t, 1 - t)`.
pub fn grid_theta_two_inputs(x: &[[f64; 2]], y: &[f64], o: usize) -> f64 {
    let eff = |t: f64| {
        let v = |k: usize| t * x[k][0] + (1.0 - t) * x[k][1];
        let best = (0..x.len())
            .map(|k| y[k] / v(k))
            .fold(f64::NEG_INFINITY, f64::max);
        (y[o] / v(o)) / best
    };
    let mut best_t = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=1000 {
        let t = i as f64 / 1000.0;
        let e = eff(t);
        if e > best {
            best = e;
            best_t = t;
        }
    }
    let lo = (best_t - 1e-3).max(0.0);
    for i in 0..=2000 {
        let t = (lo + i as f64 * 1e-6).min(1.0);
        best = best.max(eff(t));
    }
    best
}

/// Agglomerative clustering that recomputes every cluster distance from the
/// leaf distances at each step. Ties go to the lexicographically smallest
/// pair of node ids. Returns `(a, b, height)` per merge.
pub fn naive_agglomerate(corr: &[Vec<f64>], linkage: Linkage) -> Vec<(usize, usize, f64)> {
    let p = corr.len();
    let d = |i: usize, j: usize| 1.0 - corr[i][j] * corr[i][j];
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..p).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let pairs: Vec<f64> = clusters[x]
                    .1
                    .iter()
                    .flat_map(|&i| clusters[y].1.iter().map(move |&j| (i, j)))
                    .map(|(i, j)| d(i, j))
                    .collect();
                let dist = match linkage {
                    Linkage::Average => pairs.iter().sum::<f64>() / pairs.len() as f64,
                    Linkage::Complete => pairs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    Linkage::Single => pairs.iter().cloned().fold(f64::INFINITY, f64::min),
                };
                let (ia, ib) = (clusters[x].0, clusters[y].0);
                let key = (ia.min(ib), ia.max(ib));
                let better = match best {
                    None => true,
                    Some((ba, bb, bd)) => {
                        dist < bd - 1e-13 || (dist <= bd + 1e-13 && key < (ba, bb))
                    }
                };
                if better {
                    best = Some((key.0, key.1, dist));
                }
            }
        }
        let (a, b, h) = best.unwrap();
        let node = p + merges.len();
        let mut members = Vec::new();
        clusters.retain(|(id, m)| {
            if *id == a || *id == b {
                members.extend_from_slice(m);
                false
            } else {
                true
            }
        });
        clusters.push((node, members));
        merges.push((a, b, h.max(0.0)));
    }
    merges
}

/// RM regressor vector written term group by term group with `powi`.
pub fn rm_terms(x: &[f64], r: usize) -> Vec<f64> {
    let s: f64 = x.iter().sum();
    let mut t = vec![1.0];
    for k in 1..=r {
        for &v in x {
            t.push(v.powi(k as i32));
        }
    }
    for j in 1..=r {
        t.push(s.powi(j as i32));
    }
    for j in 2..=r {
        for &v in x {
            t.push(v * s.powi(j as i32 - 1));
        }
    }
    t
}

/// Ridge coefficients from explicitly accumulated normal equations.
pub fn ridge_oracle(p: &[Vec<f64>], y: &[f64], b: f64) -> Vec<f64> {
    let k = p[0].len();
    let mut a = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for (row, &yi) in p.iter().zip(y) {
        for i in 0..k {
            rhs[i] += row[i] * yi;
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += b;
    }
    gauss_solve(a, rhs).expect("ridge system is positive definite")
}
