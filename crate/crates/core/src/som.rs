//! One-dimensional self-organizing map used as a k-way record partitioner.
//!
//! Units sit on a line `0..k`. Training is online: for every sample (order
//! reshuffled each epoch) the best-matching unit is found and every codebook
//! moves toward the sample by `α(t)·h(u, bmu, t)`, with a Gaussian
//! neighborhood whose radius decays linearly to 0.01 and a learning rate that
//! decays linearly to 0.

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FINAL_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub k: usize,
    pub initial_learning_rate: f64,
    pub epochs: usize,
    /// Defaults to `k / 2` when `None`.
    pub initial_radius: Option<f64>,
    pub seed: u64,
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig {
            k: 3,
            initial_learning_rate: 0.03,
            epochs: 100,
            initial_radius: None,
            seed: 0,
        }
    }
}

impl SomConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        SomConfig {
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn radius(&self) -> f64 {
        self.initial_radius
            .unwrap_or(self.k as f64 / 2.0)
            .max(FINAL_RADIUS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("SOM needs k >= 1".into()));
        }
        if !(self.initial_learning_rate > 0.0 && self.initial_learning_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must lie in (0, 1), got {}",
                self.initial_learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("SOM needs at least one epoch".into()));
        }
        if let Some(r) = self.initial_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomModel {
    pub codebooks: Vec<Vec<f64>>,
    pub config: SomConfig,
    pub training_epochs_run: usize,
}

fn squared_distance(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(codebooks: &[Vec<f64>], row: impl Iterator<Item = f64> + Clone) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (u, w) in codebooks.iter().enumerate() {
        let d = squared_distance(w, row.clone());
        if d < best.1 {
            best = (u, d);
        }
    }
    best
}

struct Schedule {
    learning_rate: f64,
    radius_start: f64,
    radius_end: f64,
}

fn run_epochs(
    codebooks: &mut [Vec<f64>],
    x: &DMatrix<f64>,
    epochs: usize,
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
) {
    let n = x.nrows();
    let total = (epochs * n) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut sample = vec![0.0; x.ncols()];
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            let frac = step as f64 / total;
            let alpha = schedule.learning_rate * (1.0 - frac);
            let sigma =
                schedule.radius_start + (schedule.radius_end - schedule.radius_start) * frac;
            for (j, v) in sample.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            let (bmu, _) = nearest(codebooks, sample.iter().copied());
            for (u, w) in codebooks.iter_mut().enumerate() {
                let d = u as f64 - bmu as f64;
                let h = (-(d * d) / (2.0 * sigma * sigma)).exp();
                let rate = alpha * h;
                if rate < 1e-300 {
                    continue;
                }
                for (wj, xj) in w.iter_mut().zip(&sample) {
                    *wj += rate * (xj - *wj);
                }
            }
            step += 1;
        }
    }
}

/// Trains a `1 × k` map on normalized features.
pub fn train(features: &DMatrix<f64>, cfg: &SomConfig) -> Result<SomModel> {
    cfg.validate()?;
    let n = features.nrows();
    if n < cfg.k {
        return Err(Error::TooFewRecords {
            needed: cfg.k,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = index::sample(&mut rng, n, cfg.k).into_vec();
    picks.sort_unstable();
    let mut codebooks: Vec<Vec<f64>> = picks
        .iter()
        .map(|&i| features.row(i).iter().copied().collect())
        .collect();

    run_epochs(
        &mut codebooks,
        features,
        cfg.epochs,
        &Schedule {
            learning_rate: cfg.initial_learning_rate,
            radius_start: cfg.radius(),
            radius_end: FINAL_RADIUS,
        },
        &mut rng,
    );
    let mut epochs_run = cfg.epochs;

    let extra = cfg.epochs.div_ceil(10);
    for _ in 0..cfg.k {
        let labels = assign_rows(&codebooks, features);
        let sizes = cluster_sizes(&labels, cfg.k);
        let empty: Vec<usize> = (0..cfg.k).filter(|&u| sizes[u] == 0).collect();
        if empty.is_empty() {
            break;
        }
        log::warn!(
            "SOM units {empty:?} own no records; re-seeding and training {extra} more epochs"
        );
        // Records ordered by distance to their BMU, farthest first.
        let mut by_distance: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                let (_, d) = nearest(&codebooks, features.row(i).iter().copied());
                (i, d)
            })
            .collect();
        by_distance.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (&unit, &(record, _)) in empty.iter().zip(&by_distance) {
            codebooks[unit] = features.row(record).iter().copied().collect();
        }
        run_epochs(
            &mut codebooks,
            features,
            extra,
            &Schedule {
                learning_rate: cfg.initial_learning_rate,
                radius_start: FINAL_RADIUS,
                radius_end: FINAL_RADIUS,
            },
            &mut rng,
        );
        epochs_run += extra;
    }

    Ok(SomModel {
        codebooks,
        config: cfg.clone(),
        training_epochs_run: epochs_run,
    })
}

fn assign_rows(codebooks: &[Vec<f64>], x: &DMatrix<f64>) -> Vec<usize> {
    (0..x.nrows())
        .map(|i| nearest(codebooks, x.row(i).iter().copied()).0)
        .collect()
}

impl SomModel {
    pub fn k(&self) -> usize {
        self.codebooks.len()
    }

    pub fn dim(&self) -> usize {
        self.codebooks.first().map_or(0, Vec::len)
    }

    /// Best-matching unit; ties go to the lowest index.
    pub fn assign(&self, row: &[f64]) -> Result<usize> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        Ok(nearest(&self.codebooks, row.iter().copied()).0)
    }

    pub fn assign_all(&self, features: &DMatrix<f64>) -> Result<Vec<usize>> {
        if features.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: features.ncols(),
            });
        }
        Ok(assign_rows(&self.codebooks, features))
    }

    /// Mean Euclidean distance from each record to its BMU.
    pub fn quantization_error(&self, features: &DMatrix<f64>) -> Result<f64> {
        let labels = self.assign_all(features)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                squared_distance(&self.codebooks[u], features.row(i).iter().copied()).sqrt()
            })
            .sum();
        Ok(total / features.nrows().max(1) as f64)
    }
}

/// Record count per unit.
pub fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        if l < k {
            sizes[l] += 1;
        }
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    fn two_blobs(n_each: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * n_each;
        let truth: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(n, 3, |i, _| {
            let c = if truth[i] == 0 { -5.0 } else { 5.0 };
            c + rng.sample::<f64, _>(StandardNormal)
        });
        (x, truth)
    }

    #[test]
    fn sizes_count_labels() {
        assert_eq!(cluster_sizes(&[0, 0, 1, 2, 2, 2], 3), vec![2, 1, 3]);
        assert_eq!(cluster_sizes(&[], 3), vec![0, 0, 0]);
    }

    #[test]
    fn single_unit_converges_to_mean() {
        let x = gaussian(500, 4, 1);
        let model = train(&x, &SomConfig::with_k(1, 7)).unwrap();
        let mean: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
        let dist = squared_distance(&model.codebooks[0], mean.into_iter()).sqrt();
        assert!(dist < 0.1, "distance to mean {dist}");
    }

    #[test]
    fn single_unit_on_symmetric_data_stays_at_origin() {
        let half = gaussian(250, 4, 2);
        let x = DMatrix::from_fn(500, 4, |i, j| {
            if i < 250 {
                half[(i, j)]
            } else {
                -half[(i - 250, j)]
            }
        });
        let model = train(&x, &SomConfig::with_k(1, 3)).unwrap();
        let norm = model.codebooks[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.1, "codebook norm {norm}");
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (x, truth) = two_blobs(100, 3);
        let model = train(&x, &SomConfig::with_k(2, 11)).unwrap();
        let labels = model.assign_all(&x).unwrap();
        let same = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(same == truth.len() || same == 0, "agreement {same}");
    }

    #[test]
    fn training_is_deterministic() {
        let x = gaussian(120, 3, 5);
        let a = train(&x, &SomConfig::with_k(3, 9)).unwrap();
        let b = train(&x, &SomConfig::with_k(3, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.assign_all(&x).unwrap(), b.assign_all(&x).unwrap());
    }

    #[test]
    fn assign_ties_and_exact_hits() {
        let model = SomModel {
            codebooks: vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![3.0, 3.0]],
            config: SomConfig::with_k(3, 0),
            training_epochs_run: 0,
        };
        assert_eq!(model.assign(&[3.0, 3.0]).unwrap(), 2);
        assert_eq!(model.assign(&[0.0, 0.0]).unwrap(), 0);
        assert!(matches!(
            model.assign(&[0.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn too_few_records_and_bad_config() {
        let x = gaussian(2, 2, 0);
        assert!(matches!(
            train(&x, &SomConfig::with_k(3, 0)),
            Err(Error::TooFewRecords { needed: 3, got: 2 })
        ));
        let cfg = SomConfig {
            initial_learning_rate: 1.5,
            ..SomConfig::default()
        };
        assert!(train(&gaussian(10, 2, 0), &cfg).is_err());
    }

    #[test]
    fn every_unit_owns_records() {
        // A tight blob plus one far outlier: a unit initialised on the outlier
        // must still end up with at least one record.
        let mut x = gaussian(60, 2, 8);
        x[(0, 0)] = 40.0;
        for seed in 0..5 {
            let model = train(&x, &SomConfig::with_k(4, seed)).unwrap();
            let sizes = cluster_sizes(&model.assign_all(&x).unwrap(), 4);
            assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
            assert_eq!(sizes.iter().sum::<usize>(), 60);
        }
    }

    #[test]
    fn more_epochs_lower_quantization_error() {
        let x = gaussian(200, 2, 4);
        let median = |epochs: usize| {
            let mut errs: Vec<f64> = (0..10)
                .map(|seed| {
                    let cfg = SomConfig {
                        epochs,
                        ..SomConfig::with_k(4, seed)
                    };
                    train(&x, &cfg).unwrap().quantization_error(&x).unwrap()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            (errs[4] + errs[5]) / 2.0
        };
        assert!(median(20) <= median(10) + 1e-9);
    }
}
