//! Stratified k-fold cross validation and the modular vs. non-modular
//! accuracy comparison.

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, Dataset, NormalizationStats};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::rm::{self, RmConfig};
use crate::som::{self, SomConfig};

pub const DEFAULT_FOLDS: usize = 10;

/// Record-to-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Splits records into `k` folds. Stratified plans shuffle each class and
/// deal it round-robin, continuing the rotation from where the previous
/// class stopped, so per-class and total fold sizes differ by at most one.
pub fn make_folds(labels: &[usize], k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "fold count must be >= 2, got {k}"
        )));
    }
    let n = labels.len();
    if n < k {
        return Err(Error::TooFewRecords { needed: k, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; n];
    if stratified {
        let classes = labels.iter().max().map_or(0, |&c| c + 1);
        let mut offset = 0;
        for c in 0..classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            members.shuffle(&mut rng);
            for (pos, &i) in members.iter().enumerate() {
                assignments[i] = (offset + pos) % k;
            }
            offset = (offset + members.len()) % k;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (pos, &i) in order.iter().enumerate() {
            assignments[i] = pos % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        stratified,
    })
}

/// How fold errors are combined into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldWeighting {
    /// `Σ_k (|fold k| / n) · error(k)`.
    #[default]
    FoldSize,
    /// `(1/K) Σ_k Σ_j W_kj · error_kj` with `W_kj` the share of class `j`
    /// in fold `k` and `error_kj` the error on that class inside the fold.
    ClassProportion,
}

/// Where the z-score statistics for the classifier come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Features are used as given (normalized once over the full dataset).
    #[default]
    FullDataset,
    /// Features are re-standardized with statistics of each training fold.
    TrainFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub weighting: FoldWeighting,
    pub normalization: NormalizationScope,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: DEFAULT_FOLDS,
            seed: 0,
            stratified: true,
            weighting: FoldWeighting::FoldSize,
            normalization: NormalizationScope::FullDataset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub size: usize,
    pub misclassified: usize,
    pub error_rate: f64,
    /// Share of each class in this fold.
    pub class_weights: Vec<f64>,
    /// Error rate restricted to each class (0 when the class is absent).
    pub class_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub n: usize,
    pub correct: usize,
    pub weighting: FoldWeighting,
    pub normalization: NormalizationScope,
    pub per_fold: Vec<FoldResult>,
    pub weighted_error: f64,
    pub accuracy: f64,
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn run_fold(
    x: &DMatrix<f64>,
    labels: &[usize],
    class_labels: &[String],
    cfg: &RmConfig,
    plan: &FoldPlan,
    scope: NormalizationScope,
    fold: usize,
) -> Result<FoldResult> {
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    if train.is_empty() {
        return Err(Error::EmptyTrainingFold(fold));
    }
    let (xtr, xte) = match scope {
        NormalizationScope::FullDataset => (select_rows(x, &train), select_rows(x, &test)),
        NormalizationScope::TrainFold => {
            if train.len() < 2 {
                return Err(Error::TooFewRows {
                    needed: 2,
                    got: train.len(),
                });
            }
            let stats = NormalizationStats::fit_rows(x, &train)?;
            (
                stats.apply(&select_rows(x, &train))?,
                stats.apply(&select_rows(x, &test))?,
            )
        }
    };
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let model = rm::fit_labels(&xtr, &ytr, class_labels.to_vec(), cfg)?;
    let predicted = model.predict_all(&xte)?;

    let c = class_labels.len();
    let mut per_class = vec![0usize; c];
    let mut per_class_miss = vec![0usize; c];
    for (&i, &p) in test.iter().zip(&predicted) {
        per_class[labels[i]] += 1;
        if p != labels[i] {
            per_class_miss[labels[i]] += 1;
        }
    }
    let misclassified: usize = per_class_miss.iter().sum();
    let size = test.len();
    Ok(FoldResult {
        fold,
        size,
        misclassified,
        error_rate: misclassified as f64 / size as f64,
        class_weights: per_class.iter().map(|&k| k as f64 / size as f64).collect(),
        class_errors: per_class
            .iter()
            .zip(&per_class_miss)
            .map(|(&k, &e)| if k == 0 { 0.0 } else { e as f64 / k as f64 })
            .collect(),
    })
}

/// K-fold cross validation of an RM classifier over `x` (`n × l`).
pub fn weighted_cv(
    x: &DMatrix<f64>,
    labels: &[usize],
    class_labels: &[String],
    cfg: &RmConfig,
    plan: &FoldPlan,
    weighting: FoldWeighting,
    scope: NormalizationScope,
) -> Result<CvReport> {
    let n = x.nrows();
    if labels.len() != n || plan.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if labels.len() != n {
                labels.len()
            } else {
                plan.n()
            },
        });
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= class_labels.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: class_labels.len(),
        });
    }
    let per_fold: Vec<FoldResult> = (0..plan.k)
        .into_par_iter()
        .map(|fold| run_fold(x, labels, class_labels, cfg, plan, scope, fold))
        .collect::<Result<_>>()?;
    if let Some(empty) = per_fold.iter().find(|f| f.size == 0) {
        return Err(Error::InvalidConfig(format!(
            "fold {} has no test records",
            empty.fold
        )));
    }

    let weighted_error = match weighting {
        FoldWeighting::FoldSize => per_fold
            .iter()
            .map(|f| f.size as f64 / n as f64 * f.error_rate)
            .sum(),
        FoldWeighting::ClassProportion => {
            per_fold
                .iter()
                .map(|f| {
                    f.class_weights
                        .iter()
                        .zip(&f.class_errors)
                        .map(|(w, e)| w * e)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / plan.k as f64
        }
    };
    let correct = n - per_fold.iter().map(|f| f.misclassified).sum::<usize>();
    Ok(CvReport {
        folds: plan.k,
        n,
        correct,
        weighting,
        normalization: scope,
        per_fold,
        weighted_error,
        accuracy: 1.0 - weighted_error,
    })
}

/// Cluster-size-weighted combination of per-cluster accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularCa {
    pub weights: Vec<f64>,
    pub denominator: f64,
    pub modular_ca: f64,
}

fn check_per_cluster(per_cluster: &[(usize, f64)]) -> Result<()> {
    if per_cluster.is_empty() {
        return Err(Error::InvalidConfig("no clusters to combine".into()));
    }
    for (i, &(n, ca)) in per_cluster.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyCluster(i));
        }
        if !(0.0..=1.0).contains(&ca) {
            return Err(Error::InvalidConfig(format!(
                "cluster {i} accuracy {ca} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// `W_i = n_i / Σ n_j`, `modular_ca = Σ W_i · ca_i`.
pub fn modular_ca(per_cluster: &[(usize, f64)]) -> Result<ModularCa> {
    check_per_cluster(per_cluster)?;
    let total: usize = per_cluster.iter().map(|&(n, _)| n).sum();
    modular_ca_over(per_cluster, total as f64)
}

/// Same combination with an explicit denominator in place of `Σ n_j`;
/// replays printed arithmetic that divides by a different total.
pub fn modular_ca_over(per_cluster: &[(usize, f64)], denominator: f64) -> Result<ModularCa> {
    check_per_cluster(per_cluster)?;
    if !(denominator > 0.0 && denominator.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "denominator must be positive, got {denominator}"
        )));
    }
    let weights: Vec<f64> = per_cluster
        .iter()
        .map(|&(n, _)| n as f64 / denominator)
        .collect();
    let modular_ca = weights
        .iter()
        .zip(per_cluster)
        .map(|(w, &(_, ca))| w * ca)
        .sum();
    Ok(ModularCa {
        weights,
        denominator,
        modular_ca,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub cluster: usize,
    pub n_records: usize,
    /// Correctly classified test records, when known.
    pub correct: Option<usize>,
    pub ca: f64,
    pub folds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularReport {
    pub per_cluster: Vec<ClusterResult>,
    pub weights: Vec<f64>,
    pub weight_denominator: f64,
    pub modular_ca: f64,
    pub nonmodular_ca: f64,
    pub nonmodular_correct: Option<usize>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonmodular_cv: Option<CvReport>,
    pub warnings: Vec<String>,
}

/// Builds a report from published per-cluster figures without retraining.
pub fn replay_report(
    per_cluster: &[(usize, f64)],
    denominator: Option<f64>,
    nonmodular_ca: f64,
) -> Result<ModularReport> {
    let combined = match denominator {
        Some(d) => modular_ca_over(per_cluster, d)?,
        None => modular_ca(per_cluster)?,
    };
    Ok(ModularReport {
        per_cluster: per_cluster
            .iter()
            .enumerate()
            .map(|(cluster, &(n, ca))| ClusterResult {
                cluster,
                n_records: n,
                correct: None,
                ca,
                folds: 0,
                cv: None,
            })
            .collect(),
        weights: combined.weights,
        weight_denominator: combined.denominator,
        modular_ca: combined.modular_ca,
        nonmodular_ca,
        nonmodular_correct: None,
        n: per_cluster.iter().map(|&(n, _)| n).sum(),
        nonmodular_cv: None,
        warnings: Vec::new(),
    })
}

/// Cross-validates one classifier on all records and one per cluster of
/// `assignments`, then combines the per-cluster accuracies.
///
/// `features` are the classifier inputs (normalized over the full dataset
/// unless `cv.normalization` says otherwise). A cluster with fewer records
/// than folds is evaluated with one fold per record and a warning.
pub fn compare_with_assignments(
    features: &DMatrix<f64>,
    labels: &[usize],
    class_labels: &[String],
    assignments: &[usize],
    k_clusters: usize,
    rm_cfg: &RmConfig,
    cv: &CvConfig,
) -> Result<ModularReport> {
    let n = features.nrows();
    if assignments.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: assignments.len(),
        });
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k_clusters) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: k_clusters,
        });
    }
    let plan = make_folds(labels, cv.folds, cv.seed, cv.stratified)?;
    let global = weighted_cv(
        features,
        labels,
        class_labels,
        rm_cfg,
        &plan,
        cv.weighting,
        cv.normalization,
    )?;
    info!(
        "non-modular CV accuracy {:.4} ({} of {})",
        global.accuracy, global.correct, n
    );

    let mut warnings = Vec::new();
    let mut per_cluster = Vec::with_capacity(k_clusters);
    for cluster in 0..k_clusters {
        let rows: Vec<usize> = (0..n).filter(|&i| assignments[i] == cluster).collect();
        if rows.is_empty() {
            return Err(Error::EmptyCluster(cluster));
        }
        if rows.len() < 2 {
            return Err(Error::ClusterTooSmall {
                cluster,
                records: rows.len(),
            });
        }
        let folds = if rows.len() < cv.folds {
            let msg = format!(
                "cluster {cluster} has {} records, fewer than {} folds; using {} folds",
                rows.len(),
                cv.folds,
                rows.len()
            );
            warn!("{msg}");
            warnings.push(msg);
            rows.len()
        } else {
            cv.folds
        };
        let x = select_rows(features, &rows);
        let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        let plan = make_folds(
            &y,
            folds,
            derive_seed(cv.seed, cluster as u64 + 1),
            cv.stratified,
        )?;
        let report = weighted_cv(
            &x,
            &y,
            class_labels,
            rm_cfg,
            &plan,
            cv.weighting,
            cv.normalization,
        )?;
        info!(
            "cluster {cluster}: {} records, CV accuracy {:.4}",
            rows.len(),
            report.accuracy
        );
        per_cluster.push(ClusterResult {
            cluster,
            n_records: rows.len(),
            correct: Some(report.correct),
            ca: report.accuracy,
            folds,
            cv: Some(report),
        });
    }

    let combined = modular_ca(
        &per_cluster
            .iter()
            .map(|c| (c.n_records, c.ca))
            .collect::<Vec<_>>(),
    )?;
    Ok(ModularReport {
        per_cluster,
        weights: combined.weights,
        weight_denominator: combined.denominator,
        modular_ca: combined.modular_ca,
        nonmodular_ca: global.accuracy,
        nonmodular_correct: Some(global.correct),
        n,
        nonmodular_cv: Some(global),
        warnings,
    })
}

/// Normalizes `d`, partitions it with a SOM and compares modular and
/// non-modular classifiers. Returns the report and the SOM assignments.
pub fn compare_pipelines(
    d: &Dataset,
    labels: &[usize],
    class_labels: &[String],
    k_clusters: usize,
    som_cfg: &SomConfig,
    rm_cfg: &RmConfig,
    cv: &CvConfig,
) -> Result<(ModularReport, Vec<usize>)> {
    if som_cfg.k != k_clusters {
        return Err(Error::InvalidConfig(format!(
            "SOM has {} units but {k_clusters} clusters were requested",
            som_cfg.k
        )));
    }
    let (z, _) = normalize(d)?;
    let model = som::train(&z, som_cfg)?;
    let assignments = model.assign_all(&z)?;
    let report = compare_with_assignments(
        &z,
        labels,
        class_labels,
        &assignments,
        k_clusters,
        rm_cfg,
        cv,
    )?;
    Ok((report, assignments))
}
