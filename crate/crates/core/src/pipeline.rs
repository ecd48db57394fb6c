//! End-to-end run: efficiency scores, class labels, variable clustering,
//! record clustering and modular classification, with one JSON artifact
//! per stage.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, normalize, Dataset};
use crate::dea::{assign_class, evaluate_all, EfficiencyBins, PerformanceClass};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_with_assignments, CvConfig, FoldWeighting, ModularReport, NormalizationScope,
};
use crate::rm::{self, RmConfig, RmModelFile};
use crate::som::{self, SomConfig, SomModel};
use crate::varclus::{self, Linkage, VariableClusterReport};

pub const SCORES_FILE: &str = "scores.json";
pub const LABELS_FILE: &str = "labels.json";
pub const VARCLUS_FILE: &str = "varclus.json";
pub const DENDROGRAM_DOT_FILE: &str = "dendrogram.dot";
pub const ASSIGNMENTS_FILE: &str = "assignments.json";
pub const MODELS_FILE: &str = "models.json";
pub const REPORT_FILE: &str = "report.json";

const SOM_STREAM: u64 = 1;
const CV_STREAM: u64 = 2;

/// SOM settings; `k` comes from the variable-clustering stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SomSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub initial_radius: Option<f64>,
}

impl Default for SomSettings {
    fn default() -> Self {
        let d = SomConfig::default();
        SomSettings {
            learning_rate: d.initial_learning_rate,
            epochs: d.epochs,
            initial_radius: d.initial_radius,
        }
    }
}

impl SomSettings {
    pub fn config(&self, k: usize, seed: u64) -> SomConfig {
        SomConfig {
            k,
            initial_learning_rate: self.learning_rate,
            epochs: self.epochs,
            initial_radius: self.initial_radius,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: PathBuf,
    /// Input column count when the file has no `#inputs=` directive.
    pub inputs: Option<usize>,
    pub bins: [f64; 2],
    pub k_override: Option<usize>,
    pub linkage: Linkage,
    pub som: SomSettings,
    pub rm: RmConfig,
    pub folds: usize,
    pub stratified: bool,
    pub weighting: FoldWeighting,
    pub normalization: NormalizationScope,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub timestamp: bool,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let cv = CvConfig::default();
        PipelineConfig {
            input: input.into(),
            inputs: None,
            bins: EfficiencyBins::default().cuts(),
            k_override: None,
            linkage: Linkage::default(),
            som: SomSettings::default(),
            rm: RmConfig::default(),
            folds: cv.folds,
            stratified: cv.stratified,
            weighting: cv.weighting,
            normalization: cv.normalization,
            seed: 0,
            out_dir: out_dir.into(),
            timestamp: true,
        }
    }

    pub fn efficiency_bins(&self) -> Result<EfficiencyBins> {
        EfficiencyBins::new(self.bins[0], self.bins[1])
    }

    /// Checks every setting that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.efficiency_bins()?;
        self.rm.validate()?;
        self.som.config(1, 0).validate()?;
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "fold count must be >= 2, got {}",
                self.folds
            )));
        }
        if self.k_override == Some(0) {
            return Err(Error::KOutOfRange { k: 0, max: 0 });
        }
        Ok(())
    }

    fn cv(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            seed: derive_seed(self.seed, CV_STREAM),
            stratified: self.stratified,
            weighting: self.weighting,
            normalization: self.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub theta: f64,
    pub class: PerformanceClass,
    pub reference_set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub class: PerformanceClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub id: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentArtifact {
    pub codebooks: Vec<Vec<f64>>,
    pub assignments: Vec<AssignmentRow>,
    pub sizes: Vec<usize>,
}

impl AssignmentArtifact {
    pub fn new(d: &Dataset, model: &SomModel, labels: &[usize]) -> Self {
        AssignmentArtifact {
            codebooks: model.codebooks.clone(),
            assignments: d
                .records()
                .iter()
                .zip(labels)
                .map(|(r, &cluster)| AssignmentRow {
                    id: r.id.clone(),
                    cluster,
                })
                .collect(),
            sizes: som::cluster_sizes(labels, model.k()),
        }
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Cluster of every record of `d`, matched by id.
    pub fn clusters_for(&self, d: &Dataset) -> Result<Vec<usize>> {
        let by_id: HashMap<&str, usize> = self
            .assignments
            .iter()
            .map(|a| (a.id.as_str(), a.cluster))
            .collect();
        d.records()
            .iter()
            .map(|r| {
                let c = *by_id.get(r.id.as_str()).ok_or_else(|| {
                    Error::InvalidConfig(format!("no cluster assignment for record `{}`", r.id))
                })?;
                if c >= self.k() {
                    return Err(Error::IndexOutOfRange {
                        index: c,
                        len: self.k(),
                    });
                }
                Ok(c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub cluster: usize,
    pub n_records: usize,
    pub model: RmModelFile,
}

/// Classifiers fitted on all records of the (normalized) dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsArtifact {
    pub global: RmModelFile,
    pub clusters: Vec<ClusterModel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: PerformanceClass,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
    pub config: PipelineConfig,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub class_counts: Vec<ClassCount>,
    pub chosen_k: usize,
    pub k_overridden: bool,
    pub cluster_sizes: Vec<usize>,
    /// Rows are clusters, columns are classes in `Weak, Average, High` order.
    pub cluster_class_counts: Vec<Vec<usize>>,
    pub classification: ModularReport,
}

/// Everything a run produces, also written to `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub scores: Vec<ScoreRow>,
    pub labels: Vec<LabelRow>,
    pub varclus: VariableClusterReport,
    pub assignments: AssignmentArtifact,
    pub models: ModelsArtifact,
    pub report: PipelineReport,
}

pub fn score_rows(d: &Dataset, bins: &EfficiencyBins) -> Result<Vec<ScoreRow>> {
    evaluate_all(d)?
        .into_iter()
        .map(|e| {
            Ok(ScoreRow {
                class: assign_class(e.theta, bins)?,
                id: e.dmu_id,
                theta: e.theta,
                reference_set: e.reference_set,
            })
        })
        .collect()
}

pub fn label_rows(scores: &[ScoreRow]) -> Vec<LabelRow> {
    scores
        .iter()
        .map(|s| LabelRow {
            id: s.id.clone(),
            class: s.class,
        })
        .collect()
}

/// Class index of every record of `d`, matched by id.
pub fn class_indices(d: &Dataset, labels: &[LabelRow]) -> Result<Vec<usize>> {
    let by_id: HashMap<&str, PerformanceClass> =
        labels.iter().map(|l| (l.id.as_str(), l.class)).collect();
    d.records()
        .iter()
        .map(|r| {
            by_id.get(r.id.as_str()).map(|c| c.index()).ok_or_else(|| {
                Error::InvalidConfig(format!("no class label for record `{}`", r.id))
            })
        })
        .collect()
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Fits the global classifier and one per cluster on normalized features.
pub fn train_models(
    z: &DMatrix<f64>,
    labels: &[usize],
    clusters: Option<(&[usize], usize)>,
    cfg: &RmConfig,
) -> Result<ModelsArtifact> {
    let class_labels = PerformanceClass::labels();
    let global = rm::fit_labels(z, labels, class_labels.clone(), cfg)?.to_file();
    let mut out = Vec::new();
    if let Some((assignments, k)) = clusters {
        for cluster in 0..k {
            let rows: Vec<usize> = (0..z.nrows())
                .filter(|&i| assignments[i] == cluster)
                .collect();
            if rows.is_empty() {
                return Err(Error::EmptyCluster(cluster));
            }
            let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let model = rm::fit_labels(&select_rows(z, &rows), &y, class_labels.clone(), cfg)?;
            out.push(ClusterModel {
                cluster,
                n_records: rows.len(),
                model: model.to_file(),
            });
        }
    }
    Ok(ModelsArtifact {
        global,
        clusters: out,
    })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Runs every stage and writes the artifacts into `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let bins = cfg.efficiency_bins()?;
    let d = load_csv(&cfg.input, cfg.inputs).map_err(|e| e.in_stage("load"))?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::from(e).in_stage("output"))?;
    let out = |name: &str| cfg.out_dir.join(name);
    info!(
        "loaded {} records ({} inputs, {} outputs)",
        d.n(),
        d.m(),
        d.s()
    );

    let scores = score_rows(&d, &bins).map_err(|e| e.in_stage("efficiency"))?;
    let labels = label_rows(&scores);
    let y: Vec<usize> = labels.iter().map(|l| l.class.index()).collect();
    write_json(out(SCORES_FILE), &scores)?;
    write_json(out(LABELS_FILE), &labels)?;

    let varclus = varclus::analyze(&d, cfg.linkage, cfg.k_override)
        .map_err(|e| e.in_stage("variable-clustering"))?;
    let k = varclus.chosen_k;
    if varclus.k_overridden {
        info!("using overridden cluster count k = {k}");
    } else {
        info!("selected cluster count k = {k}");
    }
    write_json(out(VARCLUS_FILE), &varclus)?;
    fs::write(out(DENDROGRAM_DOT_FILE), varclus.dendrogram.to_dot())?;

    let (z, _) = normalize(&d).map_err(|e| e.in_stage("record-clustering"))?;
    let som_cfg = cfg.som.config(k, derive_seed(cfg.seed, SOM_STREAM));
    let som_model = som::train(&z, &som_cfg).map_err(|e| e.in_stage("record-clustering"))?;
    let clusters = som_model
        .assign_all(&z)
        .map_err(|e| e.in_stage("record-clustering"))?;
    let assignments = AssignmentArtifact::new(&d, &som_model, &clusters);
    write_json(out(ASSIGNMENTS_FILE), &assignments)?;

    let class_labels = PerformanceClass::labels();
    let classification =
        compare_with_assignments(&z, &y, &class_labels, &clusters, k, &cfg.rm, &cfg.cv())
            .map_err(|e| e.in_stage("classification"))?;
    let models = train_models(&z, &y, Some((&clusters, k)), &cfg.rm)
        .map_err(|e| e.in_stage("classification"))?;
    write_json(out(MODELS_FILE), &models)?;

    let mut cluster_class_counts = vec![vec![0; PerformanceClass::ALL.len()]; k];
    for (&c, &cls) in clusters.iter().zip(&y) {
        cluster_class_counts[c][cls] += 1;
    }
    let report = PipelineReport {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        generated_at_unix: cfg.timestamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |t| t.as_secs())
        }),
        config: cfg.clone(),
        n: d.n(),
        m: d.m(),
        s: d.s(),
        class_counts: PerformanceClass::ALL
            .iter()
            .map(|&class| ClassCount {
                class,
                count: y.iter().filter(|&&c| c == class.index()).count(),
            })
            .collect(),
        chosen_k: k,
        k_overridden: varclus.k_overridden,
        cluster_sizes: assignments.sizes.clone(),
        cluster_class_counts,
        classification,
    };
    write_json(out(REPORT_FILE), &report)?;
    info!(
        "modular CA {:.4}, non-modular CA {:.4}",
        report.classification.modular_ca, report.classification.nonmodular_ca
    );
    Ok(PipelineOutput {
        scores,
        labels,
        varclus,
        assignments,
        models,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{default_cluster_specs, generate_synthetic, save_csv};

    fn synth_input(dir: &Path, n: usize, seed: u64) -> PathBuf {
        let sd = generate_synthetic(n, 3, 3, &default_cluster_specs(3, 3), seed).unwrap();
        let path = dir.join("data.csv");
        save_csv(&sd.dataset, &path, Some(seed)).unwrap();
        path
    }

    #[test]
    fn bad_bins_fail_before_loading() {
        let mut cfg = PipelineConfig::new("/nonexistent/file.csv", "/nonexistent/out");
        cfg.bins = [0.7, 0.55];
        match run_pipeline(&cfg) {
            Err(Error::Stage {
                stage: "config", ..
            }) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_input_is_tagged_with_load_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::new(dir.path().join("absent.csv"), dir.path().join("out"));
        assert!(matches!(
            run_pipeline(&cfg),
            Err(Error::Stage { stage: "load", .. })
        ));
    }

    #[test]
    fn run_writes_every_artifact_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let input = synth_input(dir.path(), 150, 3);
        let mut cfg = PipelineConfig::new(&input, dir.path().join("a"));
        cfg.timestamp = false;
        cfg.seed = 5;
        let first = run_pipeline(&cfg).unwrap();
        cfg.out_dir = dir.path().join("b");
        let second = run_pipeline(&cfg).unwrap();
        for name in [
            SCORES_FILE,
            LABELS_FILE,
            VARCLUS_FILE,
            DENDROGRAM_DOT_FILE,
            ASSIGNMENTS_FILE,
            MODELS_FILE,
        ] {
            let a = fs::read(dir.path().join("a").join(name)).unwrap();
            let b = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        assert_eq!(first.report.classification, second.report.classification);
        assert_eq!(first.scores.len(), 150);
        assert_eq!(first.report.cluster_sizes.iter().sum::<usize>(), 150);
    }

    #[test]
    fn k_override_skips_selection() {
        let dir = tempfile::tempdir().unwrap();
        let input = synth_input(dir.path(), 120, 4);
        let mut cfg = PipelineConfig::new(&input, dir.path().join("out"));
        cfg.k_override = Some(2);
        cfg.timestamp = false;
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.report.chosen_k, 2);
        assert!(out.report.k_overridden);
        assert!(out.varclus.selection.is_none());
        assert_eq!(out.models.clusters.len(), 2);
    }

    #[test]
    fn retraining_from_artifacts_matches() {
        let dir = tempfile::tempdir().unwrap();
        let input = synth_input(dir.path(), 120, 6);
        let mut cfg = PipelineConfig::new(&input, dir.path().join("out"));
        cfg.timestamp = false;
        let out = run_pipeline(&cfg).unwrap();

        let d = load_csv(&input, None).unwrap();
        let labels: Vec<LabelRow> = read_json(cfg.out_dir.join(LABELS_FILE)).unwrap();
        let assignments: AssignmentArtifact =
            read_json(cfg.out_dir.join(ASSIGNMENTS_FILE)).unwrap();
        let y = class_indices(&d, &labels).unwrap();
        let clusters = assignments.clusters_for(&d).unwrap();
        let (z, _) = normalize(&d).unwrap();
        let models = train_models(&z, &y, Some((&clusters, assignments.k())), &cfg.rm).unwrap();
        assert_eq!(models, out.models);
    }
}
