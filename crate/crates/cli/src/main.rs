use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use modular_dea::dataset::{
    default_cluster_specs, generate_piecewise, generate_synthetic, load_csv, normalize, save_csv,
    Dataset,
};
use modular_dea::dea::{EfficiencyBins, PerformanceClass};
use modular_dea::evaluation::{
    compare_with_assignments, CvConfig, FoldWeighting, ModularReport, NormalizationScope,
};
use modular_dea::pipeline::{
    self, class_indices, label_rows, read_json, score_rows, train_models, write_json,
    AssignmentArtifact, LabelRow, PipelineConfig, SomSettings,
};
use modular_dea::rm::{RmConfig, Variant};
use modular_dea::som::{self, SomConfig};
use modular_dea::varclus::{self, Linkage};

#[derive(Parser)]
#[command(
    name = "modular-dea",
    version,
    about = "Efficiency scoring and modular classification of decision-making units"
)]
struct Cli {
    /// Master seed for every random stage
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for artifacts whose path is not given explicitly
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Omit the wall-clock timestamp from reports
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Log filter (error, warn, info, debug, trace)
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset as CSV
    Synth(SynthArgs),
    /// CCR input-oriented efficiency scores and performance classes
    Score(ScoreArgs),
    /// Cluster the feature columns by correlation
    ClusterVars(ClusterVarsArgs),
    /// Cluster the records with a one-dimensional SOM
    ClusterRecords(ClusterRecordsArgs),
    /// Fit the global and per-cluster polynomial classifiers
    Train(TrainArgs),
    /// Cross-validate modular and non-modular classifiers
    Evaluate(EvaluateArgs),
    /// Run every stage and write all artifacts to --out-dir
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Dataset CSV (id, inputs..., outputs...)
    #[arg(long)]
    input: PathBuf,
    /// Number of input columns, when the file has no `#inputs=` line
    #[arg(long)]
    inputs: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        load_csv(&self.input, self.inputs)
            .with_context(|| format!("loading {}", self.input.display()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Three-component mixture with the reference cluster sizes
    Mixture,
    /// Separated groups with conflicting local class rules
    Piecewise,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 589)]
    n: usize,
    /// Input column count
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Output column count
    #[arg(long, default_value_t = 3)]
    s: usize,
    #[arg(long, value_enum, default_value_t = SynthKind::Mixture)]
    kind: SynthKind,
    /// Also write the generator's class labels (piecewise only)
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Interior cut points of the Weak/Average/High bands
    #[arg(long, default_value = "0.55,0.7")]
    bins: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterVarsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "average", value_parser = parse_linkage)]
    linkage: Linkage,
    /// Cluster count; skips automatic selection
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the dendrogram in Graphviz DOT format
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterRecordsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.03)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RmArgs {
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = modular_dea::rm::DEFAULT_RIDGE)]
    ridge: f64,
    /// rm, rmprime or fullmp
    #[arg(long, default_value = "rm", value_parser = parse_variant)]
    variant: Variant,
}

impl RmArgs {
    fn config(&self) -> RmConfig {
        RmConfig {
            order: self.order,
            ridge: self.ridge,
            variant: self.variant,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Label artifact: [{id, class}]
    #[arg(long)]
    labels: PathBuf,
    /// Assignment artifact from cluster-records or pipeline
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[command(flatten)]
    rm: RmArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    FoldSize,
    ClassProportion,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    FullDataset,
    TrainFold,
}

#[derive(Args)]
struct CvArgs {
    /// Fold count (at least 2)
    #[arg(long, default_value_t = 10, value_parser = parse_folds)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = WeightingArg::FoldSize)]
    weighting: WeightingArg,
    #[arg(long, value_enum, default_value_t = ScopeArg::FullDataset)]
    normalization: ScopeArg,
    /// Plain instead of class-stratified folds
    #[arg(long)]
    unstratified: bool,
}

impl CvArgs {
    fn weighting(&self) -> FoldWeighting {
        match self.weighting {
            WeightingArg::FoldSize => FoldWeighting::FoldSize,
            WeightingArg::ClassProportion => FoldWeighting::ClassProportion,
        }
    }

    fn scope(&self) -> NormalizationScope {
        match self.normalization {
            ScopeArg::FullDataset => NormalizationScope::FullDataset,
            ScopeArg::TrainFold => NormalizationScope::TrainFold,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Label artifact; when absent, labels come from efficiency scores
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "0.55,0.7")]
    bins: String,
    /// Assignment artifact; when absent, all records form one cluster
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[command(flatten)]
    cv: CvArgs,
    #[command(flatten)]
    rm: RmArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "0.55,0.7")]
    bins: String,
    /// Record cluster count; skips automatic selection
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "average", value_parser = parse_linkage)]
    linkage: Linkage,
    #[arg(long, default_value_t = 0.03)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[command(flatten)]
    cv: CvArgs,
    #[command(flatten)]
    rm: RmArgs,
}

fn parse_linkage(s: &str) -> Result<Linkage, String> {
    s.parse().map_err(|e: modular_dea::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: modular_dea::Error| e.to_string())
}

fn parse_folds(s: &str) -> Result<usize, String> {
    let k: usize = s
        .parse()
        .map_err(|_| format!("`{s}` is not a fold count"))?;
    if k < 2 {
        return Err("cross validation needs at least 2 folds".into());
    }
    Ok(k)
}

fn output_path(cli: &Cli, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(default_name))
}

fn write<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json(path, value).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    let dataset = match a.kind {
        SynthKind::Mixture => {
            if a.labels_out.is_some() {
                bail!("--labels-out is only available with --kind piecewise");
            }
            generate_synthetic(a.n, a.m, a.s, &default_cluster_specs(a.m, a.s), cli.seed)?.dataset
        }
        SynthKind::Piecewise => {
            let p = generate_piecewise(a.n, a.m, a.s, cli.seed)?;
            if let Some(path) = &a.labels_out {
                let labels: Vec<LabelRow> = p
                    .dataset
                    .records()
                    .iter()
                    .zip(&p.labels)
                    .map(|(r, &c)| LabelRow {
                        id: r.id.clone(),
                        class: PerformanceClass::from_index(c).expect("class in 0..3"),
                    })
                    .collect();
                write(path, &labels)?;
            }
            p.dataset
        }
    };
    save_csv(&dataset, &a.out, Some(cli.seed))
        .with_context(|| format!("writing {}", a.out.display()))?;
    info!("wrote {} records to {}", dataset.n(), a.out.display());
    Ok(())
}

fn score(cli: &Cli, a: &ScoreArgs) -> anyhow::Result<()> {
    let bins = EfficiencyBins::parse(&a.bins)?;
    let d = a.input.load()?;
    let rows = score_rows(&d, &bins)?;
    write(&output_path(cli, &a.out, pipeline::SCORES_FILE), &rows)
}

fn cluster_vars(cli: &Cli, a: &ClusterVarsArgs) -> anyhow::Result<()> {
    let d = a.input.load()?;
    let report = varclus::analyze(&d, a.linkage, a.k)?;
    if let Some(warnings) = report.selection.as_ref().map(|s| &s.warnings) {
        for w in warnings {
            log::warn!("{w}");
        }
    }
    info!("chosen k = {}", report.chosen_k);
    write(&output_path(cli, &a.out, pipeline::VARCLUS_FILE), &report)?;
    if let Some(dot) = &a.dot {
        std::fs::write(dot, report.dendrogram.to_dot())
            .with_context(|| format!("writing {}", dot.display()))?;
    }
    Ok(())
}

fn cluster_records(cli: &Cli, a: &ClusterRecordsArgs) -> anyhow::Result<()> {
    let d = a.input.load()?;
    let (z, _) = normalize(&d)?;
    let cfg = SomConfig {
        k: a.k,
        initial_learning_rate: a.lr,
        epochs: a.epochs,
        initial_radius: None,
        seed: cli.seed,
    };
    let model = som::train(&z, &cfg)?;
    let labels = model.assign_all(&z)?;
    let artifact = AssignmentArtifact::new(&d, &model, &labels);
    info!("cluster sizes {:?}", artifact.sizes);
    write(
        &output_path(cli, &a.out, pipeline::ASSIGNMENTS_FILE),
        &artifact,
    )
}

fn train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let d = a.input.load()?;
    let labels: Vec<LabelRow> =
        read_json(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    let y = class_indices(&d, &labels)?;
    let clusters = match &a.clusters {
        Some(path) => {
            let art: AssignmentArtifact =
                read_json(path).with_context(|| format!("reading {}", path.display()))?;
            Some((art.clusters_for(&d)?, art.k()))
        }
        None => None,
    };
    let (z, _) = normalize(&d)?;
    let models = train_models(
        &z,
        &y,
        clusters.as_ref().map(|(c, k)| (c.as_slice(), *k)),
        &a.rm.config(),
    )?;
    write(&output_path(cli, &a.out, pipeline::MODELS_FILE), &models)
}

#[derive(Serialize)]
struct EvaluateConfigEcho<'a> {
    input: &'a Path,
    labels: Option<&'a Path>,
    clusters: Option<&'a Path>,
    bins: [f64; 2],
    rm: RmConfig,
    cv: CvConfig,
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    config: EvaluateConfigEcho<'a>,
    report: ModularReport,
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> anyhow::Result<()> {
    let bins = EfficiencyBins::parse(&a.bins)?;
    let rm = a.rm.config();
    rm.validate()?;
    let d = a.input.load()?;
    let labels = match &a.labels {
        Some(path) => read_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => label_rows(&score_rows(&d, &bins)?),
    };
    let y = class_indices(&d, &labels)?;
    let (clusters, k) = match &a.clusters {
        Some(path) => {
            let art: AssignmentArtifact =
                read_json(path).with_context(|| format!("reading {}", path.display()))?;
            (art.clusters_for(&d)?, art.k())
        }
        None => (vec![0; d.n()], 1),
    };
    let cv = CvConfig {
        folds: a.cv.folds,
        seed: cli.seed,
        stratified: !a.cv.unstratified,
        weighting: a.cv.weighting(),
        normalization: a.cv.scope(),
    };
    let (z, _) = normalize(&d)?;
    let report =
        compare_with_assignments(&z, &y, &PerformanceClass::labels(), &clusters, k, &rm, &cv)?;
    info!(
        "modular CA {:.4}, non-modular CA {:.4}",
        report.modular_ca, report.nonmodular_ca
    );
    let out = EvaluateOutput {
        config: EvaluateConfigEcho {
            input: &a.input.input,
            labels: a.labels.as_deref(),
            clusters: a.clusters.as_deref(),
            bins: bins.cuts(),
            rm,
            cv,
        },
        report,
    };
    write(&output_path(cli, &a.out, "evaluation.json"), &out)
}

fn run_pipeline(cli: &Cli, a: &PipelineArgs) -> anyhow::Result<()> {
    let bins = EfficiencyBins::parse(&a.bins)?;
    let mut cfg = PipelineConfig::new(&a.input.input, &cli.out_dir);
    cfg.inputs = a.input.inputs;
    cfg.bins = bins.cuts();
    cfg.k_override = a.k;
    cfg.linkage = a.linkage;
    cfg.som = SomSettings {
        learning_rate: a.lr,
        epochs: a.epochs,
        initial_radius: None,
    };
    cfg.rm = a.rm.config();
    cfg.folds = a.cv.folds;
    cfg.stratified = !a.cv.unstratified;
    cfg.weighting = a.cv.weighting();
    cfg.normalization = a.cv.scope();
    cfg.seed = cli.seed;
    cfg.timestamp = !cli.no_timestamp;
    let out = pipeline::run_pipeline(&cfg)?;
    println!(
        "k = {}, modular CA = {:.4}, non-modular CA = {:.4}; artifacts in {}",
        out.report.chosen_k,
        out.report.classification.modular_ca,
        out.report.classification.nonmodular_ca,
        cli.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Synth(a) => synth(&cli, a),
        Command::Score(a) => score(&cli, a),
        Command::ClusterVars(a) => cluster_vars(&cli, a),
        Command::ClusterRecords(a) => cluster_records(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::Evaluate(a) => evaluate(&cli, a),
        Command::Pipeline(a) => run_pipeline(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
