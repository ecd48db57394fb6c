//! DMU tables: loading, validation, z-score normalization and seeded
//! synthetic generation.
//!
//! Feature order everywhere in the crate is `inputs ++ outputs`, matching
//! the column order of the CSV file.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest value an input may take after synthetic clamping.
const MIN_SYNTHETIC_INPUT: f64 = 1e-3;

/// One decision-making unit: `m` consumed inputs and `s` produced outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub id: String,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// A validated table of DMUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    input_names: Vec<String>,
    output_names: Vec<String>,
    records: Vec<BranchRecord>,
}

impl Dataset {
    /// Builds a dataset, checking every record invariant.
    pub fn new(
        input_names: Vec<String>,
        output_names: Vec<String>,
        records: Vec<BranchRecord>,
    ) -> Result<Self> {
        if input_names.is_empty() || output_names.is_empty() {
            return Err(Error::InvalidConfig(
                "a dataset needs at least one input and one output".into(),
            ));
        }
        if records.is_empty() {
            return Err(Error::TooFewRows { needed: 1, got: 0 });
        }
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &records {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
            if rec.inputs.len() != input_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: input_names.len(),
                    got: rec.inputs.len(),
                });
            }
            if rec.outputs.len() != output_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: output_names.len(),
                    got: rec.outputs.len(),
                });
            }
            for (name, &v) in input_names.iter().zip(&rec.inputs) {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositiveInput {
                        id: rec.id.clone(),
                        column: name.clone(),
                        value: v,
                    });
                }
            }
            for (name, &v) in output_names.iter().zip(&rec.outputs) {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidOutput {
                        id: rec.id.clone(),
                        reason: format!("`{name}` = {v} is negative or not finite"),
                    });
                }
            }
            if rec.outputs.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidOutput {
                    id: rec.id.clone(),
                    reason: "all outputs are zero".into(),
                });
            }
        }
        Ok(Dataset {
            input_names,
            output_names,
            records,
        })
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn records(&self) -> &[BranchRecord] {
        &self.records
    }

    /// Number of DMUs.
    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of inputs.
    pub fn m(&self) -> usize {
        self.input_names.len()
    }

    /// Number of outputs.
    pub fn s(&self) -> usize {
        self.output_names.len()
    }

    /// Input names followed by output names.
    pub fn feature_names(&self) -> Vec<String> {
        self.input_names
            .iter()
            .chain(&self.output_names)
            .cloned()
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Raw `n × (m+s)` feature matrix.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        let d = self.m() + self.s();
        DMatrix::from_fn(self.n(), d, |i, j| {
            let rec = &self.records[i];
            if j < rec.inputs.len() {
                rec.inputs[j]
            } else {
                rec.outputs[j - rec.inputs.len()]
            }
        })
    }

    /// Returns a copy with rows in the given order.
    pub fn permuted(&self, order: &[usize]) -> Result<Dataset> {
        let records = order
            .iter()
            .map(|&i| {
                self.records.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: self.n(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.input_names.clone(), self.output_names.clone(), records)
    }

    /// Returns a copy with one feature column (inputs first) multiplied by `factor`.
    pub fn scaled_column(&self, column: usize, factor: f64) -> Result<Dataset> {
        let m = self.m();
        if column >= m + self.s() {
            return Err(Error::IndexOutOfRange {
                index: column,
                len: m + self.s(),
            });
        }
        let mut records = self.records.clone();
        for rec in &mut records {
            if column < m {
                rec.inputs[column] *= factor;
            } else {
                rec.outputs[column - m] *= factor;
            }
        }
        Dataset::new(self.input_names.clone(), self.output_names.clone(), records)
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header directives found in `#` comment lines before the header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvDirectives {
    pub inputs: Option<usize>,
    pub seed: Option<u64>,
}

fn parse_directive(line: &str, out: &mut CsvDirectives) -> Result<()> {
    let body = line.trim_start_matches('#').trim();
    let Some((key, value)) = body.split_once('=') else {
        return Ok(());
    };
    let value = value.trim();
    match key.trim() {
        "inputs" => {
            let m = value.parse().map_err(|_| Error::MalformedRow {
                line: 0,
                reason: format!("bad `#inputs=` directive `{value}`"),
            })?;
            out.inputs = Some(m);
        }
        "seed" => {
            out.seed = value.parse().ok();
        }
        _ => {}
    }
    Ok(())
}

/// Loads a dataset from a CSV file. `inputs` overrides any `#inputs=` directive.
pub fn load_csv(path: impl AsRef<Path>, inputs: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, inputs).map(|(d, _)| d)
}

/// Parses CSV text. Returns the dataset along with the directives that were present.
pub fn parse_csv(text: &str, inputs: Option<usize>) -> Result<(Dataset, CsvDirectives)> {
    let mut directives = CsvDirectives::default();
    let mut body_start = 0;
    let mut skipped_lines = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            parse_directive(trimmed, &mut directives)?;
        } else if !trimmed.is_empty() {
            break;
        }
        body_start += line.len();
        skipped_lines += 1;
    }
    let m = inputs.or(directives.inputs).ok_or(Error::MissingSplit)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(&text.as_bytes()[body_start..]);
    let header = reader.headers()?.clone();
    if header.len() < m + 2 {
        return Err(Error::MalformedRow {
            line: skipped_lines + 1,
            reason: format!(
                "header has {} columns; need id, {m} inputs and at least one output",
                header.len()
            ),
        });
    }
    let input_names: Vec<String> = header.iter().skip(1).take(m).map(str::to_owned).collect();
    let output_names: Vec<String> = header.iter().skip(1 + m).map(str::to_owned).collect();
    let width = header.len();

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = skipped_lines + row.position().map_or(0, |p| p.line() as usize);
        if row.len() != width {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {width} fields, found {}", row.len()),
            });
        }
        let mut values = Vec::with_capacity(width - 1);
        for (col, field) in row.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("column `{}` is not numeric: `{field}`", &header[col]),
            })?;
            values.push(v);
        }
        let outputs = values.split_off(m);
        records.push(BranchRecord {
            id: row[0].to_owned(),
            inputs: values,
            outputs,
        });
    }
    let dataset = Dataset::new(input_names, output_names, records)?;
    Ok((dataset, directives))
}

/// Writes the dataset in the same dialect `load_csv` reads.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W, seed: Option<u64>) -> Result<()> {
    if let Some(seed) = seed {
        writeln!(out, "# seed={seed}")?;
    }
    writeln!(out, "#inputs={}", dataset.m())?;
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_owned()];
    header.extend(dataset.feature_names());
    writer.write_record(&header)?;
    for rec in dataset.records() {
        let mut row = Vec::with_capacity(header.len());
        row.push(rec.id.clone());
        row.extend(rec.inputs.iter().chain(&rec.outputs).map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Convenience wrapper writing to a file path.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>, seed: Option<u64>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file), seed)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub means: Vec<f64>,
    /// Sample standard deviations; constant columns store 1.
    pub stddevs: Vec<f64>,
}

impl NormalizationStats {
    /// Estimates means and sample standard deviations from the given rows of `x`.
    pub fn fit_rows(x: &DMatrix<f64>, rows: &[usize]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, got: n });
        }
        let d = x.ncols();
        let mut means = vec![0.0; d];
        let mut stddevs = vec![1.0; d];
        for j in 0..d {
            let mean = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n as f64;
            let ss: f64 = rows.iter().map(|&i| (x[(i, j)] - mean).powi(2)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            means[j] = mean;
            if sd > 1e-12 * (1.0 + mean.abs()) {
                stddevs[j] = sd;
            } else {
                log::warn!("feature column {j} is constant; centered with divisor 1");
            }
        }
        Ok(NormalizationStats { means, stddevs })
    }

    /// Estimates statistics from every row of `x`.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Self::fit_rows(x, &rows)
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.stddevs[j]
        }))
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_width(row.len())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.means[j]) / self.stddevs[j])
            .collect())
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(z.ncols())?;
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.stddevs[j] + self.means[j]
        }))
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got,
            });
        }
        Ok(())
    }
}

/// Z-scores every feature column of the dataset.
pub fn normalize(d: &Dataset) -> Result<(DMatrix<f64>, NormalizationStats)> {
    normalize_matrix(&d.feature_matrix())
}

pub fn normalize_matrix(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, NormalizationStats)> {
    let stats = NormalizationStats::fit(x)?;
    let z = stats.apply(x)?;
    Ok((z, stats))
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// One mixture component for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Mean of every feature (`m + s` values, inputs first).
    pub center: Vec<f64>,
    /// Standard deviation of the isotropic noise around `center`.
    pub spread: f64,
    /// Share of the records drawn from this component.
    pub proportion: f64,
}

/// A generated dataset together with the component each record came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub ground_truth: Vec<usize>,
    pub seed: u64,
}

/// Splits `n` into integer counts proportional to `proportions` (largest remainder).
pub fn apportion(n: usize, proportions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(raw.len() * 2) {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

fn default_names(prefix: char, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn record_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("B{:0width$}", i + 1)
}

/// Draws a Gaussian-mixture dataset. Inputs are clamped strictly positive,
/// outputs to `>= 0` with at least one positive output per record.
pub fn generate_synthetic(
    n: usize,
    m: usize,
    s: usize,
    clusters: &[ClusterSpec],
    seed: u64,
) -> Result<SyntheticDataset> {
    let total: f64 = clusters.iter().map(|c| c.proportion).sum();
    if clusters.is_empty()
        || (total - 1.0).abs() > 1e-9
        || clusters.iter().any(|c| !(c.proportion >= 0.0))
    {
        return Err(Error::BadProportions(total));
    }
    if let Some(c) = clusters.iter().find(|c| !(c.spread > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "cluster spread must be positive, got {}",
            c.spread
        )));
    }
    if let Some(c) = clusters.iter().find(|c| c.center.len() != m + s) {
        return Err(Error::DimensionMismatch {
            expected: m + s,
            got: c.center.len(),
        });
    }
    if n == 0 || m == 0 || s == 0 {
        return Err(Error::InvalidConfig(
            "n, m and s must all be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = apportion(
        n,
        &clusters.iter().map(|c| c.proportion).collect::<Vec<_>>(),
    );
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n);
    for (i, &c) in labels.iter().enumerate() {
        let spec = &clusters[c];
        let mut values: Vec<f64> = spec
            .center
            .iter()
            .map(|&mu| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + spec.spread * z
            })
            .collect();
        let mut outputs = values.split_off(m);
        for v in &mut values {
            *v = v.max(MIN_SYNTHETIC_INPUT);
        }
        for v in &mut outputs {
            *v = v.max(0.0);
        }
        if outputs.iter().all(|&v| v == 0.0) {
            outputs[0] = MIN_SYNTHETIC_INPUT;
        }
        records.push(BranchRecord {
            id: record_id(i, n),
            inputs: values,
            outputs,
        });
    }
    let dataset = Dataset::new(default_names('I', m), default_names('O', s), records)?;
    Ok(SyntheticDataset {
        dataset,
        ground_truth: labels,
        seed,
    })
}

/// Record counts per cluster used as default fixture proportions (589 branches).
pub const REFERENCE_CLUSTER_SIZES: [usize; 3] = [227, 241, 121];

/// Three-component mixture with the reference 227/241/121 split, for `m` inputs and `s` outputs.
///
/// Components differ in scale and in output/input productivity so that the
/// efficiency scores spread across the whole [0, 1] range.
pub fn default_cluster_specs(m: usize, s: usize) -> Vec<ClusterSpec> {
    let total: usize = REFERENCE_CLUSTER_SIZES.iter().sum();
    let shapes = [(40.0, 1.0), (70.0, 1.35), (110.0, 0.8)];
    REFERENCE_CLUSTER_SIZES
        .iter()
        .zip(shapes)
        .map(|(&size, (scale, productivity))| {
            let mut center = Vec::with_capacity(m + s);
            center.extend((0..m).map(|i| scale * (1.0 + 0.15 * i as f64)));
            center.extend((0..s).map(|r| scale * productivity * (1.0 - 0.1 * r as f64)));
            ClusterSpec {
                center,
                spread: 0.18 * scale,
                proportion: size as f64 / total as f64,
            }
        })
        .collect()
}

/// Draws records whose feature columns form correlated blocks.
///
/// Every feature is `base + scale * v` where `v` is a unit-variance mix of a
/// global factor (loading `sqrt(cross_corr)`), its block factor and private
/// noise, so features in the same block correlate at `within_corr` and
/// features in different blocks at `cross_corr`.
pub fn generate_block_correlated(
    n: usize,
    input_names: Vec<String>,
    output_names: Vec<String>,
    blocks: &[Vec<usize>],
    within_corr: f64,
    cross_corr: f64,
    seed: u64,
) -> Result<Dataset> {
    let d = input_names.len() + output_names.len();
    if !(0.0..=1.0).contains(&cross_corr) || !(cross_corr..=1.0).contains(&within_corr) {
        return Err(Error::InvalidConfig(
            "need 0 <= cross_corr <= within_corr <= 1".into(),
        ));
    }
    let mut block_of = vec![None; d];
    for (b, members) in blocks.iter().enumerate() {
        for &f in members {
            if f >= d {
                return Err(Error::IndexOutOfRange { index: f, len: d });
            }
            block_of[f] = Some(b);
        }
    }
    let global = cross_corr.sqrt();
    let shared = (within_corr - cross_corr).sqrt();
    let private = (1.0 - within_corr).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = input_names.len();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let g: f64 = StandardNormal.sample(&mut rng);
        let factors: Vec<f64> = (0..blocks.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut values: Vec<f64> = (0..d)
            .map(|f| {
                let e: f64 = StandardNormal.sample(&mut rng);
                let v = match block_of[f] {
                    Some(b) => global * g + shared * factors[b] + private * e,
                    None => e,
                };
                (20.0 + 2.0 * v).max(MIN_SYNTHETIC_INPUT)
            })
            .collect();
        let outputs = values.split_off(m);
        records.push(BranchRecord {
            id: record_id(i, n),
            inputs: values,
            outputs,
        });
    }
    Dataset::new(input_names, output_names, records)
}

/// Records in well-separated groups whose class follows a different local
/// rule in each group.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDataset {
    pub dataset: Dataset,
    /// Group each record was drawn from.
    pub groups: Vec<usize>,
    /// Class in `0..3` given by the group's local rule.
    pub labels: Vec<usize>,
}

/// Three groups with the reference 227/241/121 proportions, separated by
/// 12 standard deviations along every feature. Inside group `g` the class is
/// the tertile band of a group-specific projection of the deviation from the
/// group center: `+f0` in group 0, `-f0` in group 1 and `f1 - f0` in group 2.
/// A single low-order model cannot follow all three rules at once.
pub fn generate_piecewise(n: usize, m: usize, s: usize, seed: u64) -> Result<PiecewiseDataset> {
    let d = m + s;
    if n == 0 || m == 0 || s == 0 || d < 2 {
        return Err(Error::InvalidConfig(
            "need n, m, s >= 1 and at least two features".into(),
        ));
    }
    const SPREAD: f64 = 1.0;
    const BAND: f64 = 0.4307;
    let total: usize = REFERENCE_CLUSTER_SIZES.iter().sum();
    let proportions: Vec<f64> = REFERENCE_CLUSTER_SIZES
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    let counts = apportion(n, &proportions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(g, &k)| std::iter::repeat_n(g, k))
        .collect();
    groups.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, &g) in groups.iter().enumerate() {
        let center = 20.0 + 12.0 * SPREAD * g as f64;
        let dev: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = match g {
            0 => dev[0],
            1 => -dev[0],
            _ => (dev[1] - dev[0]) / std::f64::consts::SQRT_2,
        };
        labels.push(if t < -BAND {
            0
        } else if t < BAND {
            1
        } else {
            2
        });
        let mut values: Vec<f64> = dev.iter().map(|e| center + SPREAD * e).collect();
        let outputs = values.split_off(m);
        records.push(BranchRecord {
            id: record_id(i, n),
            inputs: values,
            outputs,
        });
    }
    let dataset = Dataset::new(default_names('I', m), default_names('O', s), records)?;
    Ok(PiecewiseDataset {
        dataset,
        groups,
        labels,
    })
}
