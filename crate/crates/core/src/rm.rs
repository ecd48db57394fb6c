//! Reduced multivariate polynomial (RM) classifiers.
//!
//! A pattern `x ∈ R^l` is expanded into a regressor vector `p(x)` and each
//! class gets its own ridge regression onto a one-hot target; prediction is
//! the class with the largest score `α_cᵀ p(x)`.
//!
//! Term order (version 1), with `s = x_1 + … + x_l`:
//!
//! * **RM**: `1`; `x_1..x_l`, `x_1²..x_l²`, …, `x_1^r..x_l^r`; `s, s², …, s^r`;
//!   then for `j = 2..r` the block `x_1·s^(j-1) .. x_l·s^(j-1)`.
//!   `K = 1 + r + l(2r - 1)`.
//! * **RM′**: `1`; `x_1..x_l`; `s, …, s^r`; then the same `x·s^(j-1)` blocks.
//!   `K = 1 + r(l + 1)`.
//! * **FullMP**: every monomial of total degree `<= r`, graded by degree and
//!   lexicographically descending exponents within a degree
//!   (`1, x1, x2, x1², x1x2, x2², …`). `K = C(l + r, r)`.
//!
//! Both reduced expansions contain `s` alongside the linear terms, so their
//! design matrices are rank-deficient and need `b > 0`.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FULL_MP_TERM_LIMIT: usize = 10_000;
pub const TERM_ORDER_VERSION: u32 = 1;
pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "RM")]
    Rm,
    #[serde(rename = "RMprime")]
    RmPrime,
    #[serde(rename = "FullMP")]
    FullMp,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rm" => Ok(Variant::Rm),
            "rmprime" | "rm'" | "rm-prime" => Ok(Variant::RmPrime),
            "fullmp" | "mp" | "full" => Ok(Variant::FullMp),
            _ => Err(Error::InvalidConfig(format!("unknown RM variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmConfig {
    pub order: usize,
    pub ridge: f64,
    pub variant: Variant,
}

impl Default for RmConfig {
    fn default() -> Self {
        RmConfig {
            order: 2,
            ridge: DEFAULT_RIDGE,
            variant: Variant::Rm,
        }
    }
}

impl RmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidConfig("polynomial order must be >= 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge must be finite and >= 0, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Number of regressor terms for `l` inputs at order `r`.
pub fn term_count(variant: Variant, l: usize, r: usize) -> usize {
    match variant {
        Variant::Rm => 1 + r + l * (2 * r - 1),
        Variant::RmPrime => 1 + r * (l + 1),
        Variant::FullMp => binomial(l + r, r),
    }
}

/// Appends `x·s^(j-1)` for `j = 2..=r`.
fn push_weighted_blocks(out: &mut Vec<f64>, x: &[f64], s: f64, r: usize) {
    let mut sp = 1.0;
    for _ in 2..=r {
        sp *= s;
        out.extend(x.iter().map(|v| v * sp));
    }
}

fn push_sum_powers(out: &mut Vec<f64>, s: f64, r: usize) {
    let mut sp = 1.0;
    for _ in 1..=r {
        sp *= s;
        out.push(sp);
    }
}

pub fn expand_rm(x: &[f64], r: usize) -> Vec<f64> {
    let l = x.len();
    let s: f64 = x.iter().sum();
    let mut out = Vec::with_capacity(term_count(Variant::Rm, l, r));
    out.push(1.0);
    let mut powers = x.to_vec();
    for k in 1..=r {
        if k > 1 {
            powers.iter_mut().zip(x).for_each(|(p, v)| *p *= v);
        }
        out.extend_from_slice(&powers);
    }
    push_sum_powers(&mut out, s, r);
    push_weighted_blocks(&mut out, x, s, r);
    out
}

pub fn expand_rm_prime(x: &[f64], r: usize) -> Vec<f64> {
    let l = x.len();
    let s: f64 = x.iter().sum();
    let mut out = Vec::with_capacity(term_count(Variant::RmPrime, l, r));
    out.push(1.0);
    out.extend_from_slice(x);
    push_sum_powers(&mut out, s, r);
    push_weighted_blocks(&mut out, x, s, r);
    out
}

/// Exponent vectors of all monomials of degree `<= r` in graded-lex order.
pub fn full_mp_exponents(l: usize, r: usize) -> Vec<Vec<usize>> {
    fn fill(prefix: &mut Vec<usize>, left: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(prefix, left - 1, remaining - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if l == 0 {
        out.push(Vec::new());
        return out;
    }
    for degree in 0..=r {
        fill(&mut Vec::with_capacity(l), l, degree, &mut out);
    }
    out
}

pub fn expand_full_mp(x: &[f64], r: usize) -> Result<Vec<f64>> {
    let terms = term_count(Variant::FullMp, x.len(), r);
    if terms > FULL_MP_TERM_LIMIT {
        return Err(Error::TooManyTerms {
            terms,
            limit: FULL_MP_TERM_LIMIT,
        });
    }
    Ok(full_mp_exponents(x.len(), r)
        .iter()
        .map(|exps| {
            exps.iter()
                .zip(x)
                .map(|(&e, &v)| v.powi(e as i32))
                .product()
        })
        .collect())
}

pub fn expand(variant: Variant, x: &[f64], r: usize) -> Result<Vec<f64>> {
    match variant {
        Variant::Rm => Ok(expand_rm(x, r)),
        Variant::RmPrime => Ok(expand_rm_prime(x, r)),
        Variant::FullMp => expand_full_mp(x, r),
    }
}

/// `n × K` regressor matrix, one expanded row per pattern.
pub fn design_matrix(x: &DMatrix<f64>, cfg: &RmConfig) -> Result<DMatrix<f64>> {
    let k = term_count(cfg.variant, x.ncols(), cfg.order);
    if cfg.variant == Variant::FullMp && k > FULL_MP_TERM_LIMIT {
        return Err(Error::TooManyTerms {
            terms: k,
            limit: FULL_MP_TERM_LIMIT,
        });
    }
    let mut p = DMatrix::zeros(x.nrows(), k);
    let mut row = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        row.iter_mut().enumerate().for_each(|(j, v)| *v = x[(i, j)]);
        let terms = expand(cfg.variant, &row, cfg.order)?;
        for (j, t) in terms.into_iter().enumerate() {
            p[(i, j)] = t;
        }
    }
    Ok(p)
}

/// Solves `(PᵀP + bI) α = Pᵀy` for every column of `y`.
pub fn ridge_solve(p: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if p.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: p.nrows(),
            got: y.nrows(),
        });
    }
    let k = p.ncols();
    if ridge > 0.0 {
        let mut gram = p.tr_mul(p);
        for i in 0..k {
            gram[(i, i)] += ridge;
        }
        let rhs = p.tr_mul(y);
        if let Some(chol) = gram.clone().cholesky() {
            return Ok(chol.solve(&rhs));
        }
        // Loss of definiteness to rounding: fall back to an SVD solve.
        let svd = SVD::new(gram, true, true);
        return svd.solve(&rhs, 0.0).map_err(|_| Error::SingularSystem);
    }
    if p.nrows() < k {
        return Err(Error::SingularSystem);
    }
    let svd = SVD::new(p.clone(), true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * k.max(p.nrows()) as f64;
    if smax == 0.0 || svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::SingularSystem);
    }
    svd.solve(y, tol).map_err(|_| Error::SingularSystem)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmModel {
    /// `K × C` coefficients, one column per class.
    pub alpha: DMatrix<f64>,
    pub config: RmConfig,
    pub l: usize,
    pub class_labels: Vec<String>,
}

/// Fits one ridge regression per one-hot target column of `y` (`n × C`).
pub fn fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &RmConfig,
    class_labels: Vec<String>,
) -> Result<RmModel> {
    cfg.validate()?;
    if x.nrows() < 1 {
        return Err(Error::TooFewRecords { needed: 1, got: 0 });
    }
    if y.ncols() < 2 {
        return Err(Error::InvalidConfig(
            "a classifier needs at least two classes".into(),
        ));
    }
    if class_labels.len() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: y.ncols(),
            got: class_labels.len(),
        });
    }
    let p = design_matrix(x, cfg)?;
    let alpha = ridge_solve(&p, y, cfg.ridge)?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(RmModel {
        alpha,
        config: *cfg,
        l: x.ncols(),
        class_labels,
    })
}

/// One-hot `n × C` target matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(labels.len(), classes);
    for (i, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: classes,
            });
        }
        y[(i, c)] = 1.0;
    }
    Ok(y)
}

/// Fits from integer class labels in `0..class_labels.len()`.
pub fn fit_labels(
    x: &DMatrix<f64>,
    labels: &[usize],
    class_labels: Vec<String>,
    cfg: &RmConfig,
) -> Result<RmModel> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let y = one_hot(labels, class_labels.len())?;
    fit(x, &y, cfg, class_labels)
}

impl RmModel {
    pub fn terms(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn classes(&self) -> usize {
        self.alpha.ncols()
    }

    /// Class scores `α_cᵀ p(x)`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.l {
            return Err(Error::DimensionMismatch {
                expected: self.l,
                got: x.len(),
            });
        }
        let p = expand(self.config.variant, x, self.config.order)?;
        Ok((0..self.classes())
            .map(|c| {
                p.iter()
                    .enumerate()
                    .map(|(k, v)| v * self.alpha[(k, c)])
                    .sum()
            })
            .collect())
    }

    /// Winner-take-all class index; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let scores = self.scores(x)?;
        Ok(argmax(&scores))
    }

    pub fn predict_all(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                row.iter_mut().enumerate().for_each(|(j, v)| *v = x[(i, j)]);
                self.predict(&row)
            })
            .collect()
    }

    pub fn to_file(&self) -> RmModelFile {
        let mut alpha = Vec::with_capacity(self.alpha.len());
        for k in 0..self.terms() {
            for c in 0..self.classes() {
                alpha.push(self.alpha[(k, c)]);
            }
        }
        RmModelFile {
            variant: self.config.variant,
            r: self.config.order,
            b: self.config.ridge,
            l: self.l,
            class_labels: self.class_labels.clone(),
            alpha,
            term_order_version: TERM_ORDER_VERSION,
        }
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

/// Portable JSON form; `alpha` is row-major `K × C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmModelFile {
    pub variant: Variant,
    pub r: usize,
    pub b: f64,
    pub l: usize,
    pub class_labels: Vec<String>,
    pub alpha: Vec<f64>,
    pub term_order_version: u32,
}

impl TryFrom<RmModelFile> for RmModel {
    type Error = Error;

    fn try_from(f: RmModelFile) -> Result<Self> {
        if f.term_order_version != TERM_ORDER_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported term order version {}",
                f.term_order_version
            )));
        }
        let k = term_count(f.variant, f.l, f.r);
        let c = f.class_labels.len();
        if f.alpha.len() != k * c {
            return Err(Error::DimensionMismatch {
                expected: k * c,
                got: f.alpha.len(),
            });
        }
        Ok(RmModel {
            alpha: DMatrix::from_row_slice(k, c, &f.alpha),
            config: RmConfig {
                order: f.r,
                ridge: f.b,
                variant: f.variant,
            },
            l: f.l,
            class_labels: f.class_labels,
        })
    }
}
