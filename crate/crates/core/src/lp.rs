//! Dense-tableau two-phase simplex.
//!
//! Problems are stated as
//!
//! ```text
//! min/max  c·x   s.t.  A_i·x (<= | >= | =) b_i,   x_j >= 0 unless flagged free
//! ```
//!
//! Free variables are split into a difference of two non-negative columns.
//! Phase one minimizes the sum of artificial variables; phase two optimizes
//! the original objective over the feasible basis phase one found.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest allowed constraint violation of an optimal point.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// A reduced cost below `-OPTIMALITY_TOL` is an improving direction.
pub const OPTIMALITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        };
        f.write_str(s)
    }
}

/// Entering-variable selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PivotRule {
    /// Lowest-index improving column and lowest-index leaving row; never cycles.
    #[default]
    Bland,
    /// Most negative reduced cost. Falls back to Bland after a run of degenerate pivots.
    Dantzig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value in the caller's sense; `NaN` unless optimal.
    pub objective: f64,
    /// One value per original variable; empty unless optimal.
    pub variable_values: Vec<f64>,
}

impl LpSolution {
    fn without_point(status: LpStatus) -> Self {
        LpSolution {
            status,
            objective: f64::NAN,
            variable_values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A linear program over `n` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub free: Vec<bool>,
    pub pivot_rule: PivotRule,
    pub max_iterations: usize,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            sense,
            objective,
            constraints: Vec::new(),
            free: vec![false; n],
            pivot_rule: PivotRule::Bland,
            max_iterations: 50_000,
        }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Minimize, objective)
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Maximize, objective)
    }

    pub fn constraint(mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    /// Lets variable `j` take negative values.
    pub fn free_variable(mut self, j: usize) -> Self {
        if j < self.free.len() {
            self.free[j] = true;
        }
        self
    }

    pub fn with_pivot_rule(mut self, rule: PivotRule) -> Self {
        self.pivot_rule = rule;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Largest violation of any constraint or sign bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            if !self.free[j] {
                worst = worst.max(-v);
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let gap = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.num_vars();
        if self.free.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.free.len(),
            });
        }
        for c in &self.constraints {
            if c.coeffs.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: c.coeffs.len(),
                });
            }
        }
        Ok(Simplex::build(self).run(self))
    }
}

/// Solves `sense c·x` subject to `A x (rel) b`, `x >= 0`.
pub fn solve_lp(
    sense: Sense,
    objective: &[f64],
    constraint_matrix: &[Vec<f64>],
    relations: &[Relation],
    rhs: &[f64],
) -> Result<LpSolution> {
    if constraint_matrix.len() != relations.len() {
        return Err(Error::DimensionMismatch {
            expected: constraint_matrix.len(),
            got: relations.len(),
        });
    }
    if constraint_matrix.len() != rhs.len() {
        return Err(Error::DimensionMismatch {
            expected: constraint_matrix.len(),
            got: rhs.len(),
        });
    }
    let mut lp = LinearProgram::new(sense, objective.to_vec());
    for ((row, &rel), &b) in constraint_matrix.iter().zip(relations).zip(rhs) {
        lp = lp.constraint(row.clone(), rel, b);
    }
    lp.solve()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Structural,
    Slack,
    Artificial,
}

/// Working tableau: `rows` constraint rows plus one objective row, each of
/// width `cols + 1` (last entry is the right-hand side).
struct Simplex {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<ColumnKind>,
    /// Structural column index -> (original variable, sign).
    structural: Vec<(usize, f64)>,
    active_row: Vec<bool>,
}

impl Simplex {
    fn build(lp: &LinearProgram) -> Self {
        let mut structural = Vec::new();
        for j in 0..lp.num_vars() {
            structural.push((j, 1.0));
            if lp.free[j] {
                structural.push((j, -1.0));
            }
        }
        let rows = lp.constraints.len();
        let mut kinds = vec![ColumnKind::Structural; structural.len()];

        // Orient every row so its right-hand side is non-negative.
        let oriented: Vec<(f64, Relation)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (-1.0, flipped)
                } else {
                    (1.0, c.relation)
                }
            })
            .collect();

        let mut slack_col = vec![None; rows];
        let mut art_col = vec![None; rows];
        for (i, &(_, rel)) in oriented.iter().enumerate() {
            if rel != Relation::Eq {
                slack_col[i] = Some(kinds.len());
                kinds.push(ColumnKind::Slack);
            }
        }
        for (i, &(_, rel)) in oriented.iter().enumerate() {
            if rel != Relation::Le {
                art_col[i] = Some(kinds.len());
                kinds.push(ColumnKind::Artificial);
            }
        }
        let cols = kinds.len();
        let width = cols + 1;
        let mut data = vec![0.0; (rows + 1) * width];
        let mut basis = vec![0; rows];
        for (i, c) in lp.constraints.iter().enumerate() {
            let (sign, rel) = oriented[i];
            let row = &mut data[i * width..(i + 1) * width];
            for (k, &(j, s)) in structural.iter().enumerate() {
                row[k] = sign * s * c.coeffs[j];
            }
            if let Some(sc) = slack_col[i] {
                row[sc] = if rel == Relation::Le { 1.0 } else { -1.0 };
            }
            if let Some(ac) = art_col[i] {
                row[ac] = 1.0;
            }
            row[cols] = sign * c.rhs;
            basis[i] = match (rel, slack_col[i], art_col[i]) {
                (Relation::Le, Some(sc), _) => sc,
                (_, _, Some(ac)) => ac,
                _ => unreachable!("every row has a slack or an artificial"),
            };
        }
        Simplex {
            rows,
            cols,
            data,
            basis,
            kinds,
            structural,
            active_row: vec![true; rows],
        }
    }

    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width() + j]
    }

    fn obj_row(&self) -> usize {
        self.rows
    }

    /// Loads `costs` (minimization) into the objective row in reduced form.
    fn set_objective(&mut self, costs: &[f64]) {
        let w = self.width();
        let z = self.obj_row();
        for j in 0..w {
            self.data[z * w + j] = if j < self.cols { costs[j] } else { 0.0 };
        }
        for i in 0..self.rows {
            if !self.active_row[i] {
                continue;
            }
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    self.data[z * w + j] -= cb * self.data[i * w + j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width();
        let p = self.data[r * w + c];
        for j in 0..w {
            self.data[r * w + j] /= p;
        }
        self.data[r * w + c] = 1.0;
        for i in 0..=self.rows {
            if i == r || (i < self.rows && !self.active_row[i]) {
                continue;
            }
            let f = self.data[i * w + c];
            if f != 0.0 {
                for j in 0..w {
                    self.data[i * w + j] -= f * self.data[r * w + j];
                }
                self.data[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn entering(&self, allowed: &dyn Fn(usize) -> bool, bland: bool) -> Option<usize> {
        let z = self.obj_row();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if !allowed(j) {
                continue;
            }
            let d = self.at(z, j);
            if d < -OPTIMALITY_TOL {
                if bland {
                    return Some(j);
                }
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn leaving(&self, c: usize) -> Option<usize> {
        let rhs = self.cols;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows {
            if !self.active_row[i] {
                continue;
            }
            let a = self.at(i, c);
            if a > PIVOT_TOL {
                let ratio = self.at(i, rhs).max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
        }
        best.map(|(i, _)| i)
    }

    /// Runs simplex iterations on the current objective row.
    /// Returns `Err(())` when the objective is unbounded below.
    fn iterate(
        &mut self,
        allowed: &dyn Fn(usize) -> bool,
        rule: PivotRule,
        max_iterations: usize,
    ) -> std::result::Result<(), ()> {
        let mut degenerate_run = 0usize;
        for _ in 0..max_iterations {
            let bland = rule == PivotRule::Bland || degenerate_run > 50;
            let Some(c) = self.entering(allowed, bland) else {
                return Ok(());
            };
            let Some(r) = self.leaving(c) else {
                return Err(());
            };
            if self.at(r, self.cols).abs() <= PIVOT_TOL {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        log::warn!("simplex hit the iteration limit ({max_iterations})");
        Ok(())
    }

    fn run(mut self, lp: &LinearProgram) -> LpSolution {
        let has_artificial = self.kinds.contains(&ColumnKind::Artificial);
        if has_artificial {
            let costs: Vec<f64> = self
                .kinds
                .iter()
                .map(|k| {
                    if *k == ColumnKind::Artificial {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            self.set_objective(&costs);
            let _ = self.iterate(&|_| true, lp.pivot_rule, lp.max_iterations);
            let infeasibility = -self.at(self.obj_row(), self.cols);
            if infeasibility > FEASIBILITY_TOL {
                return LpSolution::without_point(LpStatus::Infeasible);
            }
            self.drive_out_artificials();
        }

        let sign = match lp.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut costs = vec![0.0; self.cols];
        for (k, &(j, s)) in self.structural.iter().enumerate() {
            costs[k] = sign * s * lp.objective[j];
        }
        self.set_objective(&costs);
        let kinds = self.kinds.clone();
        let allowed = move |j: usize| kinds[j] != ColumnKind::Artificial;
        if self
            .iterate(&allowed, lp.pivot_rule, lp.max_iterations)
            .is_err()
        {
            return LpSolution::without_point(LpStatus::Unbounded);
        }

        let mut column_values = vec![0.0; self.cols];
        for i in 0..self.rows {
            if self.active_row[i] {
                column_values[self.basis[i]] = self.at(i, self.cols).max(0.0);
            }
        }
        let mut x = vec![0.0; lp.num_vars()];
        for (k, &(j, s)) in self.structural.iter().enumerate() {
            x[j] += s * column_values[k];
        }
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpSolution {
            status: LpStatus::Optimal,
            objective,
            variable_values: x,
        }
    }

    /// Pivots zero-level artificials out of the basis; rows where that is
    /// impossible are linearly dependent and get deactivated.
    fn drive_out_artificials(&mut self) {
        for i in 0..self.rows {
            if !self.active_row[i] || self.kinds[self.basis[i]] != ColumnKind::Artificial {
                continue;
            }
            let col = (0..self.cols)
                .find(|&j| self.kinds[j] != ColumnKind::Artificial && self.at(i, j).abs() > 1e-9);
            match col {
                Some(j) => self.pivot(i, j),
                None => self.active_row[i] = false,
            }
        }
    }
}
