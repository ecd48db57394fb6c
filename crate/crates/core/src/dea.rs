//! Input-oriented CCR efficiency and performance banding.
//!
//! For the evaluated DMU `o` the envelopment LP is
//!
//! ```text
//! min θ  s.t.  Σ_k λ_k x_ik <= θ x_io   (each input i)
//!              Σ_k λ_k y_rk >= y_ro     (each output r)
//!              λ >= 0, θ >= 0
//! ```
//!
//! Each row is divided by the evaluated unit's own value before solving, so
//! rescaling a column of the dataset leaves the tableau unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpStatus, Relation};

/// θ at or above `1 - EFFICIENCY_TOL` counts as efficient.
pub const EFFICIENCY_TOL: f64 = 1e-6;
/// Intensity weights above this value put a DMU in the reference set.
pub const LAMBDA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyScore {
    pub dmu_id: String,
    pub theta: f64,
    pub lambdas: Vec<f64>,
    pub reference_set: Vec<String>,
    pub is_efficient: bool,
}

/// Solves the CCR envelopment LP for DMU `j` on raw (un-normalized) values.
pub fn ccr_input_efficiency(d: &Dataset, j: usize) -> Result<EfficiencyScore> {
    let n = d.n();
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, len: n });
    }
    let records = d.records();
    let target = &records[j];

    let mut objective = vec![0.0; n + 1];
    objective[0] = 1.0;
    let mut lp = LinearProgram::minimize(objective);
    for i in 0..d.m() {
        let own = target.inputs[i];
        let mut row = Vec::with_capacity(n + 1);
        row.push(-1.0);
        row.extend(records.iter().map(|r| r.inputs[i] / own));
        lp = lp.constraint(row, Relation::Le, 0.0);
    }
    for r in 0..d.s() {
        let own = target.outputs[r];
        let (scale, rhs) = if own > 0.0 {
            (own, 1.0)
        } else {
            let max = records.iter().map(|rec| rec.outputs[r]).fold(0.0, f64::max);
            (if max > 0.0 { max } else { 1.0 }, 0.0)
        };
        let mut row = Vec::with_capacity(n + 1);
        row.push(0.0);
        row.extend(records.iter().map(|rec| rec.outputs[r] / scale));
        lp = lp.constraint(row, Relation::Ge, rhs);
    }

    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver {
            dmu: target.id.clone(),
            status: sol.status.to_string(),
        });
    }
    let theta = sol.variable_values[0];
    let lambdas: Vec<f64> = sol.variable_values[1..].to_vec();
    let reference_set = lambdas
        .iter()
        .zip(records)
        .filter(|(&l, _)| l > LAMBDA_TOL)
        .map(|(_, rec)| rec.id.clone())
        .collect();
    Ok(EfficiencyScore {
        dmu_id: target.id.clone(),
        theta,
        lambdas,
        reference_set,
        is_efficient: theta >= 1.0 - EFFICIENCY_TOL,
    })
}

/// Scores every DMU; order follows the dataset. LPs are solved in parallel.
pub fn evaluate_all(d: &Dataset) -> Result<Vec<EfficiencyScore>> {
    (0..d.n())
        .into_par_iter()
        .map(|j| ccr_input_efficiency(d, j))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerformanceClass {
    Weak,
    Average,
    High,
}

impl PerformanceClass {
    pub const ALL: [PerformanceClass; 3] = [
        PerformanceClass::Weak,
        PerformanceClass::Average,
        PerformanceClass::High,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PerformanceClass::Weak => "Weak",
            PerformanceClass::Average => "Average",
            PerformanceClass::High => "High",
        }
    }

    pub fn labels() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_owned()).collect()
    }
}

impl std::str::FromStr for PerformanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" => Ok(PerformanceClass::Weak),
            "average" => Ok(PerformanceClass::Average),
            "high" => Ok(PerformanceClass::High),
            _ => Err(Error::InvalidConfig(format!(
                "unknown performance class `{s}`"
            ))),
        }
    }
}

/// Interior cut points splitting [0, 1] into `[0,a)`, `[a,b)`, `[b,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBins {
    cuts: [f64; 2],
}

impl Default for EfficiencyBins {
    fn default() -> Self {
        EfficiencyBins { cuts: [0.55, 0.7] }
    }
}

impl EfficiencyBins {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0 < low && low < high && high < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "bin cut points must satisfy 0 < {low} < {high} < 1"
            )));
        }
        Ok(EfficiencyBins { cuts: [low, high] })
    }

    /// Parses `"0.55,0.7"`.
    pub fn parse(text: &str) -> Result<Self> {
        let cuts = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad cut point `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        match cuts.as_slice() {
            [a, b] => Self::new(*a, *b),
            _ => Err(Error::InvalidConfig(format!(
                "expected two cut points, got {}",
                cuts.len()
            ))),
        }
    }

    pub fn cuts(&self) -> [f64; 2] {
        self.cuts
    }

    /// The three intervals as `(lower, upper)`; all right-open except the last.
    pub fn intervals(&self) -> [(f64, f64); 3] {
        [
            (0.0, self.cuts[0]),
            (self.cuts[0], self.cuts[1]),
            (self.cuts[1], 1.0),
        ]
    }
}

/// Maps θ to its band. A cut point belongs to the band on its right; 1 belongs to the last band.
/// Values up to `1 + 1e-9` are accepted as 1.
pub fn assign_class(theta: f64, bins: &EfficiencyBins) -> Result<PerformanceClass> {
    if !(0.0..=1.0 + 1e-9).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    let [a, b] = bins.cuts;
    Ok(if theta < a {
        PerformanceClass::Weak
    } else if theta < b {
        PerformanceClass::Average
    } else {
        PerformanceClass::High
    })
}
