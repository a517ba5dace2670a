//! The JSON run report. Matrices and reals are written with 17 significant
//! digits, so every double reads back bit-exactly.

use nalgebra::DMatrix;
use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use super::config::{Mode, RawConfig};

fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn raw<S: Serializer>(text: String, s: S) -> Result<S::Ok, S::Error> {
    RawValue::from_string(text).map_err(S::Error::custom)?.serialize(s)
}

pub(crate) fn real<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw(fmt_real(*x), s)
}

/// Row-major nested arrays.
pub(crate) fn matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|&x| fmt_real(x)).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    raw(format!("[{}]", rows.join(", ")), s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSection {
    #[serde(serialize_with = "matrix")]
    pub p: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub k1: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub k2: DMatrix<f64>,
    pub iterations: usize,
    #[serde(serialize_with = "real")]
    pub riccati_residual: f64,
    #[serde(serialize_with = "matrix")]
    pub pv: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub m: DMatrix<f64>,
    /// Follower's best-response gain to the incentive policy.
    #[serde(serialize_with = "matrix")]
    pub best_response_k2: DMatrix<f64>,
    #[serde(serialize_with = "real")]
    pub alignment_error: f64,
    pub aligned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnSection {
    pub samples: usize,
    #[serde(serialize_with = "matrix")]
    pub h: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub k1: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub k2: DMatrix<f64>,
    pub iterations: usize,
    #[serde(serialize_with = "matrix")]
    pub h_v: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub m: DMatrix<f64>,
    pub incentive_iterations: usize,
    /// `||K_learned - K|| / ||K||` against the model-based gains.
    #[serde(serialize_with = "real")]
    pub k1_rel_err: f64,
    #[serde(serialize_with = "real")]
    pub k2_rel_err: f64,
    /// `||M_learned - M|| / (1 + ||M||)`.
    #[serde(serialize_with = "real")]
    pub m_rel_err: f64,
    pub convergence_log: String,
    pub incentive_convergence_log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSection {
    pub horizon: usize,
    /// `x0' P x0`, the minimum leader cost.
    #[serde(serialize_with = "real")]
    pub j1_optimal: f64,
    #[serde(serialize_with = "real")]
    pub j1_team: f64,
    /// Leader cost when the follower best-responds to the plain team gain `K1`.
    #[serde(serialize_with = "real")]
    pub j1_attacked: f64,
    /// Leader cost when the follower best-responds to the incentive policy.
    #[serde(serialize_with = "real")]
    pub j1_incentive: f64,
    #[serde(serialize_with = "matrix")]
    pub attacked_follower_gain: DMatrix<f64>,
    #[serde(serialize_with = "matrix")]
    pub incentive_follower_gain: DMatrix<f64>,
    pub trajectories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSection {
    #[serde(serialize_with = "real")]
    pub k1_rel_err: f64,
    #[serde(serialize_with = "real")]
    pub k2_rel_err: f64,
    #[serde(serialize_with = "real")]
    pub m_rel_err: f64,
    /// Learned-policy minus model-policy leader cost under incentive play.
    #[serde(serialize_with = "real")]
    pub j1_incentive_gap: f64,
    #[serde(serialize_with = "real")]
    pub j1_attacked_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    /// The scenario after command-line overrides; running it again reproduces the report.
    pub config: RawConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learn: Option<LearnSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    /// Rollouts under the learned gains and incentive matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate_learned: Option<SimulateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
