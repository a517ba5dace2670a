//! Model-free Q-learning for the team-optimal gains and the incentive matrix.
//!
//! The learner only sees `(x, u, v, x+)` tuples. Each policy-evaluation step fits
//! the parameters of a quadratic action-value function `z'Hz`, `z = (x, u, v)`,
//! by batch least squares against the one-step Bellman target.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::game::{CostWeights, Dims, GainPair};
use crate::linalg;
use crate::model_based;
use crate::plant::{self, Environment};

/// Symmetric action-value matrix over the stacked vector `(x, u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    h: DMatrix<f64>,
    dims: Dims,
}

/// One of the three coordinate groups of `z = (x, u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    X,
    U,
    V,
}

impl QMatrix {
    pub fn new(h: DMatrix<f64>, dims: Dims) -> Result<Self> {
        let l = dims.l();
        if h.shape() != (l, l) {
            return Err(dim_mismatch("H", format!("{l}x{l}"), format!("{}x{}", h.nrows(), h.ncols())));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("H".into()));
        }
        if linalg::asymmetry(&h) > 1e-10 * h.amax().max(1.0) {
            return Err(Error::NotSymmetric("H".into()));
        }
        Ok(Self {
            h: linalg::symmetrize(&h),
            dims,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            h: DMatrix::zeros(dims.l(), dims.l()),
            dims,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn range(&self, b: Block) -> (usize, usize) {
        let d = self.dims;
        match b {
            Block::X => (0, d.n),
            Block::U => (d.n, d.m1),
            Block::V => (d.n + d.m1, d.m2),
        }
    }

    /// Sub-block `H_{rc}`, e.g. `block(U, X)` is `H_ux`.
    pub fn block(&self, r: Block, c: Block) -> DMatrix<f64> {
        let (r0, rl) = self.range(r);
        let (c0, cl) = self.range(c);
        self.h.view((r0, c0), (rl, cl)).into_owned()
    }

    /// `T' H T` with `T = [I; -K1; -K2]`: the state value of playing `gains`.
    pub fn contract(&self, gains: &GainPair) -> DMatrix<f64> {
        let t = policy_lift(self.dims, gains);
        linalg::symmetrize(&(t.transpose() * &self.h * t))
    }
}

fn policy_lift(d: Dims, gains: &GainPair) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(d.l(), d.n);
    t.view_mut((0, 0), (d.n, d.n)).fill_with_identity();
    t.view_mut((d.n, 0), (d.m1, d.n)).copy_from(&(-&gains.k1));
    t.view_mut((d.n + d.m1, 0), (d.m2, d.n)).copy_from(&(-&gains.k2));
    t
}

/// Packed parameters of a `QMatrix`, see [`theta_pack`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub theta: DVector<f64>,
}

/// Quadratic monomials `(z1^2, z1 z2, ..., z1 zl, z2^2, ..., zl^2)` in
/// row-major upper-triangular order.
pub fn basis_vector(z: &DVector<f64>) -> DVector<f64> {
    let l = z.len();
    let mut out = Vec::with_capacity(l * (l + 1) / 2);
    for j in 0..l {
        for k in j..l {
            out.push(z[j] * z[k]);
        }
    }
    DVector::from_vec(out)
}

/// Diagonal entries stay put, each off-diagonal pair is stored as its sum
/// `H[j,k] + H[k,j]`, so that `z'Hz = basis_vector(z) . theta`.
pub fn theta_pack(h: &QMatrix) -> ThetaVector {
    let l = h.h.nrows();
    let mut out = Vec::with_capacity(l * (l + 1) / 2);
    for j in 0..l {
        for k in j..l {
            out.push(if j == k { h.h[(j, j)] } else { h.h[(j, k)] + h.h[(k, j)] });
        }
    }
    ThetaVector {
        theta: DVector::from_vec(out),
    }
}

pub fn theta_unpack(theta: &ThetaVector, dims: Dims) -> Result<QMatrix> {
    let l = dims.l();
    let expected = dims.theta_len();
    if theta.theta.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: theta.theta.len(),
        });
    }
    let mut h = DMatrix::zeros(l, l);
    let mut idx = 0;
    for j in 0..l {
        for k in j..l {
            let t = theta.theta[idx];
            if j == k {
                h[(j, j)] = t;
            } else {
                h[(j, k)] = 0.5 * t;
                h[(k, j)] = 0.5 * t;
            }
            idx += 1;
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta".into()));
    }
    Ok(QMatrix { h, dims })
}

/// Joint minimizer of `z'Hz` over `(u, v)` through the two Schur complements.
pub fn gains_from_h(h: &QMatrix) -> Result<GainPair> {
    use Block::*;
    let (hux, huu, huv) = (h.block(U, X), h.block(U, U), h.block(U, V));
    let (hvx, hvu, hvv) = (h.block(V, X), h.block(V, U), h.block(V, V));

    let hvv_inv_vu = linalg::solve(&hvv, &hvu, "H_vv")?;
    let hvv_inv_vx = linalg::solve(&hvv, &hvx, "H_vv")?;
    let s_u = &huu - &huv * &hvv_inv_vu;
    let k1 = linalg::solve(&s_u, &(&hux - &huv * hvv_inv_vx), "Schur complement of H_vv")?;

    let huu_inv_uv = linalg::solve(&huu, &huv, "H_uu")?;
    let huu_inv_ux = linalg::solve(&huu, &hux, "H_uu")?;
    let s_v = &hvv - &hvu * &huu_inv_uv;
    let k2 = linalg::solve(&s_v, &(&hvx - &hvu * huu_inv_ux), "Schur complement of H_uu")?;
    Ok(GainPair::new(k1, k2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Stop once `||theta_{i+1} - theta_i|| <= epsilon`.
    pub epsilon: f64,
    pub max_policy_iters: usize,
    /// Number of data tuples; `None` means four times the parameter count.
    pub samples: Option<usize>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub state_sample_radius: f64,
    /// Tikhonov weight added to the normal equations; zero means plain least squares.
    pub ridge: f64,
    /// Relative residual accepted when solving the learned incentive relation.
    pub incentive_tol: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_policy_iters: 100,
            samples: None,
            sigma1: 0.05,
            sigma2: 0.05,
            seed: 0,
            state_sample_radius: 1.0,
            ridge: 0.0,
            incentive_tol: 1e-6,
        }
    }
}

impl LearnerConfig {
    pub fn sample_count(&self, dims: Dims) -> usize {
        self.samples.unwrap_or(4 * dims.theta_len())
    }

    /// Range checks. The sample count is checked against the data instead, where
    /// a short batch raises `TooFewSamples`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("learner.epsilon must be positive");
        }
        if self.max_policy_iters == 0 {
            return bad("learner.max_policy_iters must be at least 1");
        }
        if !(self.sigma1 >= 0.0 && self.sigma1.is_finite() && self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad("learner.sigma1 and learner.sigma2 must be nonnegative");
        }
        if !(self.state_sample_radius > 0.0 && self.state_sample_radius.is_finite()) {
            return bad("learner.state_sample_radius must be positive");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("learner.ridge must be nonnegative");
        }
        if !(self.incentive_tol > 0.0 && self.incentive_tol.is_finite()) {
            return bad("learner.incentive_tol must be positive");
        }
        Ok(())
    }
}

/// One plant transition under the behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub x_next: DVector<f64>,
}

impl Transition {
    pub fn stacked(&self) -> DVector<f64> {
        let mut z = Vec::with_capacity(self.x.len() + self.u.len() + self.v.len());
        z.extend(self.x.iter());
        z.extend(self.u.iter());
        z.extend(self.v.iter());
        DVector::from_vec(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub tuples: Vec<Transition>,
    pub seed: u64,
}

/// Regression matrix with one basis row per tuple.
pub fn regression_matrix(batch: &DataBatch) -> DMatrix<f64> {
    let rows: Vec<_> = batch
        .tuples
        .iter()
        .map(|t| basis_vector(&t.stacked()).transpose())
        .collect();
    DMatrix::from_rows(&rows)
}

/// One least-squares policy-evaluation step.
///
/// Target per tuple: `c(x, u, v) + gamma z+' H_i z+` with
/// `z+ = (x+, -K1 x+, -K2 x+)`. Since `x+` is linear in `(x, u, v)`, the target
/// is an exact quadratic form in the regressor, so the fit is exact whenever
/// the regression matrix has full column rank.
pub fn ls_policy_eval(
    batch: &DataBatch,
    h_i: &QMatrix,
    gains_i: &GainPair,
    weights: &CostWeights,
    gamma: f64,
    cfg: &LearnerConfig,
) -> Result<QMatrix> {
    let d = h_i.dims;
    let p = d.theta_len();
    gains_i.check_dims(d)?;
    let found = batch.tuples.len();
    if found < p + 1 {
        return Err(Error::TooFewSamples {
            found,
            required: p + 1,
        });
    }
    for t in &batch.tuples {
        if t.x.len() != d.n || t.u.len() != d.m1 || t.v.len() != d.m2 || t.x_next.len() != d.n {
            return Err(dim_mismatch(
                "data tuple",
                format!("(n, m1, m2) = ({}, {}, {})", d.n, d.m1, d.m2),
                format!("({}, {}, {})", t.x.len(), t.u.len(), t.v.len()),
            ));
        }
    }

    let z = regression_matrix(batch);
    let lift = policy_lift(d, gains_i);
    let next_value = linalg::symmetrize(&(lift.transpose() * &h_i.h * lift));
    let y = DVector::from_iterator(
        found,
        batch
            .tuples
            .iter()
            .map(|t| weights.stage_cost(&t.x, &t.u, &t.v) + gamma * linalg::quad(&next_value, &t.x_next)),
    );

    let theta = if cfg.ridge > 0.0 {
        let normal = z.transpose() * &z + DMatrix::identity(p, p) * cfg.ridge;
        let rhs = z.transpose() * &y;
        normal
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::SingularMatrix("ridge normal equations".into()))?
    } else {
        let rank = linalg::rank(&z, 1e-10);
        if rank < p {
            return Err(Error::RankDeficient { rank, required: p });
        }
        let sol = linalg::lstsq(&z, &DMatrix::from_column_slice(found, 1, y.as_slice()))?;
        sol.column(0).into_owned()
    };
    theta_unpack(&ThetaVector { theta }, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    /// `||theta_i - theta_{i-1}||`
    pub h_delta: f64,
    pub gains: GainPair,
    pub theta: DVector<f64>,
    /// Frobenius distance to the reference gains, once a reference is attached.
    pub k1_err: Option<f64>,
    pub k2_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceLog {
    pub entries: Vec<LogEntry>,
}

impl ConvergenceLog {
    pub fn iterations(&self) -> usize {
        self.entries.len()
    }

    /// Fills the gain errors of every entry against `reference`.
    pub fn attach_reference(&mut self, reference: &GainPair) {
        for e in &mut self.entries {
            e.k1_err = Some((&e.gains.k1 - &reference.k1).norm());
            e.k2_err = Some((&e.gains.k2 - &reference.k2).norm());
        }
    }

    /// CSV with columns `iter, h_delta, k1_err, k2_err`; errors are blank
    /// without a reference.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "h_delta", "k1_err", "k2_err"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for e in &self.entries {
            w.write_record([
                e.iter.to_string(),
                format!("{:e}", e.h_delta),
                opt(e.k1_err),
                opt(e.k2_err),
            ])?;
        }
        w.flush()
    }
}

/// Output of the team-optimal learner.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamLearning {
    pub h: QMatrix,
    pub gains: GainPair,
    pub log: ConvergenceLog,
}

/// How the next gains are chosen after each evaluation.
#[derive(Clone, Copy)]
enum Improvement<'a> {
    Greedy,
    Fixed(&'a GainPair),
}

fn iterate(
    batch: &DataBatch,
    dims: Dims,
    weights: &CostWeights,
    gamma: f64,
    cfg: &LearnerConfig,
    improvement: Improvement<'_>,
) -> Result<TeamLearning> {
    let mut h = QMatrix::zeros(dims);
    let mut gains = match improvement {
        Improvement::Greedy => GainPair::zeros(dims),
        Improvement::Fixed(g) => g.clone(),
    };
    let mut theta = theta_pack(&h).theta;
    let mut log = ConvergenceLog::default();
    let mut last_delta = f64::INFINITY;
    for iter in 1..=cfg.max_policy_iters {
        let next_h = ls_policy_eval(batch, &h, &gains, weights, gamma, cfg)?;
        let next_theta = theta_pack(&next_h).theta;
        last_delta = (&next_theta - &theta).norm();
        if let Improvement::Greedy = improvement {
            gains = gains_from_h(&next_h)?;
        }
        h = next_h;
        theta = next_theta;
        log.entries.push(LogEntry {
            iter,
            h_delta: last_delta,
            gains: gains.clone(),
            theta: theta.clone(),
            k1_err: None,
            k2_err: None,
        });
        if !last_delta.is_finite() {
            break;
        }
        if last_delta <= cfg.epsilon {
            return Ok(TeamLearning { h, gains, log });
        }
    }
    Err(Error::NotConverged {
        iterations: log.iterations(),
        last_delta,
    })
}

fn check_weights(weights: &CostWeights, dims: Dims, gamma: f64) -> Result<CostWeights> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::DiscountOutOfRange(gamma));
    }
    weights.validated(dims, ["Q", "R_u", "R_v"])
}

/// Collects one batch under zero behavior gains plus exploration noise, then
/// alternates least-squares evaluation and greedy improvement from `H_0 = 0`,
/// `K_0 = 0`.
pub fn algorithm1_team_optimal<E: Environment + ?Sized>(
    env: &E,
    weights: &CostWeights,
    gamma: f64,
    cfg: &LearnerConfig,
) -> Result<TeamLearning> {
    cfg.validate()?;
    let dims = env.dims();
    let weights = check_weights(weights, dims, gamma)?;
    let batch = collect(env, &GainPair::zeros(dims), cfg)?;
    iterate(&batch, dims, &weights, gamma, cfg, Improvement::Greedy)
}

/// The same iteration on caller-supplied data.
pub fn algorithm1_from_batch(
    batch: &DataBatch,
    dims: Dims,
    weights: &CostWeights,
    gamma: f64,
    cfg: &LearnerConfig,
) -> Result<TeamLearning> {
    cfg.validate()?;
    let weights = check_weights(weights, dims, gamma)?;
    iterate(batch, dims, &weights, gamma, cfg, Improvement::Greedy)
}

fn collect<E: Environment + ?Sized>(env: &E, behavior: &GainPair, cfg: &LearnerConfig) -> Result<DataBatch> {
    plant::collect_batch(
        env,
        behavior,
        cfg.sigma1,
        cfg.sigma2,
        cfg.sample_count(env.dims()),
        cfg.state_sample_radius,
        cfg.seed,
    )
}

/// Output of the incentive learner.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveLearning {
    pub m: DMatrix<f64>,
    /// Follower action-value matrix of the team gains.
    pub h_v: QMatrix,
    pub log: ConvergenceLog,
}

/// Learns the incentive matrix for `team_gains`.
///
/// The follower's action-value matrix of the team policy is learned by
/// repeated least-squares evaluation with the gains held at `team_gains`.
/// Its blocks supply the model terms of the alignment relation:
/// `gamma B1'Pv Acl = H_ux - (H_uu - R21) K1 - H_uv K2` and
/// `gamma B2'Pv Acl = H_vx - H_vu K1 - (H_vv - R22) K2`.
pub fn algorithm2_incentive<E: Environment + ?Sized>(
    env: &E,
    follower_weights: &CostWeights,
    gamma: f64,
    team_gains: &GainPair,
    cfg: &LearnerConfig,
) -> Result<IncentiveLearning> {
    cfg.validate()?;
    let dims = env.dims();
    team_gains.check_dims(dims)?;
    let weights = check_weights(follower_weights, dims, gamma)?;
    let batch = collect(env, team_gains, cfg)?;
    algorithm2_with_batch(&batch, dims, &weights, gamma, team_gains, cfg)
}

pub fn algorithm2_from_batch(
    batch: &DataBatch,
    dims: Dims,
    follower_weights: &CostWeights,
    gamma: f64,
    team_gains: &GainPair,
    cfg: &LearnerConfig,
) -> Result<IncentiveLearning> {
    cfg.validate()?;
    team_gains.check_dims(dims)?;
    let weights = check_weights(follower_weights, dims, gamma)?;
    algorithm2_with_batch(batch, dims, &weights, gamma, team_gains, cfg)
}

fn algorithm2_with_batch(
    batch: &DataBatch,
    dims: Dims,
    weights: &CostWeights,
    gamma: f64,
    team_gains: &GainPair,
    cfg: &LearnerConfig,
) -> Result<IncentiveLearning> {
    let learned = iterate(batch, dims, weights, gamma, cfg, Improvement::Fixed(team_gains))?;
    let m = incentive_from_h(&learned.h, weights, team_gains, cfg.incentive_tol)?;
    Ok(IncentiveLearning {
        m,
        h_v: learned.h,
        log: learned.log,
    })
}

/// Solves the alignment relation `M'G = C` with both sides read off the
/// follower's action-value matrix `h_v`.
pub fn incentive_from_h(
    h_v: &QMatrix,
    follower_weights: &CostWeights,
    team_gains: &GainPair,
    rel_tol: f64,
) -> Result<DMatrix<f64>> {
    use Block::*;
    let (k1, k2) = (&team_gains.k1, &team_gains.k2);
    let (r21, r22) = (&follower_weights.r_u, &follower_weights.r_v);
    let b1_pv_acl = h_v.block(U, X) - (h_v.block(U, U) - r21) * k1 - h_v.block(U, V) * k2;
    let b2_pv_acl = h_v.block(V, X) - h_v.block(V, U) * k1 - (h_v.block(V, V) - r22) * k2;
    let g = r21 * k1 - b1_pv_acl;
    let c = b2_pv_acl - r22 * k2;
    model_based::solve_incentive_relation(&g, &c, rel_tol)
}
