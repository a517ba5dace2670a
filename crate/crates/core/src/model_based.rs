//! Model-based solvers for the game with known dynamics.
//!
//! * team-optimal value `P` and gains `(K1, K2)` of the joint minimization of the
//!   leader's cost, by value iteration from `P = 0`;
//! * the follower's value `Pv` of the team policy under the follower's cost;
//! * the incentive matrix `M` that makes the team gain `K2` the follower's best
//!   response to `u = u^t + M (v - v^t)`;
//! * the follower's best response to an arbitrary incentive policy, used to
//!   verify the alignment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{CostWeights, GainPair, IncentivePolicy, ValidatedGame};
use crate::linalg::{self, symmetrize};

/// Stopping rule shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "solver tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("solver max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Joint (team) optimum of the leader's cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamSolution {
    pub p: DMatrix<f64>,
    pub gains: GainPair,
    pub iterations: usize,
    /// Frobenius norm of the team Riccati defect at the returned `P`.
    pub residual: f64,
}

/// Follower's value of the team policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerValue {
    pub pv: DMatrix<f64>,
    pub residual: f64,
}

/// Team gains implied by a value matrix `P`.
///
/// `r_a` weights the leader input and `r_b` the follower input. Each gain is the
/// best response to the other's best response, eliminated in closed form:
/// `K_i = gamma (R_i + gamma F_i B_i)^-1 F_i A` with
/// `F_i = B_i' P [I - gamma B_j (R_j + gamma B_j' P B_j)^-1 B_j' P]`.
pub fn gains_from_value(
    game: &ValidatedGame,
    p: &DMatrix<f64>,
    r_a: &DMatrix<f64>,
    r_b: &DMatrix<f64>,
) -> Result<GainPair> {
    let gamma = game.gamma();
    let (a, b1, b2) = (game.a(), game.b1(), game.b2());
    let n = game.dims().n;
    let eye = DMatrix::<f64>::identity(n, n);

    let elimination = |bj: &DMatrix<f64>, rj: &DMatrix<f64>, what: &str| -> Result<DMatrix<f64>> {
        let inner = rj + (bj.transpose() * p * bj) * gamma;
        let solved = linalg::solve(&inner, &(bj.transpose() * p), what)?;
        Ok(&eye - bj * solved * gamma)
    };

    let f1 = b1.transpose() * p * elimination(b2, r_b, "R_b + gamma B2'PB2")?;
    let f2 = b2.transpose() * p * elimination(b1, r_a, "R_a + gamma B1'PB1")?;

    let k1 = linalg::solve(&(r_a + (&f1 * b1) * gamma), &(&f1 * a), "R_a + gamma F1 B1")? * gamma;
    let k2 = linalg::solve(&(r_b + (&f2 * b2) * gamma), &(&f2 * a), "R_b + gamma F2 B2")? * gamma;
    Ok(GainPair::new(k1, k2))
}

/// Cost-to-go matrix of the linear policy pair `gains` under `weights`:
/// `P = Q + K1'R_u K1 + K2'R_v K2 + gamma Acl' P Acl`.
pub fn policy_value(
    game: &ValidatedGame,
    weights: &CostWeights,
    gains: &GainPair,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let a_cl = game.closed_loop(gains);
    let stage = policy_stage_weight(weights, gains);
    let (p, _) = linalg::discounted_lyapunov(&a_cl, &stage, game.gamma(), cfg.tol, cfg.max_iters)?;
    Ok(p)
}

fn policy_stage_weight(weights: &CostWeights, gains: &GainPair) -> DMatrix<f64> {
    &weights.q
        + gains.k1.transpose() * &weights.r_u * &gains.k1
        + gains.k2.transpose() * &weights.r_v * &gains.k2
}

/// Defect `P - (Q + gamma Acl'P Acl + K1'R_u K1 + K2'R_v K2)` in Frobenius norm.
pub fn riccati_residual(
    game: &ValidatedGame,
    weights: &CostWeights,
    p: &DMatrix<f64>,
    gains: &GainPair,
) -> f64 {
    let a_cl = game.closed_loop(gains);
    let rhs = policy_stage_weight(weights, gains) + (a_cl.transpose() * p * &a_cl) * game.gamma();
    (p - rhs).norm()
}

/// One step of the team value iteration: greedy gains for `P_i`, then
/// `P_{i+1} = Q1 + K1'R11 K1 + K2'R12 K2 + gamma Acl' P_i Acl`.
pub fn value_iteration_step(game: &ValidatedGame, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let w = game.leader_weights();
    let gains = gains_from_value(game, p, &w.r_u, &w.r_v)?;
    let a_cl = game.closed_loop(&gains);
    Ok(symmetrize(
        &(policy_stage_weight(&w, &gains) + (a_cl.transpose() * p * &a_cl) * game.gamma()),
    ))
}

/// Team-optimal value and gains by value iteration from `P = 0`.
pub fn solve_team_optimal(game: &ValidatedGame, cfg: &SolverConfig) -> Result<TeamSolution> {
    cfg.validate()?;
    let n = game.dims().n;
    let mut p = DMatrix::zeros(n, n);
    let mut last_delta = f64::INFINITY;
    for iter in 1..=cfg.max_iters {
        let next = value_iteration_step(game, &p)?;
        last_delta = (&next - &p).norm();
        p = next;
        if !last_delta.is_finite() {
            break;
        }
        if last_delta <= cfg.tol {
            let w = game.leader_weights();
            let gains = gains_from_value(game, &p, &w.r_u, &w.r_v)?;
            let residual = riccati_residual(game, &w, &p, &gains);
            return Ok(TeamSolution {
                p,
                gains,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: cfg.max_iters,
        last_delta,
    })
}

/// Follower's value `Pv` of the policy pair `gains`:
/// `Pv = Q2 + gamma Acl'Pv Acl + K1'R21 K1 + K2'R22 K2`.
pub fn solve_follower_value(
    game: &ValidatedGame,
    gains: &GainPair,
    cfg: &SolverConfig,
) -> Result<FollowerValue> {
    cfg.validate()?;
    gains.check_dims(game.dims())?;
    let a_cl = game.closed_loop(gains);
    let stage = policy_stage_weight(&game.follower_weights(), gains);
    let (pv, residual) =
        linalg::discounted_lyapunov(&a_cl, &stage, game.gamma(), cfg.tol, cfg.max_iters)?;
    Ok(FollowerValue { pv, residual })
}

/// Relative residual bound for the model-based incentive relation.
pub const INCENTIVE_TOL: f64 = 1e-8;

/// Incentive matrix `M` (m1 x m2) aligning the follower with the team gain `K2`.
///
/// Solves `M'G = C` with `G = R21 K1 - gamma B1'Pv Acl` and
/// `C = gamma B2'Pv Acl - R22 K2`.
pub fn incentive_matrix(
    game: &ValidatedGame,
    gains: &GainPair,
    pv: &FollowerValue,
) -> Result<DMatrix<f64>> {
    gains.check_dims(game.dims())?;
    let gamma = game.gamma();
    let w = game.follower_weights();
    let pv_acl = &pv.pv * game.closed_loop(gains);
    let g = &w.r_u * &gains.k1 - (game.b1().transpose() * &pv_acl) * gamma;
    let c = (game.b2().transpose() * &pv_acl) * gamma - &w.r_v * &gains.k2;
    solve_incentive_relation(&g, &c, INCENTIVE_TOL)
}

/// Solves `M'G = C` for `M`, exactly when `G'` is square and invertible, otherwise
/// in the minimum-norm least-squares sense. Fails with `IncentiveInfeasible` when
/// `||M'G - C||_F > rel_tol (1 + ||C||_F)`.
pub fn solve_incentive_relation(
    g: &DMatrix<f64>,
    c: &DMatrix<f64>,
    rel_tol: f64,
) -> Result<DMatrix<f64>> {
    let gt = g.transpose();
    let ct = c.transpose();
    let m = if gt.is_square() {
        linalg::solve(&gt, &ct, "incentive relation").or_else(|_| linalg::lstsq(&gt, &ct))?
    } else {
        linalg::lstsq(&gt, &ct)?
    };
    let residual = (m.transpose() * g - c).norm();
    let bound = rel_tol * (1.0 + c.norm());
    if residual.is_nan() || residual > bound {
        return Err(Error::IncentiveInfeasible { residual, bound });
    }
    Ok(m)
}

/// The follower's LQ problem once the leader's incentive strategy is substituted:
/// stage cost `x'Qx + 2x'Sv + v'Rv`, dynamics `x+ = A x + B v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Expands `u = -(K1 - M K2) x + M v` into the follower's cost and dynamics.
pub fn follower_problem(game: &ValidatedGame, policy: &IncentivePolicy) -> Result<FollowerProblem> {
    policy.check_dims(game.dims())?;
    let w = game.follower_weights();
    let m = &policy.m;
    let l = &policy.gains.k1 - m * &policy.gains.k2;
    Ok(FollowerProblem {
        a: game.a() - game.b1() * &l,
        b: game.b1() * m + game.b2(),
        q: symmetrize(&(&w.q + l.transpose() * &w.r_u * &l)),
        s: -(l.transpose() * &w.r_u * m),
        r: symmetrize(&(&w.r_v + m.transpose() * &w.r_u * m)),
    })
}

/// Follower's optimal reply to an incentive policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    /// Gain with the convention `v = -K2* x`.
    pub k2: DMatrix<f64>,
    pub value: DMatrix<f64>,
    pub iterations: usize,
}

fn cross_term_gain(
    prob: &FollowerProblem,
    p: &DMatrix<f64>,
    gamma: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bt_p = prob.b.transpose() * p;
    let lhs = &prob.r + (&bt_p * &prob.b) * gamma;
    let rhs = prob.s.transpose() + (&bt_p * &prob.a) * gamma;
    let k = linalg::solve(&lhs, &rhs, "R_M + gamma B_M'P B_M")?;
    Ok((k, rhs))
}

/// Best response of the follower to `policy`, by value iteration from zero on the
/// Riccati equation with cross term.
pub fn follower_best_response(
    game: &ValidatedGame,
    policy: &IncentivePolicy,
    cfg: &SolverConfig,
) -> Result<BestResponse> {
    cfg.validate()?;
    let prob = follower_problem(game, policy)?;
    let gamma = game.gamma();
    let n = game.dims().n;
    let mut p = DMatrix::zeros(n, n);
    let mut last_delta = f64::INFINITY;
    for iter in 1..=cfg.max_iters {
        let (k, rhs) = cross_term_gain(&prob, &p, gamma)?;
        let next = symmetrize(
            &(&prob.q + (prob.a.transpose() * &p * &prob.a) * gamma - rhs.transpose() * &k),
        );
        last_delta = (&next - &p).norm();
        p = next;
        if !last_delta.is_finite() {
            break;
        }
        if last_delta <= cfg.tol {
            let (k2, _) = cross_term_gain(&prob, &p, gamma)?;
            return Ok(BestResponse {
                k2,
                value: p,
                iterations: iter,
            });
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: cfg.max_iters,
        last_delta,
    })
}

/// Action-value matrix for a value `P` under `weights`:
/// `H = diag(Q, R_u, R_v) + gamma [A B1 B2]' P [A B1 B2]`.
pub fn q_matrix_from_value(
    game: &ValidatedGame,
    weights: &CostWeights,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let d = game.dims();
    let mut stacked = DMatrix::zeros(d.n, d.l());
    stacked.view_mut((0, 0), (d.n, d.n)).copy_from(game.a());
    stacked.view_mut((0, d.n), (d.n, d.m1)).copy_from(game.b1());
    stacked.view_mut((0, d.n + d.m1), (d.n, d.m2)).copy_from(game.b2());
    let mut h = (stacked.transpose() * p * &stacked) * game.gamma();
    let mut add_block = |off: usize, m: &DMatrix<f64>| {
        let mut view = h.view_mut((off, off), m.shape());
        view += m;
    };
    add_block(0, &weights.q);
    add_block(d.n, &weights.r_u);
    add_block(d.n + d.m1, &weights.r_v);
    symmetrize(&h)
}
