//! Brute-force references for the solvers: finite-horizon dynamic programming
//! over the stacked input `(u, v)` and exhaustive scalar gain search.
//!
//! Nothing here calls into `model_based`; agreement between the two is evidence.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::game::{CostWeights, GainPair, IncentivePolicy, Player, ValidatedGame};

/// Backward value iterates `P_0 = 0, P_1, ..., P_T` of the joint problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTrace {
    pub horizon: usize,
    pub p_sequence: Vec<DMatrix<f64>>,
    pub final_gains: GainPair,
}

impl DpTrace {
    pub fn last(&self) -> &DMatrix<f64> {
        self.p_sequence.last().expect("trace always holds P_0")
    }
}

struct Stacked {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    r: DMatrix<f64>,
    q: DMatrix<f64>,
    m1: usize,
}

fn stack(game: &ValidatedGame, w: &CostWeights) -> Stacked {
    let d = game.dims();
    let m = d.m1 + d.m2;
    let mut b = DMatrix::zeros(d.n, m);
    b.columns_mut(0, d.m1).copy_from(game.b1());
    b.columns_mut(d.m1, d.m2).copy_from(game.b2());
    let mut r = DMatrix::zeros(m, m);
    r.view_mut((0, 0), (d.m1, d.m1)).copy_from(&w.r_u);
    r.view_mut((d.m1, d.m1), (d.m2, d.m2)).copy_from(&w.r_v);
    Stacked {
        a: game.a().clone(),
        b,
        r,
        q: w.q.clone(),
        m1: d.m1,
    }
}

/// Joint minimizer gain `K = gamma (R + gamma B'PB)^-1 B'PA` for the stacked input.
fn stacked_gain(s: &Stacked, p: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let bt_p = s.b.transpose() * p;
    let lhs = &s.r + &bt_p * &s.b * gamma;
    let rhs = &bt_p * &s.a * gamma;
    lhs.lu()
        .solve(&rhs)
        .filter(|k| k.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::SingularMatrix("R + gamma B'PB (dp oracle)".into()))
}

/// `horizon` steps of the Bellman recursion
/// `P+ = Q + gamma A'PA - gamma^2 A'PB (R + gamma B'PB)^-1 B'PA` from `P = 0`.
pub fn finite_horizon_dp(
    game: &ValidatedGame,
    weights: &CostWeights,
    horizon: usize,
) -> Result<DpTrace> {
    let gamma = game.gamma();
    let s = stack(game, weights);
    let n = s.a.nrows();
    let mut seq = Vec::with_capacity(horizon + 1);
    seq.push(DMatrix::zeros(n, n));
    for _ in 0..horizon {
        let p = seq.last().unwrap();
        let k = stacked_gain(&s, p, gamma)?;
        let at_p = s.a.transpose() * p;
        let next = &s.q + &at_p * &s.a * gamma - &at_p * &s.b * &k * gamma;
        seq.push((&next + next.transpose()) * 0.5);
    }
    let k = stacked_gain(&s, seq.last().unwrap(), gamma)?;
    let final_gains = GainPair::new(
        k.rows(0, s.m1).into_owned(),
        k.rows(s.m1, k.nrows() - s.m1).into_owned(),
    );
    Ok(DpTrace {
        horizon,
        p_sequence: seq,
        final_gains,
    })
}

/// What the other player does while one gain is searched.
#[derive(Debug, Clone, PartialEq)]
pub enum FixedPolicy {
    /// The other player's scalar gain (`u = -k x` or `v = -k x`).
    Gain(f64),
    /// Leader incentive policy; only meaningful when searching the follower's gain.
    Incentive(IncentivePolicy),
}

/// Inclusive grid `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    pub fn around(center: f64, half_width: f64, step: f64) -> Self {
        Self::new(center - half_width, center + half_width, step)
    }

    fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step > 0.0) || self.hi < self.lo {
            return Err(Error::EmptyGrid);
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub gain: f64,
    /// `p x0^2`, `+inf` when the closed loop is not discount-stable.
    pub cost: f64,
}

fn scalar(m: &DMatrix<f64>) -> f64 {
    m[(0, 0)]
}

/// Discounted cost coefficient `p` of the scalar loop `u = -g1 x`, `v = -g2 x`.
fn scalar_policy_cost(game: &ValidatedGame, w: &CostWeights, g1: f64, g2: f64) -> f64 {
    let gamma = game.gamma();
    let a_cl = scalar(game.a()) - scalar(game.b1()) * g1 - scalar(game.b2()) * g2;
    if gamma * a_cl * a_cl >= 1.0 {
        return f64::INFINITY;
    }
    let stage = scalar(&w.q) + scalar(&w.r_u) * g1 * g1 + scalar(&w.r_v) * g2 * g2;
    stage / (1.0 - gamma * a_cl * a_cl)
}

/// Exhaustive search of one player's scalar gain on `grid`, scoring each point by
/// the exact discounted cost of the resulting scalar closed loop.
pub fn scalar_gain_search(
    game: &ValidatedGame,
    objective: Player,
    fixed: &FixedPolicy,
    grid: Grid,
) -> Result<SearchResult> {
    let d = game.dims();
    if (d.n, d.m1, d.m2) != (1, 1, 1) {
        return Err(crate::error::dim_mismatch(
            "scalar gain search",
            "n = m1 = m2 = 1",
            format!("n={}, m1={}, m2={}", d.n, d.m1, d.m2),
        ));
    }
    if matches!((objective, fixed), (Player::Leader, FixedPolicy::Incentive(_))) {
        return Err(Error::InvalidConfig(
            "an incentive policy fixes the leader; search the follower instead".into(),
        ));
    }
    let w = game.weights(objective);
    let x0_sq = game.x0()[0] * game.x0()[0];
    let score = |k: f64| -> f64 {
        match (objective, fixed) {
            (Player::Leader, FixedPolicy::Gain(k2)) => scalar_policy_cost(game, &w, k, *k2),
            (Player::Follower, FixedPolicy::Gain(k1)) => scalar_policy_cost(game, &w, *k1, k),
            (Player::Follower, FixedPolicy::Incentive(pol)) => {
                let (k1, k2, m) = (scalar(&pol.gains.k1), scalar(&pol.gains.k2), scalar(&pol.m));
                // u = -k1 x + m (v + k2 x) with v = -k x
                scalar_policy_cost(game, &w, k1 - m * (k2 - k), k)
            }
            (Player::Leader, FixedPolicy::Incentive(_)) => unreachable!("rejected above"),
        }
    };
    let mut best: Option<(f64, f64)> = None;
    for k in grid.points()? {
        let p = score(k);
        if best.is_none_or(|(_, bp)| p < bp) {
            best = Some((k, p));
        }
    }
    let (gain, p) = best.ok_or(Error::EmptyGrid)?;
    Ok(SearchResult {
        gain,
        cost: p * x0_sq,
    })
}
