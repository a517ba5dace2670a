//! The black-box plant: exact linear stepping, rollouts, cost evaluation and
//! data collection for the learner.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adp::{DataBatch, Transition};
use crate::error::{dim_mismatch, Error, Result};
use crate::game::{CostWeights, Dims, GainPair, IncentivePolicy, ValidatedGame};
use crate::linalg;

/// What a learner may see of the plant: its dimensions and a one-step oracle.
pub trait Environment {
    fn dims(&self) -> Dims;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Noiseless plant `x+ = A x + B1 u + B2 v` with hidden matrices.
#[derive(Debug, Clone)]
pub struct PlantHandle {
    a: DMatrix<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
    dims: Dims,
    seed: u64,
}

impl PlantHandle {
    pub fn new(game: &ValidatedGame, seed: u64) -> Self {
        Self {
            a: game.a().clone(),
            b1: game.b1().clone(),
            b2: game.b2().clone(),
            dims: game.dims(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn closed_loop(&self, k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b1 * k1 - &self.b2 * k2
    }
}

impl Environment for PlantHandle {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_vec(x, self.dims.n, "x")?;
        check_vec(u, self.dims.m1, "u")?;
        check_vec(v, self.dims.m2, "v")?;
        Ok(&self.a * x + &self.b1 * u + &self.b2 * v)
    }
}

fn check_vec(x: &DVector<f64>, len: usize, what: &str) -> Result<()> {
    if x.len() != len {
        return Err(dim_mismatch(what, len, x.len()));
    }
    Ok(())
}

type LeaderFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type FollowerFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Leader strategy. The leader observes the follower's concurrent action.
#[derive(Clone)]
pub enum LeaderPolicy {
    /// `u = -K1 x`
    Linear(DMatrix<f64>),
    Incentive(IncentivePolicy),
    /// Arbitrary map `(x, v) -> u`.
    Custom(LeaderFn),
}

#[derive(Clone)]
pub enum FollowerPolicy {
    /// `v = -K2 x`
    Linear(DMatrix<f64>),
    /// Arbitrary map `x -> v`.
    Custom(FollowerFn),
}

impl fmt::Debug for LeaderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(k) => f.debug_tuple("Linear").field(k).finish(),
            Self::Incentive(p) => f.debug_tuple("Incentive").field(p).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl fmt::Debug for FollowerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(k) => f.debug_tuple("Linear").field(k).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl LeaderPolicy {
    fn act(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Linear(k1) => -(k1 * x),
            Self::Incentive(p) => p.leader_action(x, v),
            Self::Custom(f) => f(x, v),
        }
    }
}

impl FollowerPolicy {
    fn act(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Linear(k2) => -(k2 * x),
            Self::Custom(f) => f(x),
        }
    }
}

/// Closed loop realized by a rollout when both strategies are linear in the state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLoop {
    pub gains: GainPair,
    pub a_cl: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub u_inputs: Vec<DVector<f64>>,
    pub v_inputs: Vec<DVector<f64>>,
    linear: Option<LinearLoop>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.u_inputs.len()
    }

    pub fn linear_loop(&self) -> Option<&LinearLoop> {
        self.linear.as_ref()
    }

    /// CSV with columns `k, x_*, u_*, v_*, stage_cost_leader, stage_cost_follower`.
    /// The final state gets its own row with empty input and cost cells.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        leader: &CostWeights,
        follower: &CostWeights,
    ) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m1 = self.u_inputs.first().map_or(leader.r_u.nrows(), |u| u.len());
        let m2 = self.v_inputs.first().map_or(leader.r_v.nrows(), |v| v.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m1).map(|i| format!("u_{i}")));
        header.extend((0..m2).map(|i| format!("v_{i}")));
        header.push("stage_cost_leader".into());
        header.push("stage_cost_follower".into());
        w.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match (self.u_inputs.get(k), self.v_inputs.get(k)) {
                (Some(u), Some(v)) => {
                    row.extend(u.iter().map(|e| e.to_string()));
                    row.extend(v.iter().map(|e| e.to_string()));
                    row.push(leader.stage_cost(x, u, v).to_string());
                    row.push(follower.stage_cost(x, u, v).to_string());
                }
                _ => row.extend(std::iter::repeat_n(String::new(), m1 + m2 + 2)),
            }
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Simulates `horizon` steps from `x0`. Each step the follower acts on the
/// state, then the leader acts on the state and the follower's action.
pub fn rollout(
    plant: &PlantHandle,
    leader: &LeaderPolicy,
    follower: &FollowerPolicy,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<Trajectory> {
    check_vec(x0, plant.dims.n, "x0")?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut u_inputs = Vec::with_capacity(horizon);
    let mut v_inputs = Vec::with_capacity(horizon);
    states.push(x0.clone());
    for k in 0..horizon {
        let x = &states[k];
        let v = follower.act(x);
        let u = leader.act(x, &v);
        let next = plant.step(x, &u, &v)?;
        u_inputs.push(u);
        v_inputs.push(v);
        states.push(next);
    }
    let linear = match (leader, follower) {
        (LeaderPolicy::Linear(k1), FollowerPolicy::Linear(k2)) => Some((k1.clone(), k2.clone())),
        (LeaderPolicy::Incentive(p), FollowerPolicy::Linear(k2)) => {
            Some((p.effective_leader_gain(k2), k2.clone()))
        }
        _ => None,
    }
    .map(|(k1, k2)| LinearLoop {
        a_cl: plant.closed_loop(&k1, &k2),
        gains: GainPair::new(k1, k2),
    });
    Ok(Trajectory {
        states,
        u_inputs,
        v_inputs,
        linear,
    })
}

/// How the infinite-horizon remainder beyond the simulated horizon is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Truncate,
    /// Adds `gamma^T x_T' P x_T` with `P` the exact value of the linear closed loop.
    Lyapunov,
}

/// Discounted cost `sum_k gamma^k c(x_k, u_k, v_k)` of a trajectory.
pub fn evaluate_cost(
    traj: &Trajectory,
    weights: &CostWeights,
    gamma: f64,
    tail: Tail,
) -> Result<f64> {
    let mut total = 0.0;
    let mut discount = 1.0;
    for ((x, u), v) in traj.states.iter().zip(&traj.u_inputs).zip(&traj.v_inputs) {
        total += discount * weights.stage_cost(x, u, v);
        discount *= gamma;
    }
    if tail == Tail::Lyapunov {
        let lp = traj.linear.as_ref().ok_or(Error::TailRequiresLinearPolicy)?;
        let stage = &weights.q
            + lp.gains.k1.transpose() * &weights.r_u * &lp.gains.k1
            + lp.gains.k2.transpose() * &weights.r_v * &lp.gains.k2;
        let (p, _) = linalg::discounted_lyapunov(&lp.a_cl, &stage, gamma, 1e-15, 100_000)?;
        let x_t = traj.states.last().expect("trajectory holds x0");
        total += discount * linalg::quad(&p, x_t);
    }
    Ok(total)
}

/// `count` independent tuples `(x, u, v, x+)` with `x` uniform in the ball of
/// radius `radius`, `u = -K1 x + e1`, `v = -K2 x + e2`, `e_i ~ N(0, sigma_i^2 I)`.
/// Tuple `i` draws from ChaCha stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch<E: Environment + ?Sized>(
    env: &E,
    gains: &GainPair,
    sigma1: f64,
    sigma2: f64,
    count: usize,
    radius: f64,
    seed: u64,
) -> Result<DataBatch> {
    let d = env.dims();
    gains.check_dims(d)?;
    if !(sigma1 >= 0.0 && sigma2 >= 0.0 && radius >= 0.0) {
        return Err(Error::InvalidConfig(
            "noise levels and sampling radius must be nonnegative".into(),
        ));
    }
    let mut tuples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x = uniform_ball(&mut rng, d.n, radius);
        let e1 = gaussian(&mut rng, d.m1, sigma1);
        let e2 = gaussian(&mut rng, d.m2, sigma2);
        let u = gains.leader_action(&x) + e1;
        let v = gains.follower_action(&x) + e2;
        let x_next = env.step(&x, &u, &v)?;
        tuples.push(Transition { x, u, v, x_next });
    }
    Ok(DataBatch { tuples, seed })
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, sigma: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

fn uniform_ball(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    loop {
        let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 1e-12 {
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
            return dir * (r / norm);
        }
    }
}

/// Steps the plant once from each supplied `(x, u, v)`.
pub fn collect_batch_from_inputs<E: Environment + ?Sized>(
    env: &E,
    inputs: &[(DVector<f64>, DVector<f64>, DVector<f64>)],
) -> Result<DataBatch> {
    let tuples = inputs
        .iter()
        .map(|(x, u, v)| {
            Ok(Transition {
                x: x.clone(),
                u: u.clone(),
                v: v.clone(),
                x_next: env.step(x, u, v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DataBatch { tuples, seed: 0 })
}

const PRIMES: [f64; 24] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
    59.0, 61.0, 67.0, 71.0, 73.0, 79.0, 83.0, 89.0,
];

/// Deterministic multi-sine excitation: entry `c` of sample `j` is
/// `amplitude * sin(sqrt(p_c) j + c)` over the stacked `(x, u, v)` coordinates,
/// with `p_c` the `c`-th prime. The square roots of distinct primes are
/// rationally independent, so every quadratic monomial gets its own frequency
/// content and the regression matrix has full column rank for enough samples.
pub fn probing_inputs(
    dims: Dims,
    count: usize,
    amplitude: f64,
) -> Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let l = dims.l();
    assert!(l <= PRIMES.len(), "probing supports l <= {}", PRIMES.len());
    (0..count)
        .map(|j| {
            let z = DVector::from_fn(l, |c, _| {
                amplitude * (PRIMES[c].sqrt() * (j as f64 + 1.0) + c as f64).sin()
            });
            (
                z.rows(0, dims.n).into_owned(),
                z.rows(dims.n, dims.m1).into_owned(),
                z.rows(dims.n + dims.m1, dims.m2).into_owned(),
            )
        })
        .collect()
}
