//! Game data model: dynamics, cost weights, dimensions and policy conventions.
//!
//! Gains follow one sign convention everywhere: the leader plays `u = -K1 x`
//! and the follower plays `v = -K2 x`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Raw, unvalidated game description.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub r11: DMatrix<f64>,
    pub r12: DMatrix<f64>,
    pub r21: DMatrix<f64>,
    pub r22: DMatrix<f64>,
    pub gamma: f64,
    pub x0: DVector<f64>,
}

/// State and input dimensions `(n, m1, m2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
}

impl Dims {
    pub fn new(n: usize, m1: usize, m2: usize) -> Self {
        Self { n, m1, m2 }
    }

    /// Length of the stacked vector `z = (x, u, v)`.
    pub fn l(&self) -> usize {
        self.n + self.m1 + self.m2
    }

    /// Number of free parameters of a symmetric `l x l` matrix.
    pub fn theta_len(&self) -> usize {
        let l = self.l();
        l * (l + 1) / 2
    }
}

/// Quadratic stage-cost weights of one player: `x'Qx + u'R_u u + v'R_v v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r_u: DMatrix<f64>,
    pub r_v: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r_u: DMatrix<f64>, r_v: DMatrix<f64>) -> Self {
        Self { q, r_u, r_v }
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        linalg::quad(&self.q, x) + linalg::quad(&self.r_u, u) + linalg::quad(&self.r_v, v)
    }

    /// Validates and symmetrizes the weights against `dims`.
    pub fn validated(&self, dims: Dims, names: [&str; 3]) -> Result<CostWeights> {
        check_shape(&self.q, dims.n, dims.n, names[0])?;
        check_shape(&self.r_u, dims.m1, dims.m1, names[1])?;
        check_shape(&self.r_v, dims.m2, dims.m2, names[2])?;
        Ok(CostWeights {
            q: psd(&self.q, names[0])?,
            r_u: pd(&self.r_u, names[1])?,
            r_v: pd(&self.r_v, names[2])?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Leader,
    Follower,
}

/// A game whose invariants have been checked. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedGame {
    spec: GameSpec,
    dims: Dims,
}

impl ValidatedGame {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spec(&self) -> &GameSpec {
        &self.spec
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.spec.a
    }

    pub fn b1(&self) -> &DMatrix<f64> {
        &self.spec.b1
    }

    pub fn b2(&self) -> &DMatrix<f64> {
        &self.spec.b2
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.spec.x0
    }

    pub fn leader_weights(&self) -> CostWeights {
        CostWeights::new(
            self.spec.q1.clone(),
            self.spec.r11.clone(),
            self.spec.r12.clone(),
        )
    }

    pub fn follower_weights(&self) -> CostWeights {
        CostWeights::new(
            self.spec.q2.clone(),
            self.spec.r21.clone(),
            self.spec.r22.clone(),
        )
    }

    pub fn weights(&self, player: Player) -> CostWeights {
        match player {
            Player::Leader => self.leader_weights(),
            Player::Follower => self.follower_weights(),
        }
    }

    /// Same game with the follower's cost replaced, e.g. by a compromised controller.
    pub fn with_follower_weights(&self, weights: &CostWeights) -> Result<ValidatedGame> {
        let mut spec = self.spec.clone();
        spec.q2 = weights.q.clone();
        spec.r21 = weights.r_u.clone();
        spec.r22 = weights.r_v.clone();
        validate_game(&spec)
    }

    /// Closed-loop matrix `A - B1 K1 - B2 K2`.
    pub fn closed_loop(&self, gains: &GainPair) -> DMatrix<f64> {
        self.a() - self.b1() * &gains.k1 - self.b2() * &gains.k2
    }
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(dim_mismatch(
            name,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

fn symmetric(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(1.0);
    if linalg::asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(name.to_string()));
    }
    Ok(linalg::symmetrize(m))
}

fn psd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let s = symmetric(m, name)?;
    if linalg::min_eigenvalue(&s) < -PSD_TOL {
        return Err(Error::NotPositiveSemidefinite(name.to_string()));
    }
    Ok(s)
}

fn pd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let s = symmetric(m, name)?;
    let min_eig = linalg::min_eigenvalue(&s);
    if min_eig.is_nan() || min_eig <= PSD_TOL {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    Ok(s)
}

/// Checks dimensions, weights and discount; symmetrizes the weight matrices.
pub fn validate_game(spec: &GameSpec) -> Result<ValidatedGame> {
    let n = spec.a.nrows();
    let m1 = spec.b1.ncols();
    let m2 = spec.b2.ncols();
    if n == 0 || m1 == 0 || m2 == 0 {
        return Err(dim_mismatch(
            "game dimensions",
            "n, m1, m2 >= 1",
            format!("n={n}, m1={m1}, m2={m2}"),
        ));
    }
    check_shape(&spec.a, n, n, "A")?;
    check_shape(&spec.b1, n, m1, "B1")?;
    check_shape(&spec.b2, n, m2, "B2")?;
    if spec.x0.len() != n {
        return Err(dim_mismatch("x0", n, spec.x0.len()));
    }
    if spec.x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x0".into()));
    }
    if !(spec.gamma > 0.0 && spec.gamma < 1.0) {
        return Err(Error::DiscountOutOfRange(spec.gamma));
    }
    let dims = Dims::new(n, m1, m2);
    let leader = CostWeights::new(spec.q1.clone(), spec.r11.clone(), spec.r12.clone())
        .validated(dims, ["Q1", "R11", "R12"])?;
    let follower = CostWeights::new(spec.q2.clone(), spec.r21.clone(), spec.r22.clone())
        .validated(dims, ["Q2", "R21", "R22"])?;
    let spec = GameSpec {
        a: spec.a.clone(),
        b1: spec.b1.clone(),
        b2: spec.b2.clone(),
        q1: leader.q,
        q2: follower.q,
        r11: leader.r_u,
        r12: leader.r_v,
        r21: follower.r_u,
        r22: follower.r_v,
        gamma: spec.gamma,
        x0: spec.x0.clone(),
    };
    Ok(ValidatedGame { spec, dims })
}

/// `x'Q_i x + u'R_i1 u + v'R_i2 v` for the given player.
pub fn one_step_cost(
    game: &ValidatedGame,
    player: Player,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let d = game.dims();
    if x.len() != d.n {
        return Err(dim_mismatch("x", d.n, x.len()));
    }
    if u.len() != d.m1 {
        return Err(dim_mismatch("u", d.m1, u.len()));
    }
    if v.len() != d.m2 {
        return Err(dim_mismatch("v", d.m2, v.len()));
    }
    Ok(game.weights(player).stage_cost(x, u, v))
}

/// State-feedback gains with `u = -K1 x`, `v = -K2 x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPair {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
}

impl GainPair {
    pub fn new(k1: DMatrix<f64>, k2: DMatrix<f64>) -> Self {
        Self { k1, k2 }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            k1: DMatrix::zeros(dims.m1, dims.n),
            k2: DMatrix::zeros(dims.m2, dims.n),
        }
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.k1.shape() != (dims.m1, dims.n) {
            return Err(dim_mismatch(
                "K1",
                format!("{}x{}", dims.m1, dims.n),
                format!("{}x{}", self.k1.nrows(), self.k1.ncols()),
            ));
        }
        if self.k2.shape() != (dims.m2, dims.n) {
            return Err(dim_mismatch(
                "K2",
                format!("{}x{}", dims.m2, dims.n),
                format!("{}x{}", self.k2.nrows(), self.k2.ncols()),
            ));
        }
        Ok(())
    }

    pub fn leader_action(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.k1 * x)
    }

    pub fn follower_action(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.k2 * x)
    }
}

/// Leader strategy `u = u^t + M (v - v^t)` around the team-optimal gains.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentivePolicy {
    pub gains: GainPair,
    pub m: DMatrix<f64>,
}

impl IncentivePolicy {
    pub fn new(gains: GainPair, m: DMatrix<f64>) -> Self {
        Self { gains, m }
    }

    /// Leader action given the state and the follower's concurrent action.
    pub fn leader_action(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let team_v = self.gains.follower_action(x);
        self.gains.leader_action(x) + &self.m * (v - team_v)
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        self.gains.check_dims(dims)?;
        if self.m.shape() != (dims.m1, dims.m2) {
            return Err(dim_mismatch(
                "M",
                format!("{}x{}", dims.m1, dims.m2),
                format!("{}x{}", self.m.nrows(), self.m.ncols()),
            ));
        }
        Ok(())
    }

    /// Effective leader gain when the follower plays `v = -k2 x`:
    /// `u = -(K1 - M (K2 - k2)) x`.
    pub fn effective_leader_gain(&self, follower_gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.gains.k1 - &self.m * (&self.gains.k2 - follower_gain)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn scalar(a: f64, b1: f64, b2: f64, q1: f64, q2: f64, gamma: f64) -> GameSpec {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        GameSpec {
            a: s(a),
            b1: s(b1),
            b2: s(b2),
            q1: s(q1),
            q2: s(q2),
            r11: s(1.0),
            r12: s(1.0),
            r21: s(1.0),
            r22: s(1.0),
            gamma,
            x0: DVector::from_element(1, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::scalar;
    use super::*;
    use proptest::prelude::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn scalar_game_validates() {
        let g = validate_game(&scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.9)).unwrap();
        assert_eq!(g.dims().l(), 3);
        assert_eq!(g.dims().theta_len(), 6);
    }

    #[test]
    fn singular_input_weight_is_rejected() {
        let mut s = scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.9);
        s.r11 = DMatrix::zeros(1, 1);
        assert_eq!(
            validate_game(&s),
            Err(Error::NotPositiveDefinite("R11".into()))
        );
    }

    #[test]
    fn discount_boundary_is_rejected() {
        let s = scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(validate_game(&s), Err(Error::DiscountOutOfRange(1.0)));
        let s = scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0);
        assert!(matches!(
            validate_game(&s),
            Err(Error::DiscountOutOfRange(_))
        ));
    }

    #[test]
    fn asymmetric_and_indefinite_weights() {
        let mut s = scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.9);
        s.a = DMatrix::identity(2, 2);
        s.b1 = DMatrix::from_element(2, 1, 1.0);
        s.b2 = DMatrix::from_element(2, 1, 1.0);
        s.x0 = DVector::zeros(2);
        s.q1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        s.q2 = DMatrix::identity(2, 2);
        assert_eq!(validate_game(&s), Err(Error::NotSymmetric("Q1".into())));
        s.q1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            validate_game(&s),
            Err(Error::NotPositiveSemidefinite("Q1".into()))
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut s = scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.9);
        s.b1 = DMatrix::zeros(2, 1);
        assert!(matches!(
            validate_game(&s),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut s = scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.9);
        s.r12 = DMatrix::identity(2, 2);
        assert!(matches!(
            validate_game(&s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stage_costs() {
        let g = validate_game(&scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.9)).unwrap();
        let c = |p, x, u, v| one_step_cost(&g, p, &v1(x), &v1(u), &v1(v)).unwrap();
        assert_eq!(c(Player::Leader, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(c(Player::Leader, 1.0, 1.0, 1.0), 3.0);
        assert_eq!(c(Player::Follower, 2.0, 0.0, 0.0), 4.0);
        assert!(one_step_cost(&g, Player::Leader, &DVector::zeros(2), &v1(0.0), &v1(0.0)).is_err());
    }

    #[test]
    fn validation_is_idempotent() {
        let g = validate_game(&scalar(0.5, 1.0, 2.0, 1.0, 3.0, 0.9)).unwrap();
        let again = validate_game(g.spec()).unwrap();
        assert_eq!(g, again);
    }

    proptest! {
        #[test]
        fn stage_cost_is_nonnegative(
            x in -10.0..10.0f64, u in -10.0..10.0f64, v in -10.0..10.0f64,
            q in 0.0..5.0f64, r in 0.01..5.0f64,
        ) {
            let mut s = scalar(1.0, 1.0, 1.0, q, q, 0.9);
            s.r11 = DMatrix::from_element(1, 1, r);
            let g = validate_game(&s).unwrap();
            for p in [Player::Leader, Player::Follower] {
                prop_assert!(one_step_cost(&g, p, &v1(x), &v1(u), &v1(v)).unwrap() >= 0.0);
            }
        }

        #[test]
        fn incentive_reduces_to_team_action(
            k in proptest::collection::vec(-3.0..3.0f64, 12),
            x in proptest::collection::vec(-5.0..5.0f64, 3),
        ) {
            let k1 = DMatrix::from_row_slice(2, 3, &k[0..6]);
            let k2 = DMatrix::from_row_slice(1, 3, &k[6..9]);
            let m = DMatrix::from_row_slice(2, 1, &k[9..11]);
            let x = DVector::from_row_slice(&x);
            let policy = IncentivePolicy::new(GainPair::new(k1.clone(), k2.clone()), m);
            let v = -(&k2 * &x);
            let u = policy.leader_action(&x, &v);
            let expected = -(&k1 * &x);
            let scale = expected.norm().max(1e-300);
            prop_assert!((u - &expected).norm() <= 1e-13 * scale.max(1.0));
        }
    }
}
