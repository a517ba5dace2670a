//! Instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stackelberg::{validate_game, GameSpec, ValidatedGame};

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let c = normal(rng, n, n);
    &c * c.transpose() * 0.5 + DMatrix::identity(n, n) * floor
}

pub const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];

/// Random game with `n <= 4`, `m1, m2 <= 2`, discount cycling through `GAMMAS`.
/// Random input matrices make the pair controllable with probability one.
pub fn random_game(index: u64) -> ValidatedGame {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + index);
    let n = rng.random_range(1..=4);
    let m1 = rng.random_range(1..=2);
    let m2 = rng.random_range(1..=2);
    random_game_with(&mut rng, n, m1, m2, GAMMAS[index as usize % 3])
}

/// Random game whose leader has as many inputs as states, so `M'G = C` is square.
pub fn random_square_game(index: u64) -> ValidatedGame {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11_0000 + index);
    let n = rng.random_range(1..=2);
    let m2 = rng.random_range(1..=2);
    random_game_with(&mut rng, n, n, m2, GAMMAS[index as usize % 3])
}

pub fn random_game_with(rng: &mut ChaCha8Rng, n: usize, m1: usize, m2: usize, gamma: f64) -> ValidatedGame {
    let spec = GameSpec {
        a: normal(rng, n, n) * (1.1 / (n as f64).sqrt()),
        b1: normal(rng, n, m1),
        b2: normal(rng, n, m2),
        q1: psd(rng, n, 0.1),
        q2: psd(rng, n, 0.1),
        r11: psd(rng, m1, 0.5),
        r12: psd(rng, m2, 0.5),
        r21: psd(rng, m1, 0.5),
        r22: psd(rng, m2, 0.5),
        gamma,
        x0: DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    validate_game(&spec).expect("generated game is valid")
}

pub fn scalar_spec(a: f64, b1: f64, b2: f64, q1: f64, q2: f64, gamma: f64) -> GameSpec {
    let one = || DMatrix::from_element(1, 1, 1.0);
    GameSpec {
        a: DMatrix::from_element(1, 1, a),
        b1: DMatrix::from_element(1, 1, b1),
        b2: DMatrix::from_element(1, 1, b2),
        q1: DMatrix::from_element(1, 1, q1),
        q2: DMatrix::from_element(1, 1, q2),
        r11: one(),
        r12: one(),
        r21: one(),
        r22: one(),
        gamma,
        x0: DVector::from_element(1, 1.0),
    }
}

/// Leader weights 1/1/1, follower state weight 2, discount 0.9.
pub fn standard_scalar() -> ValidatedGame {
    validate_game(&scalar_spec(1.0, 1.0, 1.0, 1.0, 2.0, 0.9)).unwrap()
}

/// Two states, one input each; the follower weights admit an exact incentive matrix.
pub fn two_state() -> ValidatedGame {
    validate_game(&GameSpec {
        a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.95]),
        b1: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        b2: DMatrix::from_row_slice(2, 1, &[0.5, 0.2]),
        q1: DMatrix::identity(2, 2),
        q2: DMatrix::from_diagonal(&DVector::from_row_slice(&[5.255971198721195, 0.5])),
        r11: DMatrix::identity(1, 1),
        r12: DMatrix::identity(1, 1),
        r21: DMatrix::identity(1, 1),
        r22: DMatrix::from_element(1, 1, 4.0),
        gamma: 0.9,
        x0: DVector::from_row_slice(&[1.0, -1.0]),
    })
    .unwrap()
}

pub const SCALAR_TOML: &str = r#"
[game]
a = [[1.0]]
b1 = [[1.0]]
b2 = [[1.0]]
q1 = [[1.0]]
q2 = [[1.0]]
r11 = [[1.0]]
r12 = [[1.0]]
r21 = [[1.0]]
r22 = [[1.0]]
gamma = 0.9
x0 = [1.0]

[learner]
seed = 5

[scenario]
horizon = 40

[scenario.attacker_weights]
q2 = [[2.0]]
r21 = [[1.0]]
r22 = [[1.0]]
"#;
