//! Incentive Stackelberg games on discrete-time linear-quadratic systems.
//!
//! A leader designs an affine feedback `u = -K1 x + M (v + K2 x)` that makes the
//! team-optimal gain `K2` the follower's best response. The crate provides the
//! model-based solution, a brute-force oracle, a black-box plant simulator and a
//! model-free Q-learning route to the same quantities.

pub mod adp;
pub mod error;
pub mod game;
pub mod linalg;
pub mod model_based;
pub mod oracle;
pub mod plant;
pub mod runner;

pub use error::{Error, Result};
pub use game::{validate_game, CostWeights, Dims, GainPair, GameSpec, IncentivePolicy, Player, ValidatedGame};
