//! Scenario files: TOML with row-major nested arrays for every matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::error::RunError;
use crate::adp::LearnerConfig;
use crate::error::Error;
use crate::game::{validate_game, CostWeights, GameSpec, ValidatedGame};
use crate::model_based::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Solve,
    Learn,
    Simulate,
    Compare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Learn => "learn",
            Mode::Simulate => "simulate",
            Mode::Compare => "compare",
        }
    }
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub a: Rows,
    pub b1: Rows,
    pub b2: Rows,
    pub q1: Rows,
    pub q2: Rows,
    pub r11: Rows,
    pub r12: Rows,
    pub r21: Rows,
    pub r22: Rows,
    pub gamma: f64,
    pub x0: Vec<f64>,
}

/// Substitute follower cost, modeling a compromised follower controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerWeights {
    pub q2: Rows,
    pub r21: Rows,
    pub r22: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub mode: Mode,
    /// Rollout length; the remainder is closed with the exact tail value.
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacker_weights: Option<AttackerWeights>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            mode: Mode::Solve,
            horizon: 50,
            attacker_weights: None,
        }
    }
}

/// The file contents as written, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub game: GameSection,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scenario: ScenarioSection,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    /// Applies to both the solver tolerance and the learner threshold.
    pub tol: Option<f64>,
    /// Applies to both the solver and the learner iteration caps.
    pub max_iters: Option<usize>,
}

impl RawConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(mode) = o.mode {
            self.scenario.mode = mode;
        }
        if let Some(seed) = o.seed {
            self.learner.seed = seed;
        }
        if let Some(tol) = o.tol {
            self.solver.tol = tol;
            self.learner.epsilon = tol;
        }
        if let Some(iters) = o.max_iters {
            self.solver.max_iters = iters;
            self.learner.max_policy_iters = iters;
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub raw: RawConfig,
    pub game: ValidatedGame,
    /// The follower's actual cost: the attacker weights when given, else the game's.
    pub follower: CostWeights,
}

impl ScenarioConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, RunError> {
        let g = &raw.game;
        let spec = GameSpec {
            a: matrix("game.a", &g.a)?,
            b1: matrix("game.b1", &g.b1)?,
            b2: matrix("game.b2", &g.b2)?,
            q1: matrix("game.q1", &g.q1)?,
            q2: matrix("game.q2", &g.q2)?,
            r11: matrix("game.r11", &g.r11)?,
            r12: matrix("game.r12", &g.r12)?,
            r21: matrix("game.r21", &g.r21)?,
            r22: matrix("game.r22", &g.r22)?,
            gamma: g.gamma,
            x0: DVector::from_column_slice(&g.x0),
        };
        let game = validate_game(&spec).map_err(RunError::Validation)?;
        raw.solver.validate().map_err(RunError::Validation)?;
        raw.learner.validate().map_err(RunError::Validation)?;
        let follower = match &raw.scenario.attacker_weights {
            Some(w) => CostWeights::new(
                matrix("scenario.attacker_weights.q2", &w.q2)?,
                matrix("scenario.attacker_weights.r21", &w.r21)?,
                matrix("scenario.attacker_weights.r22", &w.r22)?,
            )
            .validated(game.dims(), ["attacker Q2", "attacker R21", "attacker R22"])
            .map_err(RunError::Validation)?,
            None => game.follower_weights(),
        };
        Ok(Self {
            raw,
            game,
            follower,
        })
    }

    pub fn mode(&self) -> Mode {
        self.raw.scenario.mode
    }

    pub fn learner(&self) -> &LearnerConfig {
        &self.raw.learner
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.raw.solver
    }

    /// The game as the follower actually plays it.
    pub fn follower_game(&self) -> Result<ValidatedGame, RunError> {
        self.game
            .with_follower_weights(&self.follower)
            .map_err(RunError::Validation)
    }
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, RunError> {
    let invalid = |msg: String| RunError::Validation(Error::InvalidConfig(msg));
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(invalid(format!("{name} must be a non-empty array of rows")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(format!("{name} has rows of different lengths")));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

const TOP: &[&str] = &["game", "learner", "solver", "scenario"];
const GAME: &[&str] = &["a", "b1", "b2", "q1", "q2", "r11", "r12", "r21", "r22", "gamma", "x0"];
const LEARNER: &[&str] = &[
    "epsilon",
    "max_policy_iters",
    "samples",
    "sigma1",
    "sigma2",
    "seed",
    "state_sample_radius",
    "ridge",
    "incentive_tol",
];
const SOLVER: &[&str] = &["tol", "max_iters"];
const SCENARIO: &[&str] = &["mode", "horizon", "attacker_weights"];
const ATTACKER: &[&str] = &["q2", "r21", "r22"];

fn known_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => TOP,
        "game" => GAME,
        "learner" => LEARNER,
        "solver" => SOLVER,
        "scenario" => SCENARIO,
        "scenario.attacker_weights" => ATTACKER,
        _ => return None,
    })
}

/// First key, in file order, that the schema does not know.
fn find_unknown(table: &toml::Table, path: &str) -> Option<String> {
    let known = known_keys(path)?;
    for (key, value) in table {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        if !known.contains(&key.as_str()) {
            return Some(full);
        }
        if let toml::Value::Table(inner) = value {
            if let Some(found) = find_unknown(inner, &full) {
                return Some(found);
            }
        }
    }
    None
}

fn parse_error(text: &str, err: &toml::de::Error) -> RunError {
    let offset = err.span().map_or(0, |s| s.start).min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    RunError::Parse {
        line,
        column,
        message: err.message().trim().to_string(),
    }
}

/// Parses the TOML text without touching the file system.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<ScenarioConfig, RunError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    if let Some(path) = find_unknown(&table, "") {
        return Err(RunError::UnknownField(path));
    }
    let mut raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    raw.apply(overrides);
    ScenarioConfig::from_raw(raw)
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[game]
a = [[1.0]]
b1 = [[1.0]]
b2 = [[1.0]]
q1 = [[1.0]]
q2 = [[2.0]]
r11 = [[1.0]]
r12 = [[1.0]]
r21 = [[1.0]]
r22 = [[1.0]]
gamma = 0.9
x0 = [1.0]
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(cfg.mode(), Mode::Solve);
        assert_eq!(cfg.raw.scenario.horizon, 50);
        assert_eq!(cfg.learner(), &LearnerConfig::default());
        assert_eq!(cfg.solver(), &SolverConfig::default());
        assert_eq!(cfg.follower, cfg.game.follower_weights());
    }

    #[test]
    fn bad_discount_is_a_validation_error() {
        let text = MINIMAL.replace("gamma = 0.9", "gamma = 1.5");
        assert_eq!(
            parse_config(&text, &Overrides::default()).unwrap_err(),
            RunError::Validation(Error::DiscountOutOfRange(1.5))
        );
    }

    #[test]
    fn misspelled_key_is_reported() {
        let text = MINIMAL.replace("gamma = 0.9", "ganma = 0.9");
        assert_eq!(
            parse_config(&text, &Overrides::default()).unwrap_err(),
            RunError::UnknownField("game.ganma".into())
        );
        let text = format!("{MINIMAL}\n[scenario.attacker_weights]\nq2 = [[1.0]]\nr21 = [[1.0]]\nr22 = [[1.0]]\nr23 = 1\n");
        assert_eq!(
            parse_config(&text, &Overrides::default()).unwrap_err(),
            RunError::UnknownField("scenario.attacker_weights.r23".into())
        );
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let text = MINIMAL.replace("gamma = 0.9", "gamma = = 0.9");
        match parse_config(&text, &Overrides::default()).unwrap_err() {
            RunError::Parse { line, .. } => assert_eq!(line, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = MINIMAL.replace("a = [[1.0]]", "a = [[1.0, 2.0], [3.0]]");
        assert!(matches!(
            parse_config(&text, &Overrides::default()).unwrap_err(),
            RunError::Validation(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            mode: Some(Mode::Learn),
            seed: Some(9),
            tol: Some(1e-6),
            max_iters: Some(7),
        };
        let cfg = parse_config(MINIMAL, &o).unwrap();
        assert_eq!(cfg.mode(), Mode::Learn);
        assert_eq!(cfg.learner().seed, 9);
        assert_eq!((cfg.solver().tol, cfg.learner().epsilon), (1e-6, 1e-6));
        assert_eq!((cfg.solver().max_iters, cfg.learner().max_policy_iters), (7, 7));
    }

    #[test]
    fn attacker_weights_replace_the_follower_cost() {
        let text = format!("{MINIMAL}\n[scenario.attacker_weights]\nq2 = [[5.0]]\nr21 = [[1.0]]\nr22 = [[3.0]]\n");
        let cfg = parse_config(&text, &Overrides::default()).unwrap();
        assert_eq!(cfg.follower.q[(0, 0)], 5.0);
        assert_eq!(cfg.follower.r_v[(0, 0)], 3.0);
        assert_eq!(cfg.game.follower_weights().q[(0, 0)], 2.0);
    }
}
