use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use super::config::{Mode, ScenarioConfig};
use super::error::RunError;
use super::report::{CompareSection, LearnSection, RunReport, SimulateSection, SolveSection};
use crate::adp::{self, ConvergenceLog, IncentiveLearning, TeamLearning};
use crate::game::{CostWeights, GainPair, IncentivePolicy};
use crate::linalg;
use crate::model_based::{self, TeamSolution};
use crate::plant::{self, FollowerPolicy, LeaderPolicy, PlantHandle, Tail, Trajectory};

pub const REPORT_FILE: &str = "report.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const INCENTIVE_CONVERGENCE_FILE: &str = "convergence_incentive.csv";

/// Gain-alignment tolerance for the model-based best-response check.
const ALIGNMENT_TOL: f64 = 1e-8;

struct Model {
    team: TeamSolution,
    pv: DMatrix<f64>,
    m: DMatrix<f64>,
}

fn solve_model(cfg: &ScenarioConfig) -> Result<Model, RunError> {
    let team = model_based::solve_team_optimal(&cfg.game, cfg.solver()).map_err(RunError::at("team-optimal solve"))?;
    let follower_game = cfg.follower_game()?;
    let pv = model_based::solve_follower_value(&follower_game, &team.gains, cfg.solver())
        .map_err(RunError::at("follower value"))?;
    let m = model_based::incentive_matrix(&follower_game, &team.gains, &pv)
        .map_err(RunError::at("incentive matrix"))?;
    Ok(Model { team, pv: pv.pv, m })
}

fn solve_section(cfg: &ScenarioConfig, model: &Model) -> Result<SolveSection, RunError> {
    let policy = IncentivePolicy::new(model.team.gains.clone(), model.m.clone());
    let br = model_based::follower_best_response(&cfg.follower_game()?, &policy, cfg.solver())
        .map_err(RunError::at("follower best response"))?;
    let alignment_error = (&br.k2 - &model.team.gains.k2).amax();
    Ok(SolveSection {
        p: model.team.p.clone(),
        k1: model.team.gains.k1.clone(),
        k2: model.team.gains.k2.clone(),
        iterations: model.team.iterations,
        riccati_residual: model.team.residual,
        pv: model.pv.clone(),
        m: model.m.clone(),
        best_response_k2: br.k2,
        alignment_error,
        aligned: alignment_error <= ALIGNMENT_TOL,
    })
}

fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm()
}

fn write_log(log: &ConvergenceLog, path: &Path) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| RunError::io(path, e))?;
    log.write_csv(BufWriter::new(file)).map_err(|e| RunError::io(path, e))
}

struct Learned {
    team: TeamLearning,
    incentive: IncentiveLearning,
}

fn learn(cfg: &ScenarioConfig, model: &Model, out: &Path) -> Result<(Learned, LearnSection), RunError> {
    let plant = PlantHandle::new(&cfg.game, cfg.learner().seed);
    let gamma = cfg.game.gamma();
    let mut team = adp::algorithm1_team_optimal(&plant, &cfg.game.leader_weights(), gamma, cfg.learner())
        .map_err(RunError::at("team-optimal learning"))?;
    team.log.attach_reference(&model.team.gains);
    write_log(&team.log, &out.join(CONVERGENCE_FILE))?;
    let incentive = adp::algorithm2_incentive(&plant, &cfg.follower, gamma, &team.gains, cfg.learner())
        .map_err(RunError::at("incentive learning"))?;
    write_log(&incentive.log, &out.join(INCENTIVE_CONVERGENCE_FILE))?;
    let reference = &model.team.gains;
    let section = LearnSection {
        samples: cfg.learner().sample_count(cfg.game.dims()),
        h: team.h.matrix().clone(),
        k1: team.gains.k1.clone(),
        k2: team.gains.k2.clone(),
        iterations: team.log.iterations(),
        h_v: incentive.h_v.matrix().clone(),
        m: incentive.m.clone(),
        incentive_iterations: incentive.log.iterations(),
        k1_rel_err: rel_err(&team.gains.k1, &reference.k1),
        k2_rel_err: rel_err(&team.gains.k2, &reference.k2),
        m_rel_err: (&incentive.m - &model.m).norm() / (1.0 + model.m.norm()),
        convergence_log: CONVERGENCE_FILE.into(),
        incentive_convergence_log: INCENTIVE_CONVERGENCE_FILE.into(),
    };
    Ok((Learned { team, incentive }, section))
}

/// Team play, the follower's best response to the plain team gain, and the
/// follower's best response to the incentive policy, all scored by the leader.
fn simulate(
    cfg: &ScenarioConfig,
    p_opt: &DMatrix<f64>,
    gains: &GainPair,
    m: &DMatrix<f64>,
    out: &Path,
    tag: &str,
) -> Result<SimulateSection, RunError> {
    let follower_game = cfg.follower_game()?;
    let plant = PlantHandle::new(&cfg.game, cfg.learner().seed);
    let leader_w = cfg.game.leader_weights();
    let horizon = cfg.raw.scenario.horizon;
    let x0 = cfg.game.x0();
    let gamma = cfg.game.gamma();
    let dims = cfg.game.dims();

    let plain = IncentivePolicy::new(gains.clone(), DMatrix::zeros(dims.m1, dims.m2));
    let attacked_gain = model_based::follower_best_response(&follower_game, &plain, cfg.solver())
        .map_err(RunError::at("attacked follower response"))?
        .k2;
    let incentive = IncentivePolicy::new(gains.clone(), m.clone());
    let incentive_gain = model_based::follower_best_response(&follower_game, &incentive, cfg.solver())
        .map_err(RunError::at("incentivized follower response"))?
        .k2;

    let runs = [
        ("team", LeaderPolicy::Linear(gains.k1.clone()), gains.k2.clone()),
        ("attacked", LeaderPolicy::Linear(gains.k1.clone()), attacked_gain.clone()),
        ("incentive", LeaderPolicy::Incentive(incentive), incentive_gain.clone()),
    ];
    let mut costs = Vec::with_capacity(3);
    let mut files = Vec::with_capacity(3);
    for (name, leader, k2) in runs {
        let traj = plant::rollout(&plant, &leader, &FollowerPolicy::Linear(k2), x0, horizon)
            .map_err(RunError::at("rollout"))?;
        costs.push(plant::evaluate_cost(&traj, &leader_w, gamma, Tail::Lyapunov).map_err(RunError::at("cost"))?);
        let file = format!("trajectory_{name}{tag}.csv");
        write_trajectory(&traj, &out.join(&file), &leader_w, &cfg.follower)?;
        files.push(file);
    }
    Ok(SimulateSection {
        horizon,
        j1_optimal: linalg::quad(p_opt, x0),
        j1_team: costs[0],
        j1_attacked: costs[1],
        j1_incentive: costs[2],
        attacked_follower_gain: attacked_gain,
        incentive_follower_gain: incentive_gain,
        trajectories: files,
    })
}

fn write_trajectory(
    traj: &Trajectory,
    path: &Path,
    leader: &CostWeights,
    follower: &CostWeights,
) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| RunError::io(path, e))?;
    traj.write_csv(BufWriter::new(file), leader, follower)
        .map_err(|e| RunError::io(path, e))
}

/// Runs the scenario, writing `report.json` and the CSV logs into `out`.
pub fn run(cfg: &ScenarioConfig, out: &Path) -> Result<RunReport, RunError> {
    let start = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| RunError::io(out, e))?;
    let mode = cfg.mode();
    let model = solve_model(cfg)?;
    let mut report = RunReport {
        mode,
        seed: cfg.learner().seed,
        config: cfg.raw.clone(),
        solve: None,
        learn: None,
        simulate: None,
        simulate_learned: None,
        compare: None,
        wall_clock_seconds: 0.0,
    };
    match mode {
        Mode::Solve => report.solve = Some(solve_section(cfg, &model)?),
        Mode::Learn => report.learn = Some(learn(cfg, &model, out)?.1),
        Mode::Simulate => {
            report.simulate = Some(simulate(cfg, &model.team.p, &model.team.gains, &model.m, out, "")?)
        }
        Mode::Compare => {
            report.solve = Some(solve_section(cfg, &model)?);
            let (learned, section) = learn(cfg, &model, out)?;
            let sim = simulate(cfg, &model.team.p, &model.team.gains, &model.m, out, "")?;
            let sim_learned = simulate(
                cfg,
                &model.team.p,
                &learned.team.gains,
                &learned.incentive.m,
                out,
                "_learned",
            )?;
            report.compare = Some(CompareSection {
                k1_rel_err: section.k1_rel_err,
                k2_rel_err: section.k2_rel_err,
                m_rel_err: section.m_rel_err,
                j1_incentive_gap: sim_learned.j1_incentive - sim.j1_incentive,
                j1_attacked_gap: sim_learned.j1_attacked - sim.j1_attacked,
            });
            report.learn = Some(section);
            report.simulate = Some(sim);
            report.simulate_learned = Some(sim_learned);
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    let path = out.join(REPORT_FILE);
    let json = report.to_json().map_err(|e| RunError::io(&path, e))?;
    std::fs::write(&path, json).map_err(|e| RunError::io(&path, e))?;
    Ok(report)
}
