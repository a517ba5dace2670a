mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use stackelberg::adp::{algorithm1_from_batch, gains_from_h, ls_policy_eval, LearnerConfig, QMatrix};
use stackelberg::game::CostWeights;
use stackelberg::model_based::{
    follower_best_response, incentive_matrix, policy_value, q_matrix_from_value, riccati_residual,
    solve_follower_value, solve_team_optimal, value_iteration_step, SolverConfig,
};
use stackelberg::oracle::finite_horizon_dp;
use stackelberg::plant::{
    collect_batch, collect_batch_from_inputs, evaluate_cost, probing_inputs, rollout, FollowerPolicy, LeaderPolicy,
    PlantHandle, Tail,
};
use stackelberg::{linalg, Error, GainPair, IncentivePolicy, ValidatedGame};

fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-11,
        max_iters: 100_000,
    }
}

/// Plain discounted LQR by value iteration, independent of the game solvers.
fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(a.nrows(), a.nrows());
    let gain = |p: &DMatrix<f64>| {
        let lhs = r + b.transpose() * p * b * gamma;
        lhs.lu().solve(&(b.transpose() * p * a * gamma)).unwrap()
    };
    for _ in 0..200_000 {
        let k = gain(&p);
        let a_cl = a - b * &k;
        let next = q + k.transpose() * r * &k + a_cl.transpose() * &p * &a_cl * gamma;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).norm();
        p = next;
        if delta <= 1e-12 * (1.0 + p.norm()) {
            break;
        }
    }
    gain(&p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riccati_defect_is_small(seed in 0u64..10_000) {
        let g = common::random_game(seed);
        let team = solve_team_optimal(&g, &SolverConfig::default()).unwrap();
        prop_assert!(riccati_residual(&g, &g.leader_weights(), &team.p, &team.gains) <= 1e-8);
    }

    #[test]
    fn value_iteration_is_monotone(seed in 0u64..10_000) {
        let g = common::random_game(seed);
        let n = g.dims().n;
        let mut p = DMatrix::zeros(n, n);
        for _ in 0..60 {
            let next = value_iteration_step(&g, &p).unwrap();
            prop_assert!(linalg::min_eigenvalue(&(&next - &p)) >= -1e-10 * (1.0 + next.norm()));
            p = next;
        }
    }

    #[test]
    fn dynamic_programming_settles_on_the_solver_value(seed in 0u64..10_000) {
        let g = common::random_game(seed);
        let team = solve_team_optimal(&g, &tight()).unwrap();
        let dp = finite_horizon_dp(&g, &g.leader_weights(), team.iterations + 400).unwrap();
        let settled = dp
            .p_sequence
            .windows(2)
            .position(|w| (&w[1] - &w[0]).norm() <= 1e-9)
            .expect("dp settles within the horizon");
        for p_t in &dp.p_sequence[settled + 1..] {
            prop_assert!((p_t - &team.p).norm() <= 1e-6);
        }
        for w in dp.p_sequence.windows(2) {
            prop_assert!(linalg::min_eigenvalue(&(&w[1] - &w[0])) >= -1e-10 * (1.0 + w[1].norm()));
        }
    }

    #[test]
    fn each_gain_is_a_best_response_to_the_other(seed in 0u64..10_000) {
        let g = common::random_game(seed);
        let w = g.leader_weights();
        let team = solve_team_optimal(&g, &tight()).unwrap();
        let (k1, k2) = (&team.gains.k1, &team.gains.k2);
        let k1_pbp = lqr_gain(&(g.a() - g.b2() * k2), g.b1(), &(&w.q + k2.transpose() * &w.r_v * k2), &w.r_u, g.gamma());
        let k2_pbp = lqr_gain(&(g.a() - g.b1() * k1), g.b2(), &(&w.q + k1.transpose() * &w.r_u * k1), &w.r_v, g.gamma());
        prop_assert!((&k1_pbp - k1).amax() <= 1e-8 * (1.0 + k1.amax()));
        prop_assert!((&k2_pbp - k2).amax() <= 1e-8 * (1.0 + k2.amax()));
    }

    #[test]
    fn incentive_aligns_the_follower(seed in 0u64..10_000) {
        let g = common::random_square_game(seed);
        let team = solve_team_optimal(&g, &tight()).unwrap();
        let pv = solve_follower_value(&g, &team.gains, &tight()).unwrap();
        match incentive_matrix(&g, &team.gains, &pv) {
            Ok(m) => {
                // Near-singular relations give huge M. The follower's value then carries
                // rounding of order eps * |M|^2, so the stop rule and the domain follow that.
                prop_assume!(m.norm() <= 1e5);
                let cfg = SolverConfig { tol: tight().tol.max(1e-15 * m.norm_squared()), ..tight() };
                let br = follower_best_response(&g, &IncentivePolicy::new(team.gains.clone(), m), &cfg).unwrap();
                prop_assert!((&br.k2 - &team.gains.k2).amax() <= 1e-8);
            }
            Err(Error::IncentiveInfeasible { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn rollouts_follow_the_dynamics(seed in 0u64..10_000, k1 in -1.0..1.0f64, k2 in -1.0..1.0f64, m in -2.0..2.0f64) {
        let g = common::random_game(seed);
        let d = g.dims();
        let gains = GainPair::new(DMatrix::from_element(d.m1, d.n, k1), DMatrix::from_element(d.m2, d.n, k2));
        let policy = IncentivePolicy::new(gains, DMatrix::from_element(d.m1, d.m2, m));
        let follower = FollowerPolicy::Linear(DMatrix::from_element(d.m2, d.n, 0.3 * k2));
        let plant = PlantHandle::new(&g, seed);
        let t = rollout(&plant, &LeaderPolicy::Incentive(policy), &follower, g.x0(), 8).unwrap();
        for k in 0..8 {
            let next = g.a() * &t.states[k] + g.b1() * &t.u_inputs[k] + g.b2() * &t.v_inputs[k];
            prop_assert_eq!(&t.states[k + 1], &next);
        }
    }

    #[test]
    fn tail_cost_does_not_depend_on_horizon(seed in 0u64..10_000) {
        let g = common::random_game(seed);
        let team = solve_team_optimal(&g, &SolverConfig::default()).unwrap();
        let plant = PlantHandle::new(&g, 0);
        let w = g.leader_weights();
        let cost = |horizon| {
            let t = rollout(
                &plant,
                &LeaderPolicy::Linear(team.gains.k1.clone()),
                &FollowerPolicy::Linear(team.gains.k2.clone()),
                g.x0(),
                horizon,
            )
            .unwrap();
            evaluate_cost(&t, &w, g.gamma(), Tail::Lyapunov).unwrap()
        };
        let (j10, j50) = (cost(10), cost(50));
        prop_assert!((j10 - j50).abs() <= 1e-10 * (1.0 + j10.abs()));
    }

    #[test]
    fn batches_are_seed_deterministic(seed in 0u64..10_000, batch_seed: u64) {
        let g = common::random_game(seed);
        let plant = PlantHandle::new(&g, 0);
        let gains = GainPair::zeros(g.dims());
        let a = collect_batch(&plant, &gains, 0.05, 0.1, 12, 1.0, batch_seed).unwrap();
        let b = collect_batch(&plant, &gains, 0.05, 0.1, 12, 1.0, batch_seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn small_game(seed: u64) -> ValidatedGame {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    common::random_game_with(&mut rng, 1 + (seed % 2) as usize, 1, 1, common::GAMMAS[(seed % 3) as usize])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noise_free_learning_is_exact(seed in 0u64..10_000) {
        let g = small_game(seed);
        let d = g.dims();
        let w = g.leader_weights();
        let plant = PlantHandle::new(&g, 0);
        let batch = collect_batch_from_inputs(&plant, &probing_inputs(d, 4 * d.theta_len(), 1.0)).unwrap();
        let cfg = LearnerConfig::default();

        let dp = finite_horizon_dp(&g, &w, 8).unwrap();
        let mut h = QMatrix::zeros(d);
        let mut gains = GainPair::zeros(d);
        for i in 1..=8 {
            let next = ls_policy_eval(&batch, &h, &gains, &w, g.gamma(), &cfg).unwrap();
            let exact = q_matrix_from_value(&g, &w, &h.contract(&gains));
            prop_assert!((next.matrix() - &exact).amax() <= 1e-9 * (1.0 + exact.amax()));
            gains = gains_from_h(&next).unwrap();
            h = next;
            prop_assert!((h.contract(&gains) - &dp.p_sequence[i]).amax() <= 1e-6);
        }

        let team = solve_team_optimal(&g, &tight()).unwrap();
        let h_star = QMatrix::new(q_matrix_from_value(&g, &w, &team.p), d).unwrap();
        let mapped = ls_policy_eval(&batch, &h_star, &team.gains, &w, g.gamma(), &cfg).unwrap();
        prop_assert!((mapped.matrix() - h_star.matrix()).amax() <= 1e-8 * (1.0 + h_star.matrix().amax()));
        let g_star = gains_from_h(&h_star).unwrap();
        prop_assert!((&g_star.k1 - &team.gains.k1).amax() <= 1e-9 * (1.0 + team.gains.k1.amax()));
        prop_assert!((&g_star.k2 - &team.gains.k2).amax() <= 1e-9 * (1.0 + team.gains.k2.amax()));
    }

    #[test]
    fn learned_gains_match_the_model(seed in 0u64..10_000) {
        let g = small_game(seed);
        let d = g.dims();
        let plant = PlantHandle::new(&g, 0);
        let batch = collect_batch(&plant, &GainPair::zeros(d), 0.05, 0.05, 4 * d.theta_len(), 1.0, seed).unwrap();
        let cfg = LearnerConfig { max_policy_iters: 10_000, ..LearnerConfig::default() };
        let learned = algorithm1_from_batch(&batch, d, &g.leader_weights(), g.gamma(), &cfg).unwrap();
        let team = solve_team_optimal(&g, &tight()).unwrap();
        prop_assert!((&learned.gains.k1 - &team.gains.k1).norm() <= 1e-2 * team.gains.k1.norm().max(1e-3));
        prop_assert!((&learned.gains.k2 - &team.gains.k2).norm() <= 1e-2 * team.gains.k2.norm().max(1e-3));
    }
}

#[test]
fn follower_strictly_prefers_the_team_gain_under_incentive() {
    let g = common::standard_scalar();
    let team = solve_team_optimal(&g, &tight()).unwrap();
    let pv = solve_follower_value(&g, &team.gains, &tight()).unwrap();
    let m = incentive_matrix(&g, &team.gains, &pv).unwrap();
    let policy = IncentivePolicy::new(team.gains.clone(), m);
    let fw: CostWeights = g.follower_weights();
    let k2 = team.gains.k2[(0, 0)];
    let follower_cost = |k: f64| {
        let kf = DMatrix::from_element(1, 1, k);
        let gains = GainPair::new(policy.effective_leader_gain(&kf), kf);
        linalg::quad(&policy_value(&g, &fw, &gains, &tight()).unwrap(), g.x0())
    };
    let at_team = follower_cost(k2);
    for step in 1..=200 {
        for sign in [-1.0, 1.0] {
            let k = k2 + sign * step as f64 * 1e-3;
            assert!(follower_cost(k) > at_team, "deviation to {k} is not worse");
        }
    }
}

#[test]
fn attacked_leader_pays_more_and_incentive_restores_the_optimum() {
    let g = common::standard_scalar();
    let team = solve_team_optimal(&g, &tight()).unwrap();
    let pv = solve_follower_value(&g, &team.gains, &tight()).unwrap();
    let m = incentive_matrix(&g, &team.gains, &pv).unwrap();
    let plant = PlantHandle::new(&g, 0);
    let w = g.leader_weights();
    let optimum = linalg::quad(&team.p, g.x0());
    let leader_cost = |leader: LeaderPolicy, k2: DMatrix<f64>| {
        let t = rollout(&plant, &leader, &FollowerPolicy::Linear(k2), g.x0(), 30).unwrap();
        evaluate_cost(&t, &w, g.gamma(), Tail::Lyapunov).unwrap()
    };

    let plain = IncentivePolicy::new(team.gains.clone(), DMatrix::zeros(1, 1));
    let selfish = follower_best_response(&g, &plain, &tight()).unwrap().k2;
    let attacked = leader_cost(LeaderPolicy::Linear(team.gains.k1.clone()), selfish);
    assert!(attacked > optimum + 1e-6);

    let incentive = IncentivePolicy::new(team.gains.clone(), m);
    let aligned = follower_best_response(&g, &incentive, &tight()).unwrap().k2;
    let restored = leader_cost(LeaderPolicy::Incentive(incentive), aligned);
    assert!((restored - optimum).abs() <= 1e-8);
}
