use nalgebra::{DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssc_mpc::chance::{ellipse_value, SafetyEllipse};
use ssc_mpc::model::{
    step_agent, AgentInput, AgentState, ErrorCovariance, LinearModel, ManeuverParams, ObstacleModel,
    RoadGeometry,
};
use ssc_mpc::ocp::{
    build_problem, predict_noise_scenarios, predict_obstacles, recheck, solve, solve_recovery,
    solve_with_recovery, Bounds, ControllerMode, ObstaclePrediction, OcpConfig, OcpProblem, SolveStatus,
};
use ssc_mpc::task::Task;

const DT: f64 = 0.2;

fn lane_refs(n: usize, vx: f64, y: f64) -> Vec<AgentState> {
    vec![AgentState::new(0.0, vx, y, 0.0); n]
}

fn free_problem(ev0: AgentState, u_prev: AgentInput, refs: Vec<AgentState>, cfg: &OcpConfig) -> OcpProblem {
    build_problem(&LinearModel::point_mass(DT), ev0, u_prev, Vec::new(), refs, cfg).unwrap()
}

/// Static obstacle prediction: the same ellipse at every step.
fn static_obstacle(cx: f64, cy: f64, cfg: &OcpConfig, sigma: ErrorCovariance) -> ObstaclePrediction {
    let n = cfg.horizon;
    let e = SafetyEllipse::new(cx, cy, cfg.ellipse_a, cfg.ellipse_b).unwrap();
    ObstaclePrediction {
        obstacle: 0,
        tasks: vec![Task::KEEP],
        trajectories: vec![vec![AgentState::new(cx, 0.0, cy, 0.0); n]],
        covariances: vec![sigma; n],
        ellipses: vec![vec![e]; n],
        tighten: true,
    }
}

/// Unconstrained LQ tracking by stacked least squares. The input-to-state
/// map is obtained column by column from forward simulations.
fn lq_oracle(ev0: AgentState, refs: &[AgentState], cfg: &OcpConfig) -> Vec<f64> {
    let m = LinearModel::point_mass(DT);
    let n = refs.len();
    let roll = |u: &DVector<f64>| -> Vec<AgentState> {
        let mut s = ev0;
        (0..n)
            .map(|k| {
                s = step_agent(&m, s, AgentInput::new(u[2 * k], u[2 * k + 1]));
                s
            })
            .collect()
    };
    let base = roll(&DVector::zeros(2 * n));
    // residual r(U) = [Wq^½ (ξ_k − ref_k); R^½ u_k], weights are diagonal
    let rows = 3 * n + 2 * n;
    let mut a = DMatrix::zeros(rows, 2 * n);
    let mut b = DVector::zeros(rows);
    let wsqrt = |k: usize, i: usize| {
        let w = if k + 1 == n { cfg.s } else { cfg.q };
        w[(i, i)].sqrt()
    };
    for k in 0..n {
        for (row, i) in [(3 * k, 1), (3 * k + 1, 2), (3 * k + 2, 3)] {
            let e = base[k].to_vector() - refs[k].to_vector();
            b[row] = -wsqrt(k, i) * e[i];
        }
    }
    for j in 0..2 * n {
        let mut unit = DVector::zeros(2 * n);
        unit[j] = 1.0;
        let traj = roll(&unit);
        for k in 0..n {
            let d = traj[k].to_vector() - base[k].to_vector();
            for (row, i) in [(3 * k, 1), (3 * k + 1, 2), (3 * k + 2, 3)] {
                a[(row, j)] = wsqrt(k, i) * d[i];
            }
        }
        a[(3 * n + j, j)] = cfg.r[(j % 2, j % 2)].sqrt();
    }
    let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
    sol.iter().copied().collect()
}

#[test]
fn obstacle_free_matches_least_squares_oracle() {
    let cfg = OcpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let ev0 = AgentState::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(26.6..27.4),
            3.5 + rng.random_range(-0.05..0.05),
            rng.random_range(-0.01..0.01),
        );
        let refs = lane_refs(cfg.horizon, 27.0, 3.5);
        let want = lq_oracle(ev0, &refs, &cfg);
        // the instance must leave every bound inactive for the oracle to apply
        let b = cfg.bounds;
        let mut prev = [0.0, 0.0];
        let ok = want.chunks(2).all(|u| {
            let inside = u[0].abs() < 0.9 * b.ux.1
                && u[1].abs() < 0.9 * b.uy.1
                && (u[0] - prev[0]).abs() < 0.9 * b.dux.1
                && (u[1] - prev[1]).abs() < 0.9 * b.duy.1;
            prev = [u[0], u[1]];
            inside
        });
        assert!(ok, "instance activates bounds: {want:?}");
        let p = free_problem(ev0, AgentInput::ZERO, refs, &cfg);
        let sol = solve(&p, None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        for (k, u) in sol.inputs.iter().enumerate() {
            assert!((u.ux - want[2 * k]).abs() < 1e-5, "ux{k}: {} vs {}", u.ux, want[2 * k]);
            assert!((u.uy - want[2 * k + 1]).abs() < 1e-5, "uy{k}: {} vs {}", u.uy, want[2 * k + 1]);
        }
        assert!(recheck(&p, &sol.inputs, cfg.beta_ex).max() < 1e-6);
    }
}

#[test]
fn on_reference_without_obstacles_is_zero() {
    let cfg = OcpConfig::default();
    let p = free_problem(
        AgentState::new(0.0, 27.0, 3.5, 0.0),
        AgentInput::ZERO,
        lane_refs(cfg.horizon, 27.0, 3.5),
        &cfg,
    );
    let sol = solve(&p, None);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.inputs.iter().all(|u| u.ux.abs() < 1e-12 && u.uy.abs() < 1e-12));
    assert!(sol.objective.abs() < 1e-12);
}

#[test]
fn first_rate_bound_is_relative_to_previous_input() {
    let cfg = OcpConfig::default();
    let ev0 = AgentState::new(0.0, 27.0, 3.5, 0.0);
    // strong braking wish: ux0 stops at 5 − 1
    let p = free_problem(ev0, AgentInput::new(5.0, 0.0), lane_refs(cfg.horizon, 10.0, 3.5), &cfg);
    let sol = solve(&p, None);
    assert!((sol.inputs[0].ux - 4.0).abs() < 1e-9, "{}", sol.inputs[0].ux);
    // strong acceleration wish: clipped by the absolute bound
    let p = free_problem(ev0, AgentInput::new(5.0, 0.0), lane_refs(cfg.horizon, 40.0, 3.5), &cfg);
    let sol = solve(&p, None);
    assert!((sol.inputs[0].ux - 5.0).abs() < 1e-9, "{}", sol.inputs[0].ux);
    assert!(recheck(&p, &sol.inputs, cfg.beta_ex).max() < 1e-6);
}

#[test]
fn reported_cost_matches_forward_simulation() {
    let cfg = OcpConfig::default();
    let p = free_problem(
        AgentState::new(0.0, 25.0, 3.0, 0.1),
        AgentInput::new(0.3, -0.1),
        lane_refs(cfg.horizon, 27.0, 3.5),
        &cfg,
    );
    let sol = solve(&p, None);
    let direct = p.tracking_cost(&sol.inputs);
    assert!(((sol.objective - direct) / direct).abs() < 1e-9);
}

#[test]
fn far_obstacle_leaves_solution_unchanged() {
    let cfg = OcpConfig::default();
    let ev0 = AgentState::new(0.0, 25.0, 3.5, 0.0);
    let refs = lane_refs(cfg.horizon, 27.0, 3.5);
    let free = solve(&free_problem(ev0, AgentInput::ZERO, refs.clone(), &cfg), None);
    let sigma = ErrorCovariance(Matrix4::from_diagonal(&nalgebra::Vector4::new(0.1, 0.01, 0.01, 0.001)));
    let pred = static_obstacle(500.0, 3.5, &cfg, sigma);
    let p = build_problem(&LinearModel::point_mass(DT), ev0, AgentInput::ZERO, vec![pred], refs, &cfg).unwrap();
    let sol = solve(&p, None);
    assert_eq!(sol.status, SolveStatus::Optimal);
    for (a, b) in sol.inputs.iter().zip(&free.inputs) {
        assert!((a.ux - b.ux).abs() < 1e-6 && (a.uy - b.uy).abs() < 1e-6);
    }
}

fn blocking_problem(cfg: &OcpConfig) -> OcpProblem {
    // slow target ahead in the ego lane, left lane free
    let m = ObstacleModel::highway(DT);
    let road = RoadGeometry::default();
    let target = AgentState::new(45.0, 20.0, 3.5, 0.0);
    let preds = predict_obstacles(
        &m,
        &road,
        &ManeuverParams::default(),
        &[target],
        &[vec![Task::KEEP]],
        cfg,
    )
    .unwrap();
    build_problem(
        &LinearModel::point_mass(DT),
        AgentState::new(0.0, 27.0, 3.5, 0.0),
        AgentInput::ZERO,
        preds,
        lane_refs(cfg.horizon, 27.0, 3.5),
        cfg,
    )
    .unwrap()
}

#[test]
fn blocking_ellipse_is_respected() {
    let cfg = OcpConfig::default();
    let p = blocking_problem(&cfg);
    let sol = solve(&p, None);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let rep = recheck(&p, &sol.inputs, cfg.beta_ex);
    assert!(rep.max() < 1e-6, "{rep:?}");
    // direct evaluation against the nominal ellipses, which the tightened
    // constraint must dominate
    for (k, s) in sol.states.iter().enumerate() {
        let e = p.predictions[0].ellipses[k][0];
        assert!(ellipse_value(s, (e.cx, e.cy), e.a, e.b) >= -1e-9);
    }
}

#[test]
fn warm_start_at_optimum_converges_in_one_iteration() {
    let cfg = OcpConfig::default();
    let p = blocking_problem(&cfg);
    let first = solve(&p, None);
    assert!(first.converged);
    let again = solve(&p, Some(&first.inputs));
    assert_eq!(again.iterations, 1);
    assert_eq!(again.status, SolveStatus::Optimal);
}

#[test]
fn solving_is_deterministic() {
    let cfg = OcpConfig::default();
    let p = blocking_problem(&cfg);
    let warm = vec![AgentInput::new(-0.5, 0.1); cfg.horizon];
    let a = solve(&p, Some(&warm));
    let b = solve(&p, Some(&warm));
    assert_eq!(a, b);
}

#[test]
fn recovery_without_needed_slack_matches_hard_problem() {
    let cfg = OcpConfig::default();
    let p = blocking_problem(&cfg);
    let rec = solve_recovery(&p, None);
    assert_eq!(rec.status, SolveStatus::RecoveredWithSlack);
    assert!(rec.slack_total < 1e-9, "slack {}", rec.slack_total);
    let hard_cfg = OcpConfig {
        beta_ex: cfg.beta_ex_recovery,
        ..cfg.clone()
    };
    let hard = solve(&blocking_problem(&hard_cfg), None);
    for (a, b) in rec.inputs.iter().zip(&hard.inputs) {
        assert!((a.ux - b.ux).abs() < 1e-6 && (a.uy - b.uy).abs() < 1e-6);
    }
    assert!((rec.objective - hard.objective).abs() < 1e-6);
}

/// Ego on a one-lane road closing in on a target with no room to brake.
fn boxed_in(cfg: &OcpConfig) -> OcpProblem {
    let sigma = ErrorCovariance(Matrix4::from_diagonal(&nalgebra::Vector4::new(0.05, 0.01, 0.001, 0.001)));
    let pred = static_obstacle(35.0, 0.0, cfg, sigma);
    build_problem(
        &LinearModel::point_mass(DT),
        AgentState::new(0.0, 27.0, 0.0, 0.0),
        AgentInput::ZERO,
        vec![pred],
        lane_refs(cfg.horizon, 27.0, 0.0),
        cfg,
    )
    .unwrap()
}

fn one_lane_config() -> OcpConfig {
    OcpConfig {
        bounds: Bounds {
            y: (-1.0, 1.0),
            ..Bounds::default()
        },
        ..OcpConfig::default()
    }
}

#[test]
fn boxed_in_ego_needs_slack() {
    let cfg = one_lane_config();
    let p = boxed_in(&cfg);
    assert_eq!(solve(&p, None).status, SolveStatus::Infeasible);
    let rec = solve_with_recovery(&p, None);
    assert_eq!(rec.status, SolveStatus::RecoveredWithSlack);
    assert!(rec.slack_total > 0.0);
    assert!(rec.objective.is_finite());
    assert!(rec.inputs.iter().all(|u| u.ux.is_finite() && u.uy.is_finite()));
    assert!(recheck(&p, &rec.inputs, cfg.beta_ex_recovery).hard() < 1e-6);
}

#[test]
fn larger_slack_weight_never_increases_slack() {
    let low = one_lane_config();
    let high = OcpConfig {
        lambda_slack: 500.0,
        ..low.clone()
    };
    let a = solve_recovery(&boxed_in(&low), None);
    let b = solve_recovery(&boxed_in(&high), None);
    assert!(b.slack_total <= a.slack_total + 1e-9, "{} > {}", b.slack_total, a.slack_total);
}

#[test]
fn tightening_never_lowers_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = ObstacleModel::highway(DT);
    let road = RoadGeometry::default();
    for _ in 0..10 {
        let target = AgentState::new(rng.random_range(45.0..60.0), rng.random_range(20.0..25.0), 0.0, 0.0);
        let vx0 = rng.random_range(25.0..27.0);
        let mut prev = f64::NEG_INFINITY;
        for beta_ex in [0.5, 0.8, 0.95] {
            let cfg = OcpConfig {
                beta_ex,
                ..one_lane_config()
            };
            let preds =
                predict_obstacles(&m, &road, &ManeuverParams::default(), &[target], &[vec![Task::KEEP]], &cfg)
                    .unwrap();
            let p = build_problem(
                &LinearModel::point_mass(DT),
                AgentState::new(0.0, vx0, 0.0, 0.0),
                AgentInput::ZERO,
                preds,
                lane_refs(cfg.horizon, 27.0, 0.0),
                &cfg,
            )
            .unwrap();
            let sol = solve(&p, None);
            assert_eq!(sol.status, SolveStatus::Optimal, "target {target:?} vx0 {vx0} beta {beta_ex}");
            assert!(sol.objective >= prev - 1e-6, "beta {beta_ex}: {} < {prev}", sol.objective);
            prev = sol.objective;
        }
    }
}

#[test]
fn predictions_follow_sampled_tasks() {
    let cfg = OcpConfig::default();
    let m = ObstacleModel::highway(DT);
    let road = RoadGeometry::default();
    let params = ManeuverParams::default();
    let tv = AgentState::new(30.0, 25.0, 3.5, 0.0);

    let single = predict_obstacles(&m, &road, &params, &[tv], &[vec![Task::KEEP; 3]], &cfg).unwrap();
    let p = &single[0];
    assert_eq!(p.tasks, vec![Task::KEEP]);
    for k in 0..cfg.horizon {
        let e = p.ellipses[k][0];
        let s = p.trajectories[0][k];
        assert_eq!((e.cx, e.cy, e.a, e.b), (s.x, s.y, cfg.ellipse_a, cfg.ellipse_b));
    }
    let g = m.g * m.g.transpose();
    assert!((p.covariances[0].0 - g).amax() < 1e-15);

    let all: Vec<Task> = Task::all().collect();
    let full = predict_obstacles(&m, &road, &params, &[tv], &[all], &cfg).unwrap();
    for k in 0..cfg.horizon {
        let e = full[0].ellipses[k][0];
        assert!(e.b > cfg.ellipse_b && e.a > cfg.ellipse_a, "step {k}: {e:?}");
    }
}

#[test]
fn smpc_at_half_risk_is_nominal_and_matches_ssc() {
    let m = ObstacleModel::highway(DT);
    let road = RoadGeometry::default();
    let params = ManeuverParams::default();
    let tv = AgentState::new(40.0, 22.0, 3.5, 0.0);
    let ev0 = AgentState::new(0.0, 27.0, 3.5, 0.0);
    let solve_mode = |mode: ControllerMode| {
        let cfg = OcpConfig {
            mode,
            beta_ex: 0.5,
            ..OcpConfig::default()
        };
        let preds = predict_obstacles(&m, &road, &params, &[tv], &[vec![Task::KEEP]], &cfg).unwrap();
        assert_eq!(preds[0].constraint_count(), cfg.horizon);
        let p = build_problem(
            &LinearModel::point_mass(DT),
            ev0,
            AgentInput::ZERO,
            preds,
            lane_refs(cfg.horizon, 27.0, 3.5),
            &cfg,
        )
        .unwrap();
        solve(&p, None)
    };
    let ssc = solve_mode(ControllerMode::Ssc);
    let smpc = solve_mode(ControllerMode::SmpcOnly);
    assert_eq!(ssc.inputs, smpc.inputs);
}

#[test]
fn scenario_baseline_has_one_ellipse_per_draw() {
    let cfg = OcpConfig {
        mode: ControllerMode::ScmpcOnly,
        ..OcpConfig::default()
    };
    let m = ObstacleModel::highway(DT);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tvs = [AgentState::new(40.0, 22.0, 3.5, 0.0), AgentState::new(-20.0, 25.0, 0.0, 0.0)];
    let preds = predict_noise_scenarios(
        &m,
        &RoadGeometry::default(),
        &ManeuverParams::default(),
        &tvs,
        7,
        &cfg,
        &mut rng,
    )
    .unwrap();
    for p in &preds {
        assert!(!p.tighten);
        assert!(p.ellipses.iter().all(|e| e.len() == 7));
        // draws differ
        assert!(p.trajectories[0][5] != p.trajectories[1][5]);
    }
}

#[test]
fn degenerate_linearization_point_is_handled() {
    // cold start exactly through the ellipse center
    let cfg = OcpConfig::default();
    let sigma = ErrorCovariance(Matrix4::from_diagonal(&nalgebra::Vector4::new(0.01, 0.0, 0.001, 0.0)));
    let mut pred = static_obstacle(0.0, 3.5, &cfg, sigma);
    for (k, e) in pred.ellipses.iter_mut().enumerate() {
        // rides exactly on the ego constant-velocity rollout
        e[0].cx = 27.0 * DT * (k + 1) as f64;
    }
    let p = build_problem(
        &LinearModel::point_mass(DT),
        AgentState::new(0.0, 27.0, 3.5, 0.0),
        AgentInput::ZERO,
        vec![pred],
        lane_refs(cfg.horizon, 27.0, 3.5),
        &cfg,
    )
    .unwrap();
    let sol = solve_with_recovery(&p, None);
    assert_eq!(sol.status, SolveStatus::RecoveredWithSlack);
    assert!(sol.inputs.iter().all(|u| u.ux.is_finite() && u.uy.is_finite()));
    // pushed towards the left side of the ellipse
    assert!(sol.states.last().unwrap().y < 3.5);
}

