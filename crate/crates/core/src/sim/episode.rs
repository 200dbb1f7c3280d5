use nalgebra::{Matrix2, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::metrics::{check_collision, stage_cost};
use super::scenario::{PhaseProbabilities, ScenarioConfig};
use crate::error::Result;
use crate::model::{
    step_agent, step_obstacle, AgentInput, AgentState, LinearModel, ManeuverParams, ObstacleModel, RoadGeometry,
};
use crate::ocp::{
    baseline_mode_adjustments, build_problem, predict_noise_scenarios, predict_obstacles, solve_with_recovery,
    ControllerMode, OcpConfig, SolveStatus,
};
use crate::task::{build_joint_distribution, draw_samples, required_sample_size, LeastLikelyRule, Task};

/// RNG stream for measurement and execution noise of the targets.
const WORLD_STREAM: u64 = 0;
/// RNG stream for the controller's own sampling.
const CONTROLLER_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub ocp: OcpConfig,
    pub maneuver: ManeuverParams,
    pub least_likely: LeastLikelyRule,
    /// Fixed number of noise scenarios for the scenario baseline; by default
    /// it uses the task sample size at the same risk.
    pub k_ex: Option<usize>,
}

impl ControllerConfig {
    pub fn new(mode: ControllerMode) -> Self {
        Self {
            ocp: OcpConfig {
                mode,
                ..OcpConfig::default()
            },
            maneuver: ManeuverParams::default(),
            least_likely: LeastLikelyRule::default(),
            k_ex: None,
        }
    }

    pub fn mode(&self) -> ControllerMode {
        self.ocp.mode
    }
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::new(ControllerMode::Ssc)
    }
}

/// What the controller assumed at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerMeta {
    pub phase: u8,
    pub beta_ta: f64,
    pub probabilities: PhaseProbabilities,
    /// Samples drawn per target (tasks, or noise scenarios for the scenario
    /// baseline; 1 for lane keeping only).
    pub sample_sizes: Vec<usize>,
}

/// One closed-loop step: measurement, control decision, and the true states
/// after applying it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    /// Measured target positions the decision was based on.
    pub measured: Vec<(f64, f64)>,
    pub input: AgentInput,
    pub status: SolveStatus,
    pub slack: f64,
    pub ev: AgentState,
    pub tvs: Vec<AgentState>,
    pub collision: bool,
    pub meta: ControllerMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub mode: ControllerMode,
    pub road: RoadGeometry,
    pub ev_v_ref: f64,
    pub ev0: AgentState,
    pub tvs0: Vec<AgentState>,
    pub steps: Vec<StepRecord>,
    /// Cost accumulated while running.
    pub j100: f64,
}

impl EpisodeTrace {
    pub fn collided(&self) -> bool {
        self.steps.iter().any(|s| s.collision)
    }

    /// Steps whose hard problem was infeasible.
    pub fn infeasible_ocp_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.status != SolveStatus::Optimal).count()
    }

    /// Steps whose recovery problem failed as well.
    pub fn infeasible_rec_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.status == SolveStatus::InfeasibleRecoveryFailed)
            .count()
    }
}

fn standard_normal4<R: Rng + ?Sized>(rng: &mut R) -> Vector4<f64> {
    Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
}

fn sqrt2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = m.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn sqrt4(m: &nalgebra::Matrix4<f64>) -> nalgebra::Matrix4<f64> {
    let eig = m.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * nalgebra::Matrix4::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Run one closed-loop episode. The seed fully determines the noise and the
/// controller's sampling.
pub fn run_episode(cfg: &ScenarioConfig, ctrl: &ControllerConfig, seed: u64) -> Result<EpisodeTrace> {
    cfg.validate()?;
    ctrl.ocp.validate()?;
    let ev_model = LinearModel::point_mass(cfg.dt);
    let tv_model = ObstacleModel::highway(cfg.dt);
    let meas_root = sqrt2(&tv_model.sigma_meas) * cfg.noise_scale;
    let ex_root = sqrt4(&tv_model.sigma_ex) * cfg.noise_scale;
    let policy = baseline_mode_adjustments(ctrl.mode());
    let n = ctrl.ocp.horizon;

    let mut world = ChaCha8Rng::seed_from_u64(seed);
    world.set_stream(WORLD_STREAM);
    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(CONTROLLER_STREAM);

    let mut q_cost = ctrl.ocp.q;
    for i in 0..4 {
        q_cost[(0, i)] = 0.0;
        q_cost[(i, 0)] = 0.0;
    }

    let mut ev = cfg.ev0;
    let mut tvs: Vec<AgentState> = cfg.tvs.iter().map(|t| t.initial).collect();
    let mut u_prev = AgentInput::ZERO;
    let mut plan: Option<Vec<AgentInput>> = None;
    let mut steps = Vec::with_capacity(cfg.n_steps);
    let mut j100 = 0.0;

    for step in 1..=cfg.n_steps {
        // positions are measured with noise, velocities exactly
        let measured: Vec<AgentState> = tvs
            .iter()
            .map(|s| {
                let z = Vector2::new(world.sample::<f64, _>(StandardNormal), world.sample::<f64, _>(StandardNormal));
                let nu = meas_root * z;
                AgentState::new(s.x + nu[0], s.vx, s.y + nu[1], s.vy)
            })
            .collect();

        let (phase, probs, beta_ta) = cfg.phase_at(step);
        let mut ocp = ctrl.ocp.clone();
        ocp.beta_ta = beta_ta;
        let mut sample_sizes = Vec::with_capacity(measured.len());
        let mut task_lists = Vec::with_capacity(measured.len());
        for m in &measured {
            let dist = build_joint_distribution(probs.p_lc, probs.p_acc, probs.p_brk, cfg.road.adjacent_lanes(m.y))?;
            let k = required_sample_size(ctrl.least_likely.p1(&dist), beta_ta)?;
            if policy.sample_tasks {
                task_lists.push(draw_samples(&dist, k, &mut sampler).samples);
            } else {
                task_lists.push(vec![Task::KEEP]);
            }
            sample_sizes.push(k);
        }
        let predictions = if policy.noise_scenarios {
            // one draw count for all targets: the largest required
            let k_ex = ctrl.k_ex.unwrap_or_else(|| sample_sizes.iter().copied().max().unwrap_or(1));
            sample_sizes.iter_mut().for_each(|k| *k = k_ex);
            predict_noise_scenarios(&tv_model, &cfg.road, &ctrl.maneuver, &measured, k_ex, &ocp, &mut sampler)?
        } else {
            if !policy.sample_tasks {
                sample_sizes.iter_mut().for_each(|k| *k = 1);
            }
            predict_obstacles(&tv_model, &cfg.road, &ctrl.maneuver, &measured, &task_lists, &ocp)?
        };

        let y_ref = cfg.road.lane_center(cfg.road.lane_index(ev.y));
        let refs = vec![AgentState::new(0.0, cfg.ev_v_ref, y_ref, 0.0); n];
        let problem = build_problem(&ev_model, ev, u_prev, predictions, refs, &ocp)?;
        let warm = plan.as_ref().map(|p| {
            let mut w: Vec<AgentInput> = p[1..].to_vec();
            w.push(*p.last().expect("plan has the horizon length"));
            w
        });
        let sol = solve_with_recovery(&problem, warm.as_deref());
        let u = sol.inputs[0];

        ev = step_agent(&ev_model, ev, u);
        for (s, spec) in tvs.iter_mut().zip(&cfg.tvs) {
            let w = ex_root * standard_normal4(&mut world);
            *s = step_obstacle(&tv_model, *s, spec.reference(step, &cfg.road), &w);
        }
        j100 += stage_cost(&ev, (u.ux, u.uy), cfg.ev_v_ref, &cfg.road, &q_cost, &ctrl.ocp.r);

        steps.push(StepRecord {
            step,
            measured: measured.iter().map(|m| (m.x, m.y)).collect(),
            input: u,
            status: sol.status,
            slack: sol.slack_total,
            ev,
            tvs: tvs.clone(),
            collision: check_collision(&ev, &tvs, &cfg.dims),
            meta: ControllerMeta {
                phase,
                beta_ta,
                probabilities: probs,
                sample_sizes,
            },
        });
        u_prev = u;
        plan = Some(sol.inputs);
    }

    Ok(EpisodeTrace {
        seed,
        mode: ctrl.mode(),
        road: cfg.road,
        ev_v_ref: cfg.ev_v_ref,
        ev0: cfg.ev0,
        tvs0: cfg.tvs.iter().map(|t| t.initial).collect(),
        steps,
        j100,
    })
}
