use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ConstraintGeneration, ControllerMode, OcpConfig};
use crate::chance::{aggregate_ellipse, ManeuverPositions, SafetyEllipse};
use crate::error::{Error, Result};
use crate::model::{
    maneuver_reference, nominal_trajectory, propagate_covariance, step_obstacle, AgentState,
    ErrorCovariance, ManeuverParams, ObstacleModel, RoadGeometry,
};
use crate::task::Task;

/// Predicted motion of one target over the horizon and the ellipses the ego
/// vehicle has to stay out of.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstaclePrediction {
    pub obstacle: usize,
    /// Distinct sampled tasks; a single lane keeping task for the baselines.
    pub tasks: Vec<Task>,
    /// One trajectory per task (or per noise draw), steps `1..=N`.
    pub trajectories: Vec<Vec<AgentState>>,
    /// Prediction error covariance for steps `1..=N`.
    pub covariances: Vec<ErrorCovariance>,
    /// Ellipses to avoid at each step `1..=N`.
    pub ellipses: Vec<Vec<SafetyEllipse>>,
    /// Whether the ellipses are tightened against execution noise.
    pub tighten: bool,
}

impl ObstaclePrediction {
    pub fn constraint_count(&self) -> usize {
        self.ellipses.iter().map(Vec::len).sum()
    }
}

/// Which uncertainty each controller mode accounts for and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintPolicy {
    /// Draw maneuvers from the task distribution; otherwise lane keeping only.
    pub sample_tasks: bool,
    /// Tighten ellipses analytically by `γ`.
    pub tighten: bool,
    /// Represent execution noise by sampled noise trajectories.
    pub noise_scenarios: bool,
}

pub fn baseline_mode_adjustments(mode: ControllerMode) -> ConstraintPolicy {
    match mode {
        ControllerMode::Ssc => ConstraintPolicy {
            sample_tasks: true,
            tighten: true,
            noise_scenarios: false,
        },
        ControllerMode::SmpcOnly => ConstraintPolicy {
            sample_tasks: false,
            tighten: true,
            noise_scenarios: false,
        },
        ControllerMode::ScmpcOnly => ConstraintPolicy {
            sample_tasks: false,
            tighten: false,
            noise_scenarios: true,
        },
    }
}

fn covariance_sequence(m: &ObstacleModel, n: usize) -> Vec<ErrorCovariance> {
    let mut out = Vec::with_capacity(n);
    let mut sigma = ErrorCovariance::zero();
    for _ in 0..n {
        sigma = propagate_covariance(m, &sigma);
        out.push(sigma);
    }
    out
}

/// Nominal predictions for the sampled tasks of every target.
///
/// `measured[i]` is the state the controller believes target `i` is in and
/// `tasks[i]` its sampled tasks (duplicates allowed).
pub fn predict_obstacles(
    m: &ObstacleModel,
    road: &RoadGeometry,
    params: &ManeuverParams,
    measured: &[AgentState],
    tasks: &[Vec<Task>],
    cfg: &OcpConfig,
) -> Result<Vec<ObstaclePrediction>> {
    if measured.len() != tasks.len() {
        return Err(Error::Config(format!(
            "{} obstacle states but {} task lists",
            measured.len(),
            tasks.len()
        )));
    }
    let n = cfg.horizon;
    let tighten = baseline_mode_adjustments(cfg.mode).tighten;
    let covariances = covariance_sequence(m, n);
    let mut out = Vec::with_capacity(measured.len());
    for (i, (state, sampled)) in measured.iter().zip(tasks).enumerate() {
        let mut distinct: Vec<Task> = Vec::new();
        for t in sampled {
            if !distinct.contains(t) {
                distinct.push(*t);
            }
        }
        if distinct.is_empty() {
            return Err(Error::Config(format!("obstacle {i} has no sampled task")));
        }
        let trajectories = distinct
            .iter()
            .map(|t| {
                let refs = maneuver_reference(*t, *state, road, params, n)?;
                Ok(nominal_trajectory(m, *state, &refs))
            })
            .collect::<Result<Vec<_>>>()?;
        let ellipses = (0..n)
            .map(|k| match cfg.generation {
                ConstraintGeneration::Aggregated => {
                    let mut pos = ManeuverPositions::default();
                    for (t, traj) in distinct.iter().zip(&trajectories) {
                        pos.insert(*t, traj[k].x, traj[k].y);
                    }
                    Ok(vec![aggregate_ellipse(&pos, cfg.ellipse_a, cfg.ellipse_b, road.lane_width)?])
                }
                ConstraintGeneration::PerSample => trajectories
                    .iter()
                    .map(|traj| SafetyEllipse::new(traj[k].x, traj[k].y, cfg.ellipse_a, cfg.ellipse_b))
                    .collect(),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ObstaclePrediction {
            obstacle: i,
            tasks: distinct,
            trajectories,
            covariances: covariances.clone(),
            ellipses,
            tighten,
        });
    }
    Ok(out)
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(s: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = s.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix4::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Lane keeping predictions with execution noise drawn `k_ex` times per
/// target; every drawn trajectory contributes one untightened ellipse.
pub fn predict_noise_scenarios<R: Rng + ?Sized>(
    m: &ObstacleModel,
    road: &RoadGeometry,
    params: &ManeuverParams,
    measured: &[AgentState],
    k_ex: usize,
    cfg: &OcpConfig,
    rng: &mut R,
) -> Result<Vec<ObstaclePrediction>> {
    if k_ex == 0 {
        return Err(Error::Config("at least one noise scenario is required".into()));
    }
    let n = cfg.horizon;
    let covariances = covariance_sequence(m, n);
    let root = psd_sqrt(&m.sigma_ex);
    let mut out = Vec::with_capacity(measured.len());
    for (i, state) in measured.iter().enumerate() {
        let refs = maneuver_reference(Task::KEEP, *state, road, params, n)?;
        let mut trajectories = Vec::with_capacity(k_ex);
        for _ in 0..k_ex {
            let mut s = *state;
            let mut traj = Vec::with_capacity(n);
            for r in &refs {
                let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                s = step_obstacle(m, s, *r, &(root * z));
                traj.push(s);
            }
            trajectories.push(traj);
        }
        let ellipses = (0..n)
            .map(|k| {
                trajectories
                    .iter()
                    .map(|traj| SafetyEllipse::new(traj[k].x, traj[k].y, cfg.ellipse_a, cfg.ellipse_b))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ObstaclePrediction {
            obstacle: i,
            tasks: vec![Task::KEEP],
            trajectories,
            covariances: covariances.clone(),
            ellipses,
            tighten: false,
        });
    }
    Ok(out)
}
