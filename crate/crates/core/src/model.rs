//! Point-mass vehicle dynamics for the ego vehicle and feedback-stabilized
//! target vehicles, plus propagation of the target prediction error.
//!
//! States are `[x, vx, y, vy]`, inputs `[ux, uy]`. The road frame has the
//! left lane center at `y = 0` and lanes stacked towards positive `y`.

use nalgebra::{Matrix2, Matrix2x4, Matrix3, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::task::{Lateral, Longitudinal, Task};

/// Tolerance on the closed-loop spectral radius.
pub const STABILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub x: f64,
    pub vx: f64,
    pub y: f64,
    pub vy: f64,
}

impl AgentState {
    pub const fn new(x: f64, vx: f64, y: f64, vy: f64) -> Self {
        Self { x, vx, y, vy }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x, self.vx, self.y, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.vx.is_finite() && self.y.is_finite() && self.vy.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentInput {
    pub ux: f64,
    pub uy: f64,
}

impl AgentInput {
    pub const ZERO: AgentInput = AgentInput { ux: 0.0, uy: 0.0 };

    pub const fn new(ux: f64, uy: f64) -> Self {
        Self { ux, uy }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.ux, self.uy)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Discrete-time double integrator in both road axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub dt: f64,
}

impl LinearModel {
    pub fn point_mass(dt: f64) -> Self {
        let h = 0.5 * dt * dt;
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, dt,  0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, dt,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let b = Matrix4x2::new(
            h,   0.0,
            dt,  0.0,
            0.0, h,
            0.0, dt,
        );
        Self { a, b, dt }
    }
}

pub fn step_agent(model: &LinearModel, state: AgentState, input: AgentInput) -> AgentState {
    AgentState::from_vector(&(model.a * state.to_vector() + model.b * input.to_vector()))
}

/// Covariance of the target prediction error at one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCovariance(pub Matrix4<f64>);

impl ErrorCovariance {
    pub fn zero() -> Self {
        Self(Matrix4::zeros())
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }
}

/// Target vehicle model: point mass driven by a tracking feedback law and
/// additive Gaussian execution noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleModel {
    pub model: LinearModel,
    pub g: Matrix4<f64>,
    pub k_fb: Matrix2x4<f64>,
    pub sigma_ex: Matrix4<f64>,
    /// Measurement noise on the `(x, y)` position.
    pub sigma_meas: Matrix2<f64>,
    phi: Matrix4<f64>,
}

impl ObstacleModel {
    pub fn new(
        model: LinearModel,
        g: Matrix4<f64>,
        k_fb: Matrix2x4<f64>,
        sigma_ex: Matrix4<f64>,
        sigma_meas: Matrix2<f64>,
    ) -> Result<Self> {
        if !is_psd4(&sigma_ex) {
            return Err(Error::Config(
                "execution noise covariance is not symmetric PSD".into(),
            ));
        }
        let meas_ok = (sigma_meas - sigma_meas.transpose()).abs().max() <= 1e-12
            && sigma_meas.symmetric_eigenvalues().min() >= -1e-12;
        if !meas_ok {
            return Err(Error::Config(
                "measurement noise covariance is not symmetric PSD".into(),
            ));
        }
        let phi = model.a + model.b * k_fb;
        let rho = regulated_spectral_radius(&phi);
        if rho >= 1.0 - STABILITY_TOL {
            return Err(Error::Config(format!(
                "feedback gain is not stabilizing (spectral radius {rho})"
            )));
        }
        Ok(Self {
            model,
            g,
            k_fb,
            sigma_ex,
            sigma_meas,
            phi,
        })
    }

    /// Target model used throughout the highway study.
    pub fn highway(dt: f64) -> Self {
        #[rustfmt::skip]
        let k_fb = Matrix2x4::new(
            0.0, -1.0,  0.0,  0.0,
            0.0,  0.0, -0.8, -2.2,
        );
        let g = Matrix4::from_diagonal(&Vector4::new(0.05, 0.067, 0.013, 0.03));
        Self::new(
            LinearModel::point_mass(dt),
            g,
            k_fb,
            Matrix4::identity(),
            Matrix2::from_diagonal(&Vector2::new(0.16, 0.01)),
        )
        .expect("highway target model is valid")
    }

    /// Closed-loop state matrix `A + B K`.
    pub fn phi(&self) -> &Matrix4<f64> {
        &self.phi
    }
}

/// Spectral radius of the closed loop on the regulated states.
///
/// With no longitudinal position reference the `x` column of the gain is
/// zero and `x` stays a pure integrator (`Φ e_x = e_x`). That mode is
/// excluded and the radius of the quotient block on `(vx, y, vy)` is
/// returned instead.
pub fn regulated_spectral_radius(phi: &Matrix4<f64>) -> f64 {
    let x_is_integrator = phi[(0, 0)] == 1.0 && (1..4).all(|r| phi[(r, 0)] == 0.0);
    if x_is_integrator {
        let block: Matrix3<f64> = phi.fixed_view::<3, 3>(1, 1).into_owned();
        block
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    } else {
        phi.complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

fn is_psd4(m: &Matrix4<f64>) -> bool {
    (m - m.transpose()).abs().max() <= 1e-12 && m.symmetric_eigenvalues().min() >= -1e-12
}

/// `K (ξ − ξ_ref)`.
pub fn feedback_input(m: &ObstacleModel, state: AgentState, reference: AgentState) -> AgentInput {
    AgentInput::from_vector(&(m.k_fb * (state.to_vector() - reference.to_vector())))
}

pub fn step_obstacle(
    m: &ObstacleModel,
    state: AgentState,
    reference: AgentState,
    w_ex: &Vector4<f64>,
) -> AgentState {
    let u = feedback_input(m, state, reference);
    let next = m.model.a * state.to_vector() + m.model.b * u.to_vector() + m.g * w_ex;
    AgentState::from_vector(&next)
}

/// Noise-free rollout; element `k` is the prediction for step `k + 1`.
pub fn nominal_trajectory(
    m: &ObstacleModel,
    state0: AgentState,
    refs: &[AgentState],
) -> Vec<AgentState> {
    let zero = Vector4::zeros();
    let mut out = Vec::with_capacity(refs.len());
    let mut s = state0;
    for r in refs {
        s = step_obstacle(m, s, *r, &zero);
        out.push(s);
    }
    out
}

/// `Φ Σ Φᵀ + G Σ_ex Gᵀ`.
pub fn propagate_covariance(m: &ObstacleModel, sigma_e: &ErrorCovariance) -> ErrorCovariance {
    let next = m.phi * sigma_e.0 * m.phi.transpose() + m.g * m.sigma_ex * m.g.transpose();
    // symmetrize away round-off
    ErrorCovariance((next + next.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadGeometry {
    pub lanes: usize,
    pub lane_width: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            lanes: 3,
            lane_width: 3.5,
        }
    }
}

impl RoadGeometry {
    /// Index of the lane whose center is nearest to `y` (0 = leftmost).
    pub fn lane_index(&self, y: f64) -> usize {
        let idx = (y / self.lane_width).round();
        idx.clamp(0.0, (self.lanes - 1) as f64) as usize
    }

    pub fn lane_center(&self, index: usize) -> f64 {
        index as f64 * self.lane_width
    }

    /// `(left, right)` availability of adjacent lanes for a vehicle at `y`.
    pub fn adjacent_lanes(&self, y: f64) -> (bool, bool) {
        let idx = self.lane_index(y);
        (idx > 0, idx + 1 < self.lanes)
    }

    /// Outer road edges `(left, right)` in `y`.
    pub fn edges(&self) -> (f64, f64) {
        (
            -0.5 * self.lane_width,
            (self.lanes as f64 - 0.5) * self.lane_width,
        )
    }
}

/// Velocity offsets defining the accelerating and braking references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverParams {
    pub dv_accel: f64,
    pub dv_brake: f64,
}

impl Default for ManeuverParams {
    fn default() -> Self {
        Self {
            dv_accel: 2.0,
            dv_brake: 2.0,
        }
    }
}

/// Constant reference over `horizon` steps for a target executing `task`.
pub fn maneuver_reference(
    task: Task,
    current: AgentState,
    road: &RoadGeometry,
    params: &ManeuverParams,
    horizon: usize,
) -> Result<Vec<AgentState>> {
    let lane = road.lane_index(current.y);
    let target_lane = match task.lateral {
        Lateral::LaneKeep => lane,
        Lateral::ChangeLeft => lane.checked_sub(1).ok_or_else(|| {
            Error::InvalidManeuver(format!("{task} from the leftmost lane"))
        })?,
        Lateral::ChangeRight => {
            if lane + 1 >= road.lanes {
                return Err(Error::InvalidManeuver(format!(
                    "{task} from the rightmost lane"
                )));
            }
            lane + 1
        }
    };
    let vx = match task.longitudinal {
        Longitudinal::Insignificant => current.vx,
        Longitudinal::Accelerate => current.vx + params.dv_accel,
        Longitudinal::Brake => current.vx - params.dv_brake,
    };
    let r = AgentState::new(0.0, vx, road.lane_center(target_lane), 0.0);
    Ok(vec![r; horizon])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_state(s: AgentState, e: (f64, f64, f64, f64)) {
        let v = s.to_vector();
        let ev = Vector4::new(e.0, e.1, e.2, e.3);
        assert!((v - ev).abs().max() < 1e-12, "{s:?} != {e:?}");
    }

    #[test]
    fn point_mass_structure() {
        let m = LinearModel::point_mass(0.2);
        assert_eq!(m.a[(0, 1)], 0.2);
        assert_eq!(m.a[(2, 3)], 0.2);
        assert_eq!(m.a[(0, 2)], 0.0);
        assert_eq!(m.b[(0, 0)], 0.5 * 0.2 * 0.2);
        assert_eq!(m.b[(3, 1)], 0.2);
        assert_eq!(m.b[(0, 1)], 0.0);
    }

    #[test]
    fn step_agent_examples() {
        let m = LinearModel::point_mass(0.2);
        assert_state(
            step_agent(&m, AgentState::new(0.0, 27.0, 0.0, 0.0), AgentInput::ZERO),
            (5.4, 27.0, 0.0, 0.0),
        );
        assert_state(
            step_agent(&m, AgentState::default(), AgentInput::ZERO),
            (0.0, 0.0, 0.0, 0.0),
        );
        assert_state(
            step_agent(&m, AgentState::default(), AgentInput::new(5.0, 0.0)),
            (0.1, 1.0, 0.0, 0.0),
        );
    }

    #[test]
    fn feedback_examples() {
        let m = ObstacleModel::highway(0.2);
        let r = AgentState::new(3.0, 20.0, 3.5, 0.0);
        assert_eq!(feedback_input(&m, r, r), AgentInput::ZERO);
        let u = feedback_input(&m, AgentState::new(3.0, 21.0, 3.5, 0.0), r);
        assert!((u.ux + 1.0).abs() < 1e-12 && u.uy.abs() < 1e-12);
        let u = feedback_input(&m, AgentState::new(3.0, 20.0, 4.5, 1.0), r);
        assert!(u.ux.abs() < 1e-12 && (u.uy + 3.0).abs() < 1e-12);
    }

    #[test]
    fn step_obstacle_examples() {
        let m = ObstacleModel::highway(0.2);
        let eq = AgentState::new(10.0, 0.0, 3.5, 0.0);
        assert_state(
            step_obstacle(&m, eq, eq, &Vector4::zeros()),
            (10.0, 0.0, 3.5, 0.0),
        );

        // zero feedback: state on reference, unit noise
        let s = AgentState::new(1.0, 20.0, 3.5, 0.0);
        let next = step_obstacle(&m, s, s, &Vector4::repeat(1.0));
        let drift = step_agent(&m.model, s, AgentInput::ZERO);
        let off = next.to_vector() - drift.to_vector();
        assert!((off - Vector4::new(0.05, 0.067, 0.013, 0.03)).abs().max() < 1e-12);

        let s = AgentState::new(1.0, 22.0, 3.0, 0.4);
        let u = feedback_input(&m, s, eq);
        assert_eq!(
            step_obstacle(&m, s, eq, &Vector4::zeros()),
            step_agent(&m.model, s, u)
        );
    }

    #[test]
    fn nominal_single_step_matches_step() {
        let m = ObstacleModel::highway(0.2);
        let s = AgentState::new(0.0, 25.0, 0.4, -0.1);
        let r = AgentState::new(0.0, 27.0, 0.0, 0.0);
        let traj = nominal_trajectory(&m, s, &[r]);
        assert_eq!(traj, vec![step_obstacle(&m, s, r, &Vector4::zeros())]);
    }

    #[test]
    fn nominal_constant_velocity_on_reference() {
        let m = ObstacleModel::highway(0.2);
        let s = AgentState::new(0.0, 22.0, 3.5, 0.0);
        let refs = vec![AgentState::new(0.0, 22.0, 3.5, 0.0); 10];
        for (k, p) in nominal_trajectory(&m, s, &refs).iter().enumerate() {
            assert!((p.x - 22.0 * 0.2 * (k + 1) as f64).abs() < 1e-9);
            assert!((p.y - 3.5).abs() < 1e-12 && (p.vx - 22.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lane_change_converges_without_overshoot() {
        let m = ObstacleModel::highway(0.2);
        let s = AgentState::new(0.0, 20.0, 0.0, 0.0);
        let refs = vec![AgentState::new(0.0, 20.0, 3.5, 0.0); 80];
        let traj = nominal_trajectory(&m, s, &refs);
        let mut prev = 3.5;
        for p in &traj {
            let err = 3.5 - p.y;
            assert!(err >= 0.0, "overshoot: {err}");
            assert!(err <= prev + 1e-12);
            prev = err;
        }
        // both closed-loop lateral eigenvalues are real (0.913, 0.631)
        assert!(3.5 - traj[59].y <= 0.01 * 3.5);
    }

    #[test]
    fn lateral_error_after_fifty_steps_matches_modal_oracle() {
        // Closed-form modal solution of the 2x2 lateral loop: e_k = c1 λ1^k + c2 λ2^k.
        let dt: f64 = 0.2;
        let (a11, a12) = (1.0 - 0.5 * dt * dt * 0.8, dt - 0.5 * dt * dt * 2.2);
        let (a21, a22) = (-dt * 0.8, 1.0 - dt * 2.2);
        let tr = a11 + a22;
        let det = a11 * a22 - a12 * a21;
        let disc = (tr * tr / 4.0 - det).sqrt();
        let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
        // e_0 = 3.5, e_1 = a11 * 3.5
        let (e0, e1) = (3.5, a11 * 3.5);
        let c1 = (e1 - l2 * e0) / (l1 - l2);
        let c2 = e0 - c1;
        let oracle = c1 * l1.powi(50) + c2 * l2.powi(50);

        let m = ObstacleModel::highway(dt);
        let refs = vec![AgentState::new(0.0, 20.0, 3.5, 0.0); 50];
        let traj = nominal_trajectory(&m, AgentState::new(0.0, 20.0, 0.0, 0.0), &refs);
        let err = 3.5 - traj[49].y;
        assert!((err - oracle).abs() < 1e-12);
        assert!((oracle - 0.047112).abs() < 1e-5);
    }

    #[test]
    fn covariance_examples() {
        let m = ObstacleModel::highway(0.2);
        let s1 = propagate_covariance(&m, &ErrorCovariance::zero());
        let expected = Matrix4::from_diagonal(&Vector4::new(0.0025, 0.004489, 0.000169, 0.0009));
        assert!((s1.0 - expected).abs().max() < 1e-15);

        let mut quiet = m.clone();
        quiet.sigma_ex = Matrix4::zeros();
        assert_eq!(
            propagate_covariance(&quiet, &ErrorCovariance::zero()).0,
            Matrix4::zeros()
        );
    }

    #[test]
    fn regulated_block_converges_and_position_variance_grows() {
        let m = ObstacleModel::highway(0.2);
        let mut s = ErrorCovariance::zero();
        let mut converged_at = None;
        let mut prev_trace = 0.0;
        for k in 0..500 {
            let next = propagate_covariance(&m, &s);
            let tr = next.0.trace();
            assert!(tr >= prev_trace);
            prev_trace = tr;
            let reg = (next.0 - s.0).fixed_view::<3, 3>(1, 1).abs().max();
            if reg < 1e-9 && converged_at.is_none() {
                converged_at = Some(k);
            }
            s = next;
        }
        assert!(converged_at.is_some());
        // x integrates velocity error, so its variance keeps increasing
        let next = propagate_covariance(&m, &s);
        assert!(next.0[(0, 0)] - s.0[(0, 0)] > 0.0025);
    }

    #[test]
    fn rejects_unstable_feedback() {
        let model = LinearModel::point_mass(0.2);
        let zero_gain = Matrix2x4::zeros();
        let r = ObstacleModel::new(
            model,
            Matrix4::identity(),
            zero_gain,
            Matrix4::identity(),
            Matrix2::identity(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(regulated_spectral_radius(ObstacleModel::highway(0.2).phi()) < 0.95);
    }

    #[test]
    fn rejects_non_psd_noise() {
        let hw = ObstacleModel::highway(0.2);
        let bad = -Matrix4::<f64>::identity();
        let r = ObstacleModel::new(hw.model.clone(), hw.g, hw.k_fb, bad, hw.sigma_meas);
        assert!(r.is_err());
    }

    #[test]
    fn maneuver_reference_examples() {
        let road = RoadGeometry::default();
        let p = ManeuverParams::default();
        let s = AgentState::new(12.0, 25.0, 3.5, 0.0);
        let lk = maneuver_reference(Task::KEEP, s, &road, &p, 4).unwrap();
        assert_eq!(lk.len(), 4);
        assert_eq!(lk[0], AgentState::new(0.0, 25.0, 3.5, 0.0));

        let lcl = Task::new(Lateral::ChangeLeft, Longitudinal::Accelerate);
        let r = maneuver_reference(lcl, s, &road, &p, 1).unwrap();
        assert_eq!((r[0].y, r[0].vx), (0.0, 27.0));

        let left = AgentState::new(0.0, 25.0, 0.0, 0.0);
        let lcr = Task::new(Lateral::ChangeRight, Longitudinal::Brake);
        let r = maneuver_reference(lcr, left, &road, &p, 1).unwrap();
        assert_eq!((r[0].y, r[0].vx), (3.5, 23.0));

        let e = maneuver_reference(lcl, left, &road, &p, 1);
        assert!(matches!(e, Err(Error::InvalidManeuver(_))));
        let right = AgentState::new(0.0, 25.0, 7.0, 0.0);
        assert!(maneuver_reference(lcr, right, &road, &p, 1).is_err());
    }
}
