//! Finite-horizon optimal control problem for the ego vehicle.
//!
//! The decision variables are the ego inputs over the horizon; states are
//! eliminated through the linear dynamics. Safety ellipses around the
//! predicted targets are the only nonconvex constraints and are handled by
//! sequential convexification: every ellipse is replaced by its tangent
//! half-space at the current ego trajectory and the resulting QP is solved
//! until the inputs stop changing.

mod predict;
mod problem;
mod recheck;
mod solver;

use nalgebra::{DMatrix, Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::model::{AgentInput, AgentState};

pub use predict::{
    baseline_mode_adjustments, predict_noise_scenarios, predict_obstacles, ConstraintPolicy,
    ObstaclePrediction,
};
pub use problem::{build_problem, OcpProblem};
pub use recheck::{recheck, RecheckReport};
pub use solver::{fallback_inputs, solve, solve_recovery, solve_with_recovery, SLACK_UNIT};

/// Box, state and rate limits of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub y: (f64, f64),
    pub ux: (f64, f64),
    pub uy: (f64, f64),
    pub dux: (f64, f64),
    pub duy: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            y: (-1.75, 8.75),
            ux: (-5.0, 5.0),
            uy: (-0.5, 0.5),
            dux: (-1.0, 1.0),
            duy: (-0.2, 0.2),
        }
    }
}

impl Bounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("y", self.y),
            ("ux", self.ux),
            ("uy", self.uy),
            ("dux", self.dux),
            ("duy", self.duy),
        ] {
            if !(lo < hi) {
                return Err(Error::Config(format!("bound {name}: lower {lo} not below upper {hi}")));
            }
        }
        if self.dux.0 > 0.0 || self.dux.1 < 0.0 || self.duy.0 > 0.0 || self.duy.1 < 0.0 {
            return Err(Error::Config("rate bounds must contain zero".into()));
        }
        Ok(())
    }

    /// Clamp `u` into the input box intersected with the rate window
    /// around `prev`.
    pub fn clamp_input(&self, u: AgentInput, prev: AgentInput) -> AgentInput {
        let clamp = |v: f64, prev: f64, abs: (f64, f64), rate: (f64, f64)| {
            let lo = abs.0.max(prev + rate.0);
            let hi = abs.1.min(prev + rate.1);
            if lo > hi {
                // previous input outside the box: move towards it
                v.clamp(abs.0, abs.1)
            } else {
                v.clamp(lo, hi)
            }
        };
        AgentInput::new(
            clamp(u.ux, prev.ux, self.ux, self.dux),
            clamp(u.uy, prev.uy, self.uy, self.duy),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ControllerMode {
    /// Sampled maneuvers with analytic tightening against execution noise.
    #[default]
    Ssc,
    /// Lane keeping only, analytic tightening.
    SmpcOnly,
    /// Lane keeping only, execution noise represented by sampled trajectories.
    ScmpcOnly,
}

impl ControllerMode {
    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Ssc => "ssc",
            ControllerMode::SmpcOnly => "smpc_only",
            ControllerMode::ScmpcOnly => "scmpc_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ssc" => Some(ControllerMode::Ssc),
            "smpc_only" | "smpc" => Some(ControllerMode::SmpcOnly),
            "scmpc_only" | "scmpc" => Some(ControllerMode::ScmpcOnly),
            _ => None,
        }
    }
}

/// How sampled maneuvers of one target become ellipse constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintGeneration {
    /// One ellipse per step covering all sampled maneuvers.
    #[default]
    Aggregated,
    /// One ellipse per distinct sampled maneuver and step.
    PerSample,
}

/// Outer (convexification) loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScpSettings {
    /// Stop when the largest input change falls below this.
    pub input_tol: f64,
    pub max_iterations: usize,
    /// Constraint violation accepted at convergence.
    pub feasibility_tol: f64,
}

impl Default for ScpSettings {
    fn default() -> Self {
        Self {
            input_tol: 1e-4,
            max_iterations: 30,
            feasibility_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    pub horizon: usize,
    pub q: Matrix4<f64>,
    /// Terminal state weight.
    pub s: Matrix4<f64>,
    pub r: Matrix2<f64>,
    pub beta_ta: f64,
    pub beta_ex: f64,
    pub lambda_slack: f64,
    /// Quadratic slack weight in the recovery problem. It keeps the QP
    /// strictly convex; a penalty with zero slope at zero leaves the exact
    /// penalty behaviour of the linear term intact.
    pub rho_slack: f64,
    pub beta_ex_recovery: f64,
    pub bounds: Bounds,
    pub mode: ControllerMode,
    pub generation: ConstraintGeneration,
    /// Semi-axes of the safety ellipse around a target.
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub scp: ScpSettings,
}

impl Default for OcpConfig {
    fn default() -> Self {
        let w = Matrix4::from_diagonal(&nalgebra::Vector4::new(0.0, 3.0, 0.5, 0.1));
        Self {
            horizon: 12,
            q: w,
            s: w,
            r: Matrix2::from_diagonal(&nalgebra::Vector2::new(1.0, 0.1)),
            beta_ta: 0.95,
            beta_ex: 0.8,
            lambda_slack: 50.0,
            rho_slack: 1.0,
            beta_ex_recovery: 0.995,
            bounds: Bounds::default(),
            mode: ControllerMode::Ssc,
            generation: ConstraintGeneration::Aggregated,
            ellipse_a: 30.0,
            ellipse_b: 2.0,
            scp: ScpSettings::default(),
        }
    }
}

fn is_psd(m: DMatrix<f64>) -> bool {
    (&m - m.transpose()).amax() <= 1e-12 && m.symmetric_eigenvalues().min() >= -1e-12
}

fn dyn_matrix<const D: usize>(m: &nalgebra::SMatrix<f64, D, D>) -> DMatrix<f64> {
    DMatrix::from_column_slice(D, D, m.as_slice())
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !is_psd(dyn_matrix(&self.q)) || !is_psd(dyn_matrix(&self.s)) {
            return Err(Error::Config("state weights must be symmetric PSD".into()));
        }
        if !(self.r - self.r.transpose()).iter().all(|v| v.abs() <= 1e-12)
            || self.r.symmetric_eigenvalues().min() <= 0.0
        {
            return Err(Error::Config("input weight must be symmetric positive definite".into()));
        }
        if !(self.beta_ta > 0.0 && self.beta_ta < 1.0) {
            return Err(Error::Config(format!("beta_ta = {} not in (0, 1)", self.beta_ta)));
        }
        for (name, b) in [("beta_ex", self.beta_ex), ("beta_ex_recovery", self.beta_ex_recovery)] {
            if !(0.5..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} not in [0.5, 1)")));
            }
        }
        if !(self.lambda_slack > 0.0) || !(self.rho_slack > 0.0) {
            return Err(Error::Config("slack weights must be positive".into()));
        }
        if !(self.ellipse_a > 0.0 && self.ellipse_b > 0.0) {
            return Err(Error::Config("ellipse axes must be positive".into()));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    /// The hard problem has no solution; recovery has not been attempted.
    Infeasible,
    RecoveredWithSlack,
    /// Recovery failed too; the inputs are a feasible fallback.
    InfeasibleRecoveryFailed,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::RecoveredWithSlack => "recovered",
            SolveStatus::InfeasibleRecoveryFailed => "recovery_failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SolveStatus::Optimal,
            SolveStatus::Infeasible,
            SolveStatus::RecoveredWithSlack,
            SolveStatus::InfeasibleRecoveryFailed,
        ]
        .into_iter()
        .find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<AgentInput>,
    /// Predicted ego states for steps `1..=N`.
    pub states: Vec<AgentState>,
    /// Tracking cost plus slack penalty.
    pub objective: f64,
    pub status: SolveStatus,
    /// Largest violation reported by the re-checker.
    pub max_violation: f64,
    pub slack_total: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Whether the outer loop met its input tolerance.
    pub converged: bool,
}
