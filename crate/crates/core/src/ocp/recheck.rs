//! Constraint evaluation that shares no code with the solver: the ego
//! trajectory is obtained by forward simulation and the ellipses are
//! evaluated in their original nonlinear form.

use super::OcpProblem;
use crate::chance::{ellipse_gradient_do, ellipse_value, tightening_gamma};
use crate::model::{step_agent, AgentInput, AgentState};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecheckReport {
    pub input: f64,
    pub rate: f64,
    pub lateral: f64,
    /// Largest `γ − d` over all safety ellipses.
    pub safety: f64,
}

impl RecheckReport {
    pub fn max(&self) -> f64 {
        self.input.max(self.rate).max(self.lateral).max(self.safety)
    }

    /// Largest violation of the hard (non-safety) constraints.
    pub fn hard(&self) -> f64 {
        self.input.max(self.rate).max(self.lateral)
    }
}

fn excess(v: f64, (lo, hi): (f64, f64)) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

/// Violations of `inputs` with the safety margins evaluated at `beta_ex`.
pub fn recheck(problem: &OcpProblem, inputs: &[AgentInput], beta_ex: f64) -> RecheckReport {
    let b = &problem.cfg.bounds;
    let mut rep = RecheckReport::default();
    let mut prev = problem.u_prev;
    let mut s = problem.ev0;
    for (k, u) in inputs.iter().enumerate() {
        rep.input = rep.input.max(excess(u.ux, b.ux)).max(excess(u.uy, b.uy));
        rep.rate = rep
            .rate
            .max(excess(u.ux - prev.ux, b.dux))
            .max(excess(u.uy - prev.uy, b.duy));
        prev = *u;
        s = step_agent(&problem.model, s, *u);
        rep.lateral = rep.lateral.max(excess(s.y, b.y));
        for pred in &problem.predictions {
            for e in &pred.ellipses[k] {
                let d = ellipse_value(&s, (e.cx, e.cy), e.a, e.b);
                let gamma = if pred.tighten {
                    let center = AgentState::new(e.cx, 0.0, e.cy, 0.0);
                    let grad = ellipse_gradient_do(&s, &center, e.a, e.b);
                    tightening_gamma(&grad, &pred.covariances[k], beta_ex).unwrap_or(f64::INFINITY)
                } else {
                    0.0
                };
                rep.safety = rep.safety.max(gamma - d);
            }
        }
    }
    rep.safety = rep.safety.max(0.0);
    rep
}
