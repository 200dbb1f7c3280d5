use nalgebra::{Matrix2, Matrix4};

use super::episode::EpisodeTrace;
use crate::model::{AgentState, RoadGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self {
            length: 6.0,
            width: 2.0,
        }
    }
}

/// Strict overlap of the axis-aligned vehicle rectangles; touching edges do
/// not count.
pub fn check_collision(ev: &AgentState, tvs: &[AgentState], dims: &VehicleDims) -> bool {
    tvs.iter()
        .any(|tv| (ev.x - tv.x).abs() < dims.length && (ev.y - tv.y).abs() < dims.width)
}

/// Stage cost of a realized state and the input that led to it. The lateral
/// reference is the center of the lane the state is in; `x` is not weighted.
pub(crate) fn stage_cost(
    state: &AgentState,
    input: (f64, f64),
    v_ref: f64,
    road: &RoadGeometry,
    q: &Matrix4<f64>,
    r: &Matrix2<f64>,
) -> f64 {
    let y_ref = road.lane_center(road.lane_index(state.y));
    let e = nalgebra::Vector4::new(0.0, state.vx - v_ref, state.y - y_ref, state.vy);
    let u = nalgebra::Vector2::new(input.0, input.1);
    (e.transpose() * q * e)[(0, 0)] + (u.transpose() * r * u)[(0, 0)]
}

/// Realized cost `Σ ‖Δξ_{k+1}‖²_Q + ‖u_k‖²_R` recomputed from a trace.
pub fn closed_loop_cost(trace: &EpisodeTrace, q: &Matrix4<f64>, r: &Matrix2<f64>) -> f64 {
    let mut q = *q;
    for i in 0..4 {
        q[(0, i)] = 0.0;
        q[(i, 0)] = 0.0;
    }
    trace
        .steps
        .iter()
        .map(|s| stage_cost(&s.ev, (s.input.ux, s.input.uy), trace.ev_v_ref, &trace.road, &q, r))
        .sum()
}
