//! Elliptic safety constraints and their analytic chance-constraint
//! tightening.
//!
//! For an ego position outside an ellipse around a target,
//! `d = Δx²/a² + Δy²/b² − 1 ≥ 0`. Linearizing `d` in the target state around
//! its nominal prediction turns the Gaussian prediction error into a scalar
//! Gaussian `∇d·e ~ N(0, ∇d Σ ∇dᵀ)`; requiring `P(∇d·e ≥ −d) ≥ β` is then
//! equivalent to `d ≥ γ` with `γ = √(2 ∇d Σ ∇dᵀ) · erf⁻¹(2β − 1)`.

use nalgebra::RowVector4;

use crate::erf::erf_inv;
use crate::error::{Error, Result};
use crate::model::{AgentState, ErrorCovariance};
use crate::task::{Lateral, Longitudinal, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyEllipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
}

impl SafetyEllipse {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Domain(format!("ellipse axes must be positive, got a={a} b={b}")));
        }
        Ok(Self { cx, cy, a, b })
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        dx * dx / (self.a * self.a) + dy * dy / (self.b * self.b) - 1.0
    }

    /// Gradient of `d` with respect to the ego position `(x, y)`.
    pub fn gradient_ego(&self, x: f64, y: f64) -> (f64, f64) {
        (
            2.0 * (x - self.cx) / (self.a * self.a),
            2.0 * (y - self.cy) / (self.b * self.b),
        )
    }

    /// Gradient of `d` with respect to the target state `[x, vx, y, vy]`.
    pub fn gradient_target(&self, x: f64, y: f64) -> RowVector4<f64> {
        let (gx, gy) = self.gradient_ego(x, y);
        RowVector4::new(-gx, 0.0, -gy, 0.0)
    }
}

/// A safety constraint `d ≥ gamma` at one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightenedConstraint {
    pub ellipse: SafetyEllipse,
    pub gamma: f64,
    pub grad_do: RowVector4<f64>,
    pub step: usize,
    pub obstacle: usize,
    pub sample: usize,
}

pub fn ellipse_value(ev: &AgentState, center: (f64, f64), a: f64, b: f64) -> f64 {
    let dx = ev.x - center.0;
    let dy = ev.y - center.1;
    dx * dx / (a * a) + dy * dy / (b * b) - 1.0
}

/// `∂d/∂ξ_DO` at the ego state and nominal target state.
pub fn ellipse_gradient_do(ev: &AgentState, do_nominal: &AgentState, a: f64, b: f64) -> RowVector4<f64> {
    let dx = ev.x - do_nominal.x;
    let dy = ev.y - do_nominal.y;
    RowVector4::new(-2.0 * dx / (a * a), 0.0, -2.0 * dy / (b * b), 0.0)
}

/// Tightening margin for execution risk `beta_ex ∈ [0.5, 1)`.
///
/// Note the argument is `2β − 1`, so the margin is non-negative and grows
/// with `beta_ex`.
pub fn tightening_gamma(grad_do: &RowVector4<f64>, sigma_e: &ErrorCovariance, beta_ex: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&beta_ex) {
        return Err(Error::Domain(format!("beta_ex = {beta_ex} not in [0.5, 1)")));
    }
    let var = (grad_do * sigma_e.matrix() * grad_do.transpose())[(0, 0)].max(0.0);
    Ok((2.0 * var).sqrt() * erf_inv(2.0 * beta_ex - 1.0))
}

/// Nominal target positions per maneuver at one prediction step. Lateral and
/// longitudinal motion decouple, so `x` is indexed by the longitudinal
/// maneuver and `y` by the lateral one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManeuverPositions {
    pub longitudinal: Vec<(Longitudinal, f64)>,
    pub lateral: Vec<(Lateral, f64)>,
}

impl ManeuverPositions {
    pub fn insert(&mut self, task: Task, x: f64, y: f64) {
        if !self.longitudinal.iter().any(|e| e.0 == task.longitudinal) {
            self.longitudinal.push((task.longitudinal, x));
        }
        if !self.lateral.iter().any(|e| e.0 == task.lateral) {
            self.lateral.push((task.lateral, y));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.longitudinal.is_empty() || self.lateral.is_empty()
    }
}

fn mean_and_spread(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    (mean, hi - lo)
}

/// Single ellipse covering the sampled maneuvers of one target.
///
/// The center averages the positions of the maneuvers present; the axes grow
/// by half the spread between the extreme maneuvers, and the semi-major axis
/// additionally by `(2 / l_lane)(b̃ − b)`. With all three maneuvers per axis
/// the spread is `|x_AC − x_BR|` and `|y_LCL − y_LCR|`.
pub fn aggregate_ellipse(positions: &ManeuverPositions, a: f64, b: f64, l_lane: f64) -> Result<SafetyEllipse> {
    if positions.is_empty() {
        return Err(Error::Domain("no maneuver positions to aggregate".into()));
    }
    let (cx, spread_x) = mean_and_spread(positions.longitudinal.iter().map(|e| e.1));
    let (cy, spread_y) = mean_and_spread(positions.lateral.iter().map(|e| e.1));
    let b_agg = b + 0.5 * spread_y;
    let a_agg = a + 0.5 * spread_x + 2.0 / l_lane * (b_agg - b);
    SafetyEllipse::new(cx, cy, a_agg, b_agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Vector4};
    use proptest::prelude::*;

    #[test]
    fn ellipse_value_examples() {
        let c = (12.0, 3.5);
        let on = AgentState::new(42.0, 0.0, 3.5, 0.0);
        assert_eq!(ellipse_value(&on, c, 30.0, 2.0), 0.0);
        let mid = AgentState::new(12.0, 0.0, 3.5, 0.0);
        assert_eq!(ellipse_value(&mid, c, 30.0, 2.0), -1.0);
        let far = AgentState::new(72.0, 0.0, 3.5, 0.0);
        assert_eq!(ellipse_value(&far, c, 30.0, 2.0), 3.0);
    }

    #[test]
    fn gradient_examples() {
        let ev = AgentState::new(5.0, 20.0, 1.0, 0.0);
        assert_eq!(ellipse_gradient_do(&ev, &ev, 30.0, 2.0), RowVector4::zeros());
        let tv = AgentState::new(-25.0, 0.0, 1.0, 0.0);
        let g = ellipse_gradient_do(&ev, &tv, 30.0, 2.0);
        assert!((g[0] + 1.0 / 15.0).abs() < 1e-15);
        assert_eq!((g[1], g[2], g[3]), (0.0, 0.0, 0.0));
    }

    fn central_difference(ev: &AgentState, tv: &AgentState, a: f64, b: f64, h: f64) -> (f64, f64) {
        let f = |dx: f64, dy: f64| ellipse_value(ev, (tv.x + dx, tv.y + dy), a, b);
        ((f(h, 0.0) - f(-h, 0.0)) / (2.0 * h), (f(0.0, h) - f(0.0, -h)) / (2.0 * h))
    }

    #[test]
    fn gamma_examples() {
        let g = RowVector4::new(1.0, 0.0, 0.0, 0.0);
        let sigma = ErrorCovariance(Matrix4::from_diagonal(&Vector4::new(0.5, 0.0, 0.0, 0.0)));
        let gamma = tightening_gamma(&g, &sigma, 0.8).unwrap();
        assert!((gamma - 0.595_116_081_449_994_8).abs() < 1e-12);
        assert_eq!(tightening_gamma(&g, &sigma, 0.5).unwrap(), 0.0);
        for bad in [0.4, 1.0, 1.2] {
            assert!(matches!(tightening_gamma(&g, &sigma, bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn aggregate_examples() {
        let mut p = ManeuverPositions::default();
        let tasks = [
            (Task::new(Lateral::LaneKeep, Longitudinal::Insignificant), 50.0, 3.5),
            (Task::new(Lateral::ChangeLeft, Longitudinal::Accelerate), 55.0, 0.0),
            (Task::new(Lateral::ChangeRight, Longitudinal::Brake), 45.0, 7.0),
        ];
        for (t, x, y) in tasks {
            p.insert(t, x, y);
        }
        let e = aggregate_ellipse(&p, 30.0, 2.0, 3.5).unwrap();
        assert!((e.b - 5.5).abs() < 1e-12);
        assert!((e.a - 37.0).abs() < 1e-12);
        assert!((e.cx - 50.0).abs() < 1e-12 && (e.cy - 3.5).abs() < 1e-12);

        let mut same = ManeuverPositions::default();
        for t in Task::all() {
            same.insert(t, 10.0, 3.5);
        }
        assert_eq!(aggregate_ellipse(&same, 30.0, 2.0, 3.5).unwrap(), SafetyEllipse::new(10.0, 3.5, 30.0, 2.0).unwrap());

        let mut keep = ManeuverPositions::default();
        keep.insert(Task::KEEP, 8.0, 0.2);
        assert_eq!(aggregate_ellipse(&keep, 30.0, 2.0, 3.5).unwrap(), SafetyEllipse::new(8.0, 0.2, 30.0, 2.0).unwrap());

        assert!(aggregate_ellipse(&ManeuverPositions::default(), 30.0, 2.0, 3.5).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            ex in -80.0f64..80.0, ey in -2.0f64..9.0, tx in -80.0f64..80.0, ty in -2.0f64..9.0,
            a in 5.0f64..40.0, b in 1.0f64..6.0,
        ) {
            let ev = AgentState::new(ex, 0.0, ey, 0.0);
            let tv = AgentState::new(tx, 0.0, ty, 0.0);
            let g = ellipse_gradient_do(&ev, &tv, a, b);
            let (fx, fy) = central_difference(&ev, &tv, a, b, 1e-5);
            let scale = g.abs().max().max(1e-3);
            prop_assert!((g[0] - fx).abs() / scale < 1e-5);
            prop_assert!((g[2] - fy).abs() / scale < 1e-5);
        }

        #[test]
        fn gamma_monotone_and_scales(v in 1e-4f64..10.0, b1 in 0.5f64..0.999, b2 in 0.5f64..0.999, c in -5.0f64..5.0) {
            let g = RowVector4::new(1.0, 0.0, 0.0, 0.0);
            let s = ErrorCovariance(Matrix4::from_diagonal(&Vector4::new(v, 0.0, 0.0, 0.0)));
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            if hi - lo > 1e-9 {
                prop_assert!(tightening_gamma(&g, &s, lo).unwrap() < tightening_gamma(&g, &s, hi).unwrap());
            }
            let scaled = ErrorCovariance(s.0 * (c * c));
            let lhs = tightening_gamma(&g, &scaled, hi).unwrap();
            let rhs = c.abs() * tightening_gamma(&g, &s, hi).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn aggregated_axes_never_shrink(
            xs in proptest::collection::vec(-100.0f64..100.0, 3),
            ys in proptest::collection::vec(-2.0f64..9.0, 3),
            mask in 1u16..512,
        ) {
            let mut p = ManeuverPositions::default();
            for (i, t) in Task::all().enumerate() {
                if mask & (1 << i) != 0 {
                    p.insert(t, xs[t.longitudinal as usize], ys[t.lateral as usize]);
                }
            }
            let e = aggregate_ellipse(&p, 30.0, 2.0, 3.5).unwrap();
            prop_assert!(e.a >= 30.0 && e.b >= 2.0);
        }
    }
}
