use nalgebra::{DMatrix, DVector, Matrix4};

use super::predict::ObstaclePrediction;
use super::OcpConfig;
use crate::error::{Error, Result};
use crate::model::{step_agent, AgentInput, AgentState, LinearModel};

/// Condensed OCP: states `ξ = free + Su U` for steps `1..=N`, inputs
/// `U = [ux0, uy0, ux1, uy1, ...]`.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub model: LinearModel,
    pub ev0: AgentState,
    pub u_prev: AgentInput,
    /// Reference states for steps `1..=N`.
    pub refs: Vec<AgentState>,
    pub predictions: Vec<ObstaclePrediction>,
    pub cfg: OcpConfig,
    pub(crate) free: DVector<f64>,
    pub(crate) su: DMatrix<f64>,
    /// Stage weights with the `x` entries removed, one per step `1..=N`.
    pub(crate) weights: Vec<Matrix4<f64>>,
    pub(crate) hessian: DMatrix<f64>,
    pub(crate) linear: DVector<f64>,
    pub(crate) cost_offset: f64,
    /// Input, rate and lateral position limits as `C U ≥ b`.
    pub(crate) c_box: DMatrix<f64>,
    pub(crate) b_box: DVector<f64>,
}

fn drop_position_weight(w: &Matrix4<f64>) -> Matrix4<f64> {
    let mut w = *w;
    for i in 0..4 {
        w[(0, i)] = 0.0;
        w[(i, 0)] = 0.0;
    }
    w
}

pub fn build_problem(
    model: &LinearModel,
    ev0: AgentState,
    u_prev: AgentInput,
    predictions: Vec<ObstaclePrediction>,
    refs: Vec<AgentState>,
    cfg: &OcpConfig,
) -> Result<OcpProblem> {
    cfg.validate()?;
    let n = cfg.horizon;
    if refs.len() != n {
        return Err(Error::Config(format!("{} reference states for horizon {n}", refs.len())));
    }
    for p in &predictions {
        if p.covariances.len() != n || p.ellipses.len() != n {
            return Err(Error::Config(format!(
                "prediction for obstacle {} does not cover horizon {n}",
                p.obstacle
            )));
        }
        if p.trajectories.iter().any(|t| t.len() != n) {
            return Err(Error::Config(format!(
                "trajectory length mismatch for obstacle {}",
                p.obstacle
            )));
        }
    }
    if !ev0.is_finite() || !refs.iter().all(AgentState::is_finite) {
        return Err(Error::Config("non-finite initial or reference state".into()));
    }

    let nu = 2 * n;
    let mut free = DVector::zeros(4 * n);
    let mut su = DMatrix::zeros(4 * n, nu);
    // A^k and A^(k-1-j) B built incrementally
    let mut a_pow = Matrix4::identity();
    let mut blocks: Vec<nalgebra::Matrix4x2<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        a_pow = model.a * a_pow;
        free.rows_mut(4 * k, 4).copy_from(&(a_pow * ev0.to_vector()));
        // block for input j at step k+1 is A^(k-j) B
        if k == 0 {
            blocks.push(model.b);
        } else {
            let next = model.a * blocks[k - 1];
            blocks.push(next);
        }
        for j in 0..=k {
            su.view_mut((4 * k, 2 * j), (4, 2)).copy_from(&blocks[k - j]);
        }
    }

    let weights: Vec<Matrix4<f64>> = (0..n)
        .map(|k| drop_position_weight(if k + 1 == n { &cfg.s } else { &cfg.q }))
        .collect();
    let mut w_bar = DMatrix::zeros(4 * n, 4 * n);
    let mut r_bar = DMatrix::zeros(nu, nu);
    let mut reference = DVector::zeros(4 * n);
    for k in 0..n {
        w_bar.view_mut((4 * k, 4 * k), (4, 4)).copy_from(&weights[k]);
        r_bar.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&cfg.r);
        reference.rows_mut(4 * k, 4).copy_from(&refs[k].to_vector());
    }
    let offset = &free - &reference;
    let sw = su.transpose() * &w_bar;
    let mut hessian = (&sw * &su + &r_bar) * 2.0;
    hessian = (&hessian + hessian.transpose()) * 0.5;
    let linear = &sw * &offset * 2.0;
    let cost_offset = offset.dot(&(&w_bar * &offset));

    let (c_box, b_box) = box_constraints(&free, &su, u_prev, cfg);

    Ok(OcpProblem {
        model: model.clone(),
        ev0,
        u_prev,
        refs,
        predictions,
        cfg: cfg.clone(),
        free,
        su,
        weights,
        hessian,
        linear,
        cost_offset,
        c_box,
        b_box,
    })
}

fn box_constraints(
    free: &DVector<f64>,
    su: &DMatrix<f64>,
    u_prev: AgentInput,
    cfg: &OcpConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = cfg.horizon;
    let nu = 2 * n;
    let b = &cfg.bounds;
    let rows = 4 * nu + 2 * n;
    let mut c = DMatrix::zeros(rows, nu);
    let mut rhs = DVector::zeros(rows);
    let mut r = 0;
    let mut push = |c: &mut DMatrix<f64>, coeffs: &[(usize, f64)], value: f64| {
        for &(j, v) in coeffs {
            c[(r, j)] = v;
        }
        rhs[r] = value;
        r += 1;
    };
    for k in 0..n {
        for (axis, abs, rate, prev) in [
            (0, b.ux, b.dux, u_prev.ux),
            (1, b.uy, b.duy, u_prev.uy),
        ] {
            let i = 2 * k + axis;
            push(&mut c, &[(i, 1.0)], abs.0);
            push(&mut c, &[(i, -1.0)], -abs.1);
            if k == 0 {
                push(&mut c, &[(i, 1.0)], prev + rate.0);
                push(&mut c, &[(i, -1.0)], -(prev + rate.1));
            } else {
                push(&mut c, &[(i, 1.0), (i - 2, -1.0)], rate.0);
                push(&mut c, &[(i, -1.0), (i - 2, 1.0)], -rate.1);
            }
        }
    }
    for k in 0..n {
        let row = 4 * k + 2;
        for j in 0..nu {
            c[(r, j)] = su[(row, j)];
            c[(r + 1, j)] = -su[(row, j)];
        }
        rhs[r] = b.y.0 - free[row];
        rhs[r + 1] = free[row] - b.y.1;
        r += 2;
    }
    debug_assert_eq!(r, rows);
    (c, rhs)
}

impl OcpProblem {
    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub(crate) fn stack_inputs(inputs: &[AgentInput]) -> DVector<f64> {
        DVector::from_iterator(2 * inputs.len(), inputs.iter().flat_map(|u| [u.ux, u.uy]))
    }

    pub(crate) fn unstack_inputs(u: &DVector<f64>) -> Vec<AgentInput> {
        (0..u.len() / 2).map(|k| AgentInput::new(u[2 * k], u[2 * k + 1])).collect()
    }

    /// Predicted ego states for steps `1..=N` under the condensed map.
    pub(crate) fn states_of(&self, u: &DVector<f64>) -> Vec<AgentState> {
        let xi = &self.free + &self.su * u;
        (0..self.horizon())
            .map(|k| AgentState::new(xi[4 * k], xi[4 * k + 1], xi[4 * k + 2], xi[4 * k + 3]))
            .collect()
    }

    /// Condensed tracking cost `½Uᵀ H U + fᵀ U + const`.
    pub(crate) fn condensed_cost(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.linear.dot(u) + self.cost_offset
    }

    /// Tracking cost evaluated by forward simulation of the inputs.
    pub fn tracking_cost(&self, inputs: &[AgentInput]) -> f64 {
        let mut s = self.ev0;
        let mut cost = 0.0;
        for (k, u) in inputs.iter().enumerate() {
            s = step_agent(&self.model, s, *u);
            let e = s.to_vector() - self.refs[k].to_vector();
            cost += (e.transpose() * self.weights[k] * e)[(0, 0)];
            cost += (u.to_vector().transpose() * self.cfg.r * u.to_vector())[(0, 0)];
        }
        cost
    }
}
