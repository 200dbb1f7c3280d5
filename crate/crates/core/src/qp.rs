//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize     ½ xᵀ H x + fᵀ x
//!     subject to   C x ≥ b
//! ```
//!
//! Solved with the dual active-set method of Goldfarb and Idnani. The
//! iteration starts at the unconstrained minimizer and adds violated
//! constraints one at a time, dropping active constraints whose multipliers
//! would turn negative. Primal feasibility is only reached at termination,
//! and an empty feasible set is detected when a violated constraint cannot be
//! satisfied by any primal or dual step.
//!
//! The projections are recomputed from a QR factorization of the active
//! normals in the `J = L⁻ᵀ` frame (`H = L Lᵀ`) at every step instead of being
//! updated with Givens rotations; problem sizes here are a few dozen
//! variables.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QpError {
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// One constraint normal per row.
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Lagrange multipliers in the original constraint scaling.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Primal feasibility tolerance on unit-normalized constraint rows.
    pub feasibility_tol: f64,
    /// Relative threshold below which a step direction counts as zero.
    pub degeneracy_tol: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            degeneracy_tol: 1e-12,
            max_iterations: 5000,
        }
    }
}

impl QuadraticProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest violation `max(b − C x, 0)`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let s = &self.constraints * x - &self.bounds;
        s.iter().fold(0.0f64, |acc, v| acc.max(-v))
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        self.solve_with(&QpSettings::default())
    }

    pub fn solve_with(&self, settings: &QpSettings) -> Result<QpSolution, QpError> {
        let n = self.dim();
        let m = self.constraints.nrows();
        assert_eq!(self.hessian.shape(), (n, n));
        assert_eq!(self.constraints.ncols(), n);
        assert_eq!(self.bounds.len(), m);

        // unit rows; zero rows are either trivially satisfied or infeasible
        let mut c = self.constraints.clone();
        let mut b = self.bounds.clone();
        let mut scale = vec![1.0; m];
        let mut usable = vec![true; m];
        for i in 0..m {
            let norm = c.row(i).norm();
            if norm == 0.0 {
                if b[i] > settings.feasibility_tol {
                    return Err(QpError::Infeasible);
                }
                usable[i] = false;
                continue;
            }
            c.row_mut(i).scale_mut(1.0 / norm);
            b[i] /= norm;
            scale[i] = norm;
        }

        let chol = self
            .hessian
            .clone()
            .cholesky()
            .ok_or(QpError::NotPositiveDefinite)?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(QpError::NotPositiveDefinite)?;
        let j = l_inv.transpose();
        let mut x = -chol.solve(&self.linear);

        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut iterations = 0usize;

        loop {
            // most violated inactive constraint
            let slack = &c * &x - &b;
            let mut pick: Option<(usize, f64)> = None;
            for i in 0..m {
                if !usable[i] || active.contains(&i) {
                    continue;
                }
                if slack[i] < -settings.feasibility_tol && pick.is_none_or(|(_, s)| slack[i] < s) {
                    pick = Some((i, slack[i]));
                }
            }
            let Some((p, _)) = pick else { break };
            let np: DVector<f64> = c.row(p).transpose();
            let mut u_plus = 0.0;

            loop {
                iterations += 1;
                if iterations > settings.max_iterations {
                    return Err(QpError::IterationLimit);
                }
                let d = j.transpose() * &np;
                let (z, r) = if active.is_empty() {
                    (&j * &d, DVector::zeros(0))
                } else {
                    let mut normals = DMatrix::zeros(n, active.len());
                    for (col, &i) in active.iter().enumerate() {
                        normals.set_column(col, &c.row(i).transpose());
                    }
                    let qr = (j.transpose() * normals).qr();
                    let q1 = qr.q();
                    let rr = qr.r();
                    let proj = q1.transpose() * &d;
                    let z = &j * (&d - &q1 * &proj);
                    let r = rr
                        .solve_upper_triangular(&proj)
                        .unwrap_or_else(|| DVector::zeros(active.len()));
                    (z, r)
                };

                // partial (dual) step length
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, &rk) in r.iter().enumerate() {
                    if rk > settings.degeneracy_tol {
                        let ratio = u[k] / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(k);
                        }
                    }
                }
                // full (primal) step length
                let zn = z.dot(&np);
                let t2 = if zn > settings.degeneracy_tol * d.norm_squared() {
                    -(np.dot(&x) - b[p]) / zn
                } else {
                    f64::INFINITY
                };

                if t1.is_infinite() && t2.is_infinite() {
                    return Err(QpError::Infeasible);
                }
                if t2.is_infinite() {
                    for (uk, rk) in u.iter_mut().zip(r.iter()) {
                        *uk -= t1 * rk;
                    }
                    u_plus += t1;
                    let k = drop_at.expect("finite partial step has an index");
                    active.remove(k);
                    u.remove(k);
                    continue;
                }
                let t = t1.min(t2);
                x += t * &z;
                for (uk, rk) in u.iter_mut().zip(r.iter()) {
                    *uk -= t * rk;
                }
                u_plus += t;
                if t2 <= t1 {
                    active.push(p);
                    u.push(u_plus);
                    break;
                }
                let k = drop_at.expect("finite partial step has an index");
                active.remove(k);
                u.remove(k);
            }
        }

        let mut multipliers = DVector::zeros(m);
        for (&i, &ui) in active.iter().zip(u.iter()) {
            multipliers[i] = ui.max(0.0) / scale[i];
        }
        Ok(QpSolution {
            objective: self.objective(&x),
            x,
            multipliers,
            active,
            iterations,
        })
    }
}
