use nalgebra::{DMatrix, DVector};

use super::recheck::recheck;
use super::{OcpProblem, OcpSolution, SolveStatus};
use crate::chance::{ellipse_gradient_do, tightening_gamma, SafetyEllipse};
use crate::model::{AgentInput, AgentState, ErrorCovariance};
use crate::qp::QuadraticProgram;

/// Lateral offset applied when a linearization point sits exactly on an
/// ellipse center.
const CENTER_NUDGE: f64 = 1e-3;

/// Recovery slack is measured in hundredths of the ellipse value `d`, so a
/// unit of slack is one percent of the normalized ellipse.
pub const SLACK_UNIT: f64 = 0.01;

/// Tangent half-spaces `rows · U ≥ rhs` of all safety ellipses, with the
/// (obstacle, step) group each row belongs to.
struct Linearization {
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    groups: Vec<usize>,
    n_groups: usize,
}

fn gamma_at(e: &SafetyEllipse, x: f64, y: f64, sigma: &ErrorCovariance, beta: f64, tighten: bool) -> f64 {
    if !tighten {
        return 0.0;
    }
    let ev = AgentState::new(x, 0.0, y, 0.0);
    let center = AgentState::new(e.cx, 0.0, e.cy, 0.0);
    let grad = ellipse_gradient_do(&ev, &center, e.a, e.b);
    // beta is validated with the config
    tightening_gamma(&grad, sigma, beta).unwrap_or(0.0)
}

fn linearize(problem: &OcpProblem, states: &[AgentState], beta: f64) -> Linearization {
    let n = problem.horizon();
    let nu = 2 * n;
    let count: usize = problem.predictions.iter().map(|p| p.constraint_count()).sum();
    let mut rows = DMatrix::zeros(count, nu);
    let mut rhs = DVector::zeros(count);
    let mut groups = Vec::with_capacity(count);
    let mut n_groups = 0;
    let mut r = 0;
    for pred in &problem.predictions {
        for k in 0..n {
            if pred.ellipses[k].is_empty() {
                continue;
            }
            let sigma = &pred.covariances[k];
            for e in &pred.ellipses[k] {
                let (px, py) = (states[k].x, states[k].y);
                let mut gamma = gamma_at(e, px, py, sigma, beta, pred.tighten);
                let (mut qx, mut qy) = (px, py);
                if e.value(px, py) < gamma {
                    // move to the γ level set along the ray from the center
                    let (mut dx, mut dy) = (px - e.cx, py - e.cy);
                    let mut r2 = dx * dx / (e.a * e.a) + dy * dy / (e.b * e.b);
                    if r2 < 1e-18 {
                        let side = if problem.ev0.y > e.cy { 1.0 } else { -1.0 };
                        dx = 0.0;
                        dy = side * CENTER_NUDGE;
                        r2 = dy * dy / (e.b * e.b);
                    }
                    let scale = ((1.0 + gamma) / r2).sqrt();
                    qx = e.cx + scale * dx;
                    qy = e.cy + scale * dy;
                    gamma = gamma_at(e, qx, qy, sigma, beta, pred.tighten);
                }
                let (gx, gy) = e.gradient_ego(qx, qy);
                let ix = 4 * k;
                let iy = 4 * k + 2;
                for j in 0..nu {
                    rows[(r, j)] = gx * problem.su[(ix, j)] + gy * problem.su[(iy, j)];
                }
                rhs[r] = gamma - e.value(qx, qy) + gx * qx + gy * qy
                    - gx * problem.free[ix]
                    - gy * problem.free[iy];
                groups.push(n_groups);
                r += 1;
            }
            n_groups += 1;
        }
    }
    Linearization {
        rows,
        rhs,
        groups,
        n_groups,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Hard,
    Recovery,
}

/// Convex subproblem at one linearization.
fn subproblem(problem: &OcpProblem, lin: &Linearization, variant: Variant) -> QuadraticProgram {
    let nu = 2 * problem.horizon();
    let ns = if variant == Variant::Recovery { lin.n_groups } else { 0 };
    let nv = nu + ns;
    let n_box = problem.c_box.nrows();
    let n_safe = lin.rows.nrows();
    let m = n_box + n_safe + ns;

    let mut hessian = DMatrix::zeros(nv, nv);
    hessian.view_mut((0, 0), (nu, nu)).copy_from(&problem.hessian);
    let mut linear = DVector::zeros(nv);
    linear.rows_mut(0, nu).copy_from(&problem.linear);
    for g in 0..ns {
        hessian[(nu + g, nu + g)] = 2.0 * problem.cfg.rho_slack;
        linear[nu + g] = problem.cfg.lambda_slack;
    }

    let mut constraints = DMatrix::zeros(m, nv);
    let mut bounds = DVector::zeros(m);
    constraints.view_mut((0, 0), (n_box, nu)).copy_from(&problem.c_box);
    bounds.rows_mut(0, n_box).copy_from(&problem.b_box);
    constraints.view_mut((n_box, 0), (n_safe, nu)).copy_from(&lin.rows);
    bounds.rows_mut(n_box, n_safe).copy_from(&lin.rhs);
    if ns > 0 {
        for (i, &g) in lin.groups.iter().enumerate() {
            constraints[(n_box + i, nu + g)] = SLACK_UNIT;
        }
        for g in 0..ns {
            constraints[(n_box + n_safe + g, nu + g)] = 1.0;
        }
    }
    QuadraticProgram {
        hessian,
        linear,
        constraints,
        bounds,
    }
}

struct Iterate {
    u: DVector<f64>,
    objective: f64,
    slack_total: f64,
    violation: f64,
}

fn initial_inputs(problem: &OcpProblem, warm_start: Option<&[AgentInput]>) -> DVector<f64> {
    match warm_start {
        Some(w) if w.len() == problem.horizon() => OcpProblem::stack_inputs(w),
        _ => DVector::zeros(2 * problem.horizon()),
    }
}

fn finish(problem: &OcpProblem, it: &Iterate, status: SolveStatus, iterations: usize, converged: bool) -> OcpSolution {
    OcpSolution {
        inputs: OcpProblem::unstack_inputs(&it.u),
        states: problem.states_of(&it.u),
        objective: it.objective,
        status,
        max_violation: it.violation,
        slack_total: it.slack_total,
        iterations,
        converged,
    }
}

/// Outcome of the convexification loop: the accepted iterate, or the last
/// iterate whose subproblem could be solved (if any) on failure.
enum Outcome {
    Solved { it: Iterate, iterations: usize, converged: bool },
    Failed { last: Option<Iterate>, iterations: usize },
}

fn scp(problem: &OcpProblem, warm_start: Option<&[AgentInput]>, variant: Variant) -> Outcome {
    let settings = problem.cfg.scp;
    let beta = match variant {
        Variant::Hard => problem.cfg.beta_ex,
        Variant::Recovery => problem.cfg.beta_ex_recovery,
    };
    let nu = 2 * problem.horizon();
    let mut u = initial_inputs(problem, warm_start);
    let mut best: Option<Iterate> = None;
    let mut last: Option<Iterate> = None;

    for iter in 1..=settings.max_iterations {
        let states = problem.states_of(&u);
        let lin = linearize(problem, &states, beta);
        let qp = subproblem(problem, &lin, variant);
        let sol = match qp.solve() {
            Ok(s) => s,
            Err(_) => {
                return match variant {
                    // the recovery falls back on its last solved iterate
                    Variant::Recovery => Outcome::Failed { last, iterations: iter },
                    Variant::Hard => Outcome::Failed { last: None, iterations: iter },
                };
            }
        };
        let u_new: DVector<f64> = sol.x.rows(0, nu).into_owned();
        let change = (&u_new - &u).amax();
        u = u_new;

        let inputs = OcpProblem::unstack_inputs(&u);
        let report = recheck(problem, &inputs, beta);
        let slacks = sol.x.rows(nu, sol.x.len() - nu);
        let slack_total: f64 = slacks.iter().map(|s| s.max(0.0)).sum();
        let objective = problem.condensed_cost(&u)
            + problem.cfg.lambda_slack * slack_total
            + problem.cfg.rho_slack * slacks.iter().map(|s| s * s).sum::<f64>();
        let it = Iterate {
            u: u.clone(),
            objective,
            slack_total,
            violation: report.max(),
        };
        let accepted = match variant {
            Variant::Hard => report.max() <= settings.feasibility_tol,
            Variant::Recovery => report.hard() <= settings.feasibility_tol,
        };
        if change < settings.input_tol && accepted {
            return Outcome::Solved { it, iterations: iter, converged: true };
        }
        if variant == Variant::Hard && report.max() <= 1e-6 && best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(Iterate { u: u.clone(), ..it });
            continue;
        }
        last = Some(it);
    }
    let iterations = settings.max_iterations;
    match (variant, best, last) {
        (Variant::Hard, Some(b), _) => Outcome::Solved { it: b, iterations, converged: false },
        (Variant::Hard, None, _) => Outcome::Failed { last: None, iterations },
        (Variant::Recovery, _, Some(l)) => Outcome::Solved { it: l, iterations, converged: false },
        (Variant::Recovery, _, None) => Outcome::Failed { last: None, iterations },
    }
}

/// Solve the hard problem. On failure the status is `Infeasible` and the
/// inputs are the starting guess.
pub fn solve(problem: &OcpProblem, warm_start: Option<&[AgentInput]>) -> OcpSolution {
    match scp(problem, warm_start, Variant::Hard) {
        Outcome::Solved { it, iterations, converged } => finish(problem, &it, SolveStatus::Optimal, iterations, converged),
        Outcome::Failed { iterations, .. } => {
            let u = initial_inputs(problem, warm_start);
            let inputs = OcpProblem::unstack_inputs(&u);
            let it = Iterate {
                objective: problem.condensed_cost(&u),
                violation: recheck(problem, &inputs, problem.cfg.beta_ex).max(),
                u,
                slack_total: 0.0,
            };
            finish(problem, &it, SolveStatus::Infeasible, iterations, false)
        }
    }
}

/// Softened problem: every safety group gets a nonnegative slack `s`,
/// relaxing the constraint to `d ≥ γ − s·SLACK_UNIT` and penalized by
/// `λ s + ρ s²`; the margins are recomputed at the recovery risk.
/// If no subproblem can be solved the fallback inputs are returned.
pub fn solve_recovery(problem: &OcpProblem, warm_start: Option<&[AgentInput]>) -> OcpSolution {
    let beta = problem.cfg.beta_ex_recovery;
    match scp(problem, warm_start, Variant::Recovery) {
        Outcome::Solved { it, iterations, converged } => {
            finish(problem, &it, SolveStatus::RecoveredWithSlack, iterations, converged)
        }
        Outcome::Failed { last: Some(it), iterations } => {
            finish(problem, &it, SolveStatus::InfeasibleRecoveryFailed, iterations, false)
        }
        Outcome::Failed { last: None, iterations } => {
            let inputs = fallback_inputs(problem, warm_start);
            let u = OcpProblem::stack_inputs(&inputs);
            let it = Iterate {
                objective: problem.condensed_cost(&u),
                violation: recheck(problem, &inputs, beta).max(),
                u,
                slack_total: 0.0,
            };
            finish(problem, &it, SolveStatus::InfeasibleRecoveryFailed, iterations, false)
        }
    }
}

/// The hard problem, followed by the recovery problem if it is infeasible.
pub fn solve_with_recovery(problem: &OcpProblem, warm_start: Option<&[AgentInput]>) -> OcpSolution {
    let hard = solve(problem, warm_start);
    if hard.status == SolveStatus::Optimal {
        return hard;
    }
    solve_recovery(problem, warm_start)
}

/// Warm start (or zero inputs) made to respect the input and rate limits,
/// clamped step by step from the previously applied input.
pub fn fallback_inputs(problem: &OcpProblem, warm_start: Option<&[AgentInput]>) -> Vec<AgentInput> {
    let n = problem.horizon();
    let target: Vec<AgentInput> = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![AgentInput::ZERO; n],
    };
    let mut prev = problem.u_prev;
    target
        .into_iter()
        .map(|u| {
            prev = problem.cfg.bounds.clamp_input(u, prev);
            prev
        })
        .collect()
}
