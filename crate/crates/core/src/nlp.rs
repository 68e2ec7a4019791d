//! Sequential quadratic programming for sparse, box-bounded NLPs
//!
//! ```text
//!     minimize    f(z)
//!     subject to  c(z)  = 0
//!                 g(z) <= 0
//!                 l <= z <= u
//! ```
//!
//! Each iteration solves a convex QP built from a positive semidefinite
//! Hessian approximation supplied by the problem (Gauss-Newton for
//! least-squares objectives) and globalizes with an l1 merit line search.

use crate::linalg::SparseMatrix;
use crate::qp::{self, QpProblem, QpSettings, QpStatus, WorkingSet};

/// Static shape of an NLP: bounds and band keys (see [`QpProblem`]).
#[derive(Debug, Clone)]
pub struct NlpStructure {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub var_keys: Vec<usize>,
    pub eq_keys: Vec<usize>,
    pub ineq_keys: Vec<usize>,
}

impl NlpStructure {
    pub fn nvars(&self) -> usize {
        self.lower.len()
    }
}

/// Function values and first derivatives at a point.
#[derive(Debug, Clone)]
pub struct NlpEval {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// Positive semidefinite approximation of the objective Hessian.
    pub hessian: SparseMatrix,
    pub eq: Vec<f64>,
    pub eq_jac: SparseMatrix,
    pub ineq: Vec<f64>,
    pub ineq_jac: SparseMatrix,
}

pub trait Nlp {
    fn structure(&self) -> &NlpStructure;

    fn objective(&self, z: &[f64]) -> f64;

    /// Equality and inequality residuals.
    fn constraints(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>);

    fn evaluate(&self, z: &[f64]) -> NlpEval;

    /// Positive semidefinite part of the constraint curvature
    /// `sum lambda_i grad^2 c_i + sum mu_j grad^2 g_j`, added to the QP Hessian.
    fn constraint_curvature(
        &self,
        _z: &[f64],
        _lambda: &[f64],
        _mu: &[f64],
    ) -> Option<SparseMatrix> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    /// Residual violation above this value at a stationary point of the
    /// violation declares the problem infeasible.
    pub infeasibility_tol: f64,
    pub qp: QpSettings,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-12,
            infeasibility_tol: 1e-6,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    Infeasible,
    MaxIter,
    /// Line search could not make progress; the iterate is the best found.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SqpResult {
    pub z: Vec<f64>,
    pub objective: f64,
    pub status: SqpStatus,
    pub kkt_residual: f64,
    /// Max-norm constraint violation at `z`.
    pub violation: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub working_set: Option<WorkingSet>,
}

fn max_violation(s: &NlpStructure, z: &[f64], eq: &[f64], ineq: &[f64]) -> f64 {
    let mut v = 0.0f64;
    for c in eq {
        v = v.max(c.abs());
    }
    for g in ineq {
        v = v.max(*g);
    }
    for i in 0..z.len() {
        v = v.max(s.lower[i] - z[i]).max(z[i] - s.upper[i]);
    }
    v
}

/// l1 violation with one penalty weight per constraint (equalities first).
fn weighted_violation(w: &[f64], eq: &[f64], ineq: &[f64]) -> f64 {
    let me = eq.len();
    eq.iter().zip(w).map(|(c, w)| w * c.abs()).sum::<f64>()
        + ineq
            .iter()
            .zip(&w[me..])
            .map(|(g, w)| w * g.max(0.0))
            .sum::<f64>()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Scaled first-order optimality residual of `(z, lambda, mu, bound)`.
pub fn kkt_residual(
    s: &NlpStructure,
    z: &[f64],
    ev: &NlpEval,
    lambda: &[f64],
    mu: &[f64],
    bound: &[f64],
) -> f64 {
    let jl = ev.eq_jac.tr_mul_vec(lambda);
    let jm = ev.ineq_jac.tr_mul_vec(mu);
    let mut stat = 0.0f64;
    for i in 0..z.len() {
        stat = stat.max((ev.gradient[i] + jl[i] + jm[i] - bound[i]).abs());
    }
    let scale = inf_norm(&ev.gradient).max(1.0);
    let mut comp = 0.0f64;
    for (m, g) in mu.iter().zip(&ev.ineq) {
        comp = comp.max((m * g).abs());
    }
    for i in 0..z.len() {
        if bound[i] > 0.0 {
            comp = comp.max(bound[i] * (z[i] - s.lower[i]).abs().min(1e300));
        } else if bound[i] < 0.0 {
            comp = comp.max(-bound[i] * (s.upper[i] - z[i]).abs().min(1e300));
        }
    }
    let dual = mu.iter().fold(0.0f64, |a, m| a.max(-m));
    let feas = max_violation(s, z, &ev.eq, &ev.ineq);
    (stat / scale).max(comp / scale).max(dual).max(feas)
}

struct Step {
    d: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    bound: Vec<f64>,
    feasible: bool,
    working_set: WorkingSet,
}

const PROXIMAL: [f64; 2] = [1e-10, 1e-8];

fn solve_qp(
    nlp: &dyn Nlp,
    z: &[f64],
    ev: &NlpEval,
    hint: Option<&WorkingSet>,
    lambda_prev: &[f64],
    mu_prev: &[f64],
    rhs: Option<(&[f64], &[f64])>,
    settings: &SqpSettings,
) -> Option<Step> {
    let s = nlp.structure();
    let n = z.len();
    let mut hessian = ev.hessian.clone();
    if let Some(c) = nlp.constraint_curvature(z, lambda_prev, mu_prev) {
        hessian.entries.extend(c.entries);
    }
    let build = |h: SparseMatrix| QpProblem {
        hessian: h,
        gradient: ev.gradient.clone(),
        eq: ev.eq_jac.clone(),
        eq_rhs: rhs
            .map(|r| r.0.to_vec())
            .unwrap_or_else(|| ev.eq.iter().map(|c| -c).collect()),
        ineq: ev.ineq_jac.clone(),
        ineq_rhs: rhs
            .map(|r| r.1.to_vec())
            .unwrap_or_else(|| ev.ineq.iter().map(|g| -g).collect()),
        lower: (0..n).map(|i| s.lower[i] - z[i]).collect(),
        upper: (0..n).map(|i| s.upper[i] - z[i]).collect(),
        var_keys: s.var_keys.clone(),
        eq_keys: s.eq_keys.clone(),
        ineq_keys: s.ineq_keys.clone(),
    };
    let scale = hessian.max_abs().max(1.0);
    let mut sol = qp::solve(&build(hessian.clone()), None, hint, &settings.qp);
    // The Gauss-Newton model can be singular on the null space of the active
    // constraints; a proximal term makes the subproblem strictly convex.
    for prox in PROXIMAL {
        if sol.is_ok() {
            break;
        }
        let mut h = hessian.clone();
        for i in 0..n {
            h.push(i, i, prox * scale);
        }
        sol = qp::solve(&build(h), None, hint, &settings.qp);
    }
    let sol = sol.ok()?;
    Some(Step {
        feasible: sol.status == QpStatus::Optimal,
        d: sol.x,
        lambda: sol.eq_multipliers,
        mu: sol.ineq_multipliers,
        bound: sol.bound_multipliers,
        working_set: sol.working_set,
    })
}

/// Runs SQP from `z0` (clamped into the bounds).
pub fn solve(nlp: &dyn Nlp, z0: &[f64], settings: &SqpSettings) -> SqpResult {
    let s = nlp.structure();
    let n = s.nvars();
    let mut z: Vec<f64> = (0..n)
        .map(|i| z0[i].clamp(s.lower[i], s.upper[i]))
        .collect();
    let me = s.eq_keys.len();
    let mi = s.ineq_keys.len();
    let mut weights = vec![1.0f64; me + mi];
    let unit = vec![1.0f64; me + mi];
    let mut hint: Option<WorkingSet> = None;
    let mut mu_prev = vec![0.0; mi];
    let mut lambda = vec![0.0; me];
    let mut iterations = 0;
    let mut last_kkt = f64::INFINITY;
    let mut stalled_infeasible = 0;

    let finish = |z: Vec<f64>,
                  status: SqpStatus,
                  kkt: f64,
                  iterations: usize,
                  lambda: Vec<f64>,
                  mu: Vec<f64>,
                  hint: Option<WorkingSet>| {
        let (eq, ineq) = nlp.constraints(&z);
        SqpResult {
            objective: nlp.objective(&z),
            violation: max_violation(s, &z, &eq, &ineq),
            z,
            status,
            kkt_residual: kkt,
            iterations,
            eq_multipliers: lambda,
            ineq_multipliers: mu,
            working_set: hint,
        }
    };

    for _ in 0..=settings.max_iter {
        let ev = nlp.evaluate(&z);
        let Some(step) = solve_qp(
            nlp,
            &z,
            &ev,
            hint.as_ref(),
            &lambda,
            &mu_prev,
            None,
            settings,
        ) else {
            return finish(
                z,
                SqpStatus::Stalled,
                last_kkt,
                iterations,
                lambda,
                mu_prev,
                hint,
            );
        };
        let kkt = if step.feasible {
            kkt_residual(s, &z, &ev, &step.lambda, &step.mu, &step.bound)
        } else {
            f64::INFINITY
        };
        last_kkt = kkt;
        let lambda_used = lambda.clone();
        let mu_used = mu_prev.clone();
        // Elastic multipliers sit at the slack penalty and say nothing about
        // the true multipliers.
        if step.feasible {
            lambda.clone_from(&step.lambda);
            mu_prev.clone_from(&step.mu);
        }
        hint = Some(step.working_set.clone());
        if kkt <= settings.tol {
            return finish(
                z,
                SqpStatus::Converged,
                kkt,
                iterations,
                lambda,
                mu_prev,
                hint,
            );
        }
        if iterations == settings.max_iter {
            break;
        }

        let dnorm = inf_norm(&step.d);
        let znorm = inf_norm(&z).max(1.0);
        if !step.feasible {
            // Linearization is inconsistent: the step minimizes linearized
            // violation. No movement means a stationary point of violation.
            if dnorm <= 1e-10 * znorm {
                stalled_infeasible += 1;
            }
            if stalled_infeasible >= 2 {
                return finish(
                    z,
                    SqpStatus::Infeasible,
                    kkt,
                    iterations,
                    lambda,
                    mu_prev,
                    hint,
                );
            }
        } else if dnorm <= 1e-15 * znorm {
            return finish(
                z,
                SqpStatus::Stalled,
                kkt,
                iterations,
                lambda,
                mu_prev,
                hint,
            );
        }

        if step.feasible {
            for (w, m) in weights.iter_mut().zip(step.lambda.iter().chain(&step.mu)) {
                *w = w.max(1.1 * m.abs());
            }
        }
        // Directional derivative of the l1 merit along the linear model.
        let jd = ev.eq_jac.mul_vec(&step.d);
        let gd = ev.ineq_jac.mul_vec(&step.d);
        let lin_eq: Vec<f64> = ev.eq.iter().zip(&jd).map(|(c, j)| c + j).collect();
        let lin_in: Vec<f64> = ev.ineq.iter().zip(&gd).map(|(g, j)| g + j).collect();
        let grad_d: f64 = ev.gradient.iter().zip(&step.d).map(|(g, d)| g * d).sum();
        // Inconsistent linearizations are followed on the violation alone.
        let (fw, pen) = if step.feasible {
            (1.0, &weights)
        } else {
            (0.0, &unit)
        };
        let pviol0 = weighted_violation(pen, &ev.eq, &ev.ineq);
        let mut deriv = fw * grad_d + weighted_violation(pen, &lin_eq, &lin_in) - pviol0;
        if deriv >= 0.0 {
            deriv = -1e-14 * (fw * ev.objective.abs() + pviol0).max(1e-300);
        }
        let merit0 = fw * ev.objective + pviol0;
        // A predicted decrease below the rounding level of the merit cannot be
        // checked; such steps are taken in full.
        let terms = (n + me + mi) as f64;
        let noise = terms * f64::EPSILON * (fw * ev.objective.abs() + pviol0 + 1.0);
        let merit = |zz: &[f64]| {
            let (eq, ineq) = nlp.constraints(zz);
            let v = fw * nlp.objective(zz) + weighted_violation(pen, &eq, &ineq);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let trial = |t: f64, d: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| (z[i] + t * d[i]).clamp(s.lower[i], s.upper[i]))
                .collect()
        };

        let full = trial(1.0, &step.d);
        let accept_full = -deriv <= noise || merit(&full) <= merit0 + settings.armijo * deriv;
        let mut next = None;
        if accept_full {
            next = Some(full);
        } else if step.feasible && me + mi > 0 {
            // Second-order correction against the Maratos effect.
            let (eq_full, in_full) = nlp.constraints(&full);
            let rhs_eq: Vec<f64> = (0..me).map(|r| -eq_full[r] + jd[r]).collect();
            let rhs_in: Vec<f64> = (0..mi).map(|r| -in_full[r] + gd[r]).collect();
            let rhs = Some((rhs_eq.as_slice(), rhs_in.as_slice()));
            if let Some(soc) = solve_qp(
                nlp,
                &z,
                &ev,
                Some(&step.working_set),
                &lambda_used,
                &mu_used,
                rhs,
                settings,
            ) {
                if soc.feasible {
                    let cand = trial(1.0, &soc.d);
                    if merit(&cand) <= merit0 + settings.armijo * deriv {
                        next = Some(cand);
                    }
                }
            }
        }
        if next.is_none() {
            let mut t = settings.backtrack;
            while t >= settings.min_step {
                let cand = trial(t, &step.d);
                if merit(&cand) <= merit0 + settings.armijo * t * deriv {
                    next = Some(cand);
                    break;
                }
                t *= settings.backtrack;
            }
        }
        match next {
            Some(zn) => {
                z = zn;
                iterations += 1;
            }
            None => {
                let status = if step.feasible {
                    SqpStatus::Stalled
                } else {
                    SqpStatus::Infeasible
                };
                return finish(z, status, kkt, iterations, lambda, mu_prev, hint);
            }
        }
    }
    let (eq, ineq) = nlp.constraints(&z);
    let status = if max_violation(s, &z, &eq, &ineq) > settings.infeasibility_tol
        && last_kkt.is_infinite()
    {
        SqpStatus::Infeasible
    } else {
        SqpStatus::MaxIter
    };
    finish(z, status, last_kkt, iterations, lambda, mu_prev, hint)
}
