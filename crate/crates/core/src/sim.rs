//! Receding-horizon closed loop with shifted-candidate warm starts.

use serde::Serialize;

use crate::model::{Reference, Vector};
use crate::nlp::Nlp;
use crate::ocp::{self, Guess, Mode, OcpError, OcpSolution, OcpSpec, OcpStatus, Transcription};
use crate::terminal::{terminal_control, TerminalIngredients};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("optimal control problem infeasible at the initial state")]
    InitialInfeasible,
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error("no feasible horizon up to {0}")]
    NoFeasibleHorizon(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimStep {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub r_x: Vec<f64>,
    pub r_u: Vec<f64>,
    pub value: f64,
    /// `l(x, u, r*)` with the optimal artificial reference.
    pub stage_cost: f64,
    /// `|r* - r_d|` over the stacked pair.
    pub ref_offset: f64,
    pub status: OcpStatus,
    pub sqp_iters: usize,
    pub kkt_residual: f64,
    /// Objective at the shifted warm start, when one was used.
    pub candidate_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimTrace {
    pub steps: Vec<SimStep>,
    /// State after the last applied input.
    pub final_state: Vec<f64>,
    /// Optimal value at `final_state`, when that problem solved.
    pub final_value: Option<f64>,
    /// Step at which a solver failure ended the run.
    pub failed_at: Option<usize>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// States `x(0..=K)`, including the final state.
    pub fn states(&self) -> Vec<Vector> {
        self.steps
            .iter()
            .map(|s| Vector::from_vec(s.x.clone()))
            .chain(std::iter::once(Vector::from_vec(self.final_state.clone())))
            .collect()
    }

    pub fn inputs(&self) -> Vec<Vector> {
        self.steps
            .iter()
            .map(|s| Vector::from_vec(s.u.clone()))
            .collect()
    }

    pub fn references(&self) -> Vec<Reference> {
        self.steps
            .iter()
            .map(|s| {
                Reference::unchecked(
                    Vector::from_vec(s.r_x.clone()),
                    Vector::from_vec(s.r_u.clone()),
                )
            })
            .collect()
    }

    /// `V_N(x(0..=K))` when the final value is known.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        if let Some(f) = self.final_value {
            v.push(f);
        }
        v
    }

    /// Every step solved to optimality.
    pub fn all_optimal(&self) -> bool {
        self.failed_at.is_none() && self.steps.iter().all(|s| s.status == OcpStatus::Optimal)
    }

    /// Largest `V(t+1) - V(t) + l(t)`.
    pub fn max_value_increase(&self) -> f64 {
        let v = self.values();
        (0..v.len().saturating_sub(1))
            .map(|t| v[t + 1] - v[t] + self.steps[t].stage_cost)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Objective of the transcribed problem at a guess (states simulated).
pub fn candidate_objective(spec: &OcpSpec, x0: &Vector, guess: &Guess) -> Result<f64, OcpError> {
    let tr = Transcription::new(spec, x0)?;
    let z = tr.initial_point(x0, guess);
    Ok(tr.objective(&z))
}

/// Shifted solution with the terminal controller appended; the reference is
/// kept.
pub fn shifted_guess(spec: &OcpSpec, sol: &OcpSolution) -> Guess {
    let mut u_seq: Vec<Vector> = sol.u_seq.iter().skip(1).cloned().collect();
    if spec.horizon > 0 {
        let x_n = sol.x_seq.last().expect("at least one state");
        let u_f = match spec.terminal.as_ref() {
            TerminalIngredients::Equality => sol.r_opt.u.clone(),
            TerminalIngredients::Quadratic(_) => terminal_control(&spec.terminal, x_n, &sol.r_opt)
                .or_else(|_| match spec.terminal.as_ref() {
                    TerminalIngredients::Quadratic(q) => {
                        q.piece(&sol.r_opt).map(|p| p.control(x_n, &sol.r_opt))
                    }
                    TerminalIngredients::Equality => unreachable!(),
                })
                .unwrap_or_else(|_| sol.r_opt.u.clone()),
        };
        u_seq.push(spec.cs.input_box().clamp(&u_f));
    }
    Guess {
        u_seq,
        reference: sol.r_opt.clone(),
    }
}

/// Closed loop over `steps` steps: solve, apply the first input, advance.
/// `r_d` is only used for the logged reference offset.
pub fn run_closed_loop(
    spec: &OcpSpec,
    x0: &Vector,
    steps: usize,
    r_d: &Reference,
) -> Result<SimTrace, SimError> {
    let mut x = x0.clone();
    let mut guess: Option<Guess> = None;
    let mut trace = SimTrace {
        steps: Vec::with_capacity(steps),
        final_state: x0.iter().copied().collect(),
        final_value: None,
        failed_at: None,
    };
    for t in 0..=steps {
        let candidate_value = match &guess {
            Some(g) => candidate_objective(spec, &x, g).ok(),
            None => None,
        };
        let sol = ocp::solve(spec, &x, guess.as_ref())?;
        if t == steps {
            if sol.status == OcpStatus::Optimal {
                trace.final_value = Some(sol.objective);
            }
            break;
        }
        match sol.status {
            OcpStatus::Infeasible if t == 0 => return Err(SimError::InitialInfeasible),
            OcpStatus::Infeasible => {
                trace.failed_at = Some(t);
                break;
            }
            _ => {}
        }
        let u = sol
            .u_seq
            .first()
            .cloned()
            .unwrap_or_else(|| sol.r_opt.u.clone());
        trace.steps.push(SimStep {
            t,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            r_x: sol.r_opt.x.iter().copied().collect(),
            r_u: sol.r_opt.u.iter().copied().collect(),
            value: sol.objective,
            stage_cost: spec.sc.eval(&x, &u, &sol.r_opt),
            ref_offset: sol.r_opt.distance(r_d),
            status: sol.status,
            sqp_iters: sol.sqp_iters,
            kkt_residual: sol.kkt_residual,
            candidate_value,
        });
        x = spec.model.step(&x, &u).map_err(OcpError::from)?;
        trace.final_state = x.iter().copied().collect();
        guess = Some(shifted_guess(spec, &sol));
    }
    Ok(trace)
}

/// Smallest horizon for which the standard problem is feasible at `x0`:
/// doubling from 1 up to `max_horizon`, then bisection inside the last
/// bracket when `refine` is set.
pub fn smallest_feasible_horizon(
    spec: &OcpSpec,
    x0: &Vector,
    max_horizon: usize,
    refine: bool,
) -> Result<usize, SimError> {
    let feasible = |h: usize| -> Result<bool, SimError> {
        let sol = ocp::solve(&spec.with_horizon(h), x0, None)?;
        Ok(sol.status != OcpStatus::Infeasible)
    };
    if feasible(0)? {
        return Ok(0);
    }
    let mut lo = 0;
    let mut hi = 1;
    loop {
        if hi > max_horizon {
            return Err(SimError::NoFeasibleHorizon(max_horizon));
        }
        if feasible(hi)? {
            break;
        }
        lo = hi;
        hi *= 2;
    }
    if refine {
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if feasible(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone)]
pub struct ProxyRun {
    pub horizon: usize,
    pub trace: SimTrace,
}

/// Closed loop under the standard problem with a long horizon, as a stand-in
/// for the infinite-horizon optimum. When `big_horizon` is infeasible the
/// error carries the smallest feasible horizon found by doubling.
pub fn infinite_horizon_proxy(
    spec: &OcpSpec,
    r_d: &Reference,
    x0: &Vector,
    big_horizon: usize,
    steps: usize,
) -> Result<ProxyRun, ProxyError> {
    let standard = spec
        .with_mode(Mode::Standard(r_d.clone()))
        .with_horizon(big_horizon);
    match run_closed_loop(&standard, x0, steps, r_d) {
        Ok(trace) => Ok(ProxyRun {
            horizon: big_horizon,
            trace,
        }),
        Err(SimError::InitialInfeasible) => {
            let found =
                smallest_feasible_horizon(&standard, x0, 8 * big_horizon.max(1), false).ok();
            Err(ProxyError::Infeasible {
                smallest_feasible: found,
            })
        }
        Err(e) => Err(ProxyError::Sim(e)),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProxyError {
    #[error("standard problem infeasible at the proxy horizon (smallest feasible: {smallest_feasible:?})")]
    Infeasible { smallest_feasible: Option<usize> },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::ScalingFn;
    use crate::ocp::tests::scalar_spec;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn origin() -> Reference {
        Reference::unchecked(v(&[0.0]), v(&[0.0]))
    }

    #[test]
    fn scalar_closed_loop_is_geometric() {
        let spec = scalar_spec(1, ScalingFn::Constant(1.0));
        let trace = run_closed_loop(&spec, &v(&[1.0]), 5, &origin()).unwrap();
        assert!(trace.all_optimal());
        for (t, s) in trace.steps.iter().enumerate() {
            let expected = (2.0f64 / 3.0).powi(t as i32);
            assert_abs_diff_eq!(s.x[0], expected, epsilon = 1e-6);
            assert_abs_diff_eq!(s.u[0], -expected / 3.0, epsilon = 1e-6);
        }
        assert!(trace.max_value_increase() <= 1e-6);
    }

    #[test]
    fn resting_at_target_stays_put() {
        let spec = scalar_spec(3, ScalingFn::Linear);
        let trace = run_closed_loop(&spec, &v(&[0.0]), 4, &origin()).unwrap();
        for s in &trace.steps {
            assert_eq!(s.x, vec![0.0]);
            assert!(s.stage_cost.abs() <= 1e-20);
        }
    }

    #[test]
    fn logged_inputs_reproduce_states() {
        let spec = scalar_spec(2, ScalingFn::Linear);
        let trace = run_closed_loop(&spec, &v(&[1.0]), 6, &origin()).unwrap();
        let states = trace.states();
        let inputs = trace.inputs();
        let mut x = states[0].clone();
        for (k, u) in inputs.iter().enumerate() {
            x = spec.model.step(&x, u).unwrap();
            assert_eq!(x, states[k + 1]);
        }
    }

    #[test]
    fn warm_start_never_worse_than_candidate() {
        let spec = scalar_spec(5, ScalingFn::Linear);
        let trace = run_closed_loop(&spec, &v(&[1.0]), 8, &origin()).unwrap();
        for s in trace.steps.iter().skip(1) {
            assert!(s.value <= s.candidate_value.unwrap() + 1e-8);
        }
    }

    #[test]
    fn scalar_proxy_matches_lq_optimum() {
        // Unconstrained LQ cost-to-go for (Q, R) = (1, 1) is P x0^2 with P the
        // golden ratio; the input bound is inactive from x0 = 1.
        let spec = scalar_spec(50, ScalingFn::Linear);
        let run = infinite_horizon_proxy(&spec, &origin(), &v(&[1.0]), 50, 60).unwrap();
        let j: f64 = run.trace.steps.iter().map(|s| s.stage_cost).sum();
        assert_abs_diff_eq!(j, (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-4);
    }

    #[test]
    fn smallest_horizon_for_scalar_equality_terminal() {
        // |u| <= 1 and x0 = 1.5 need two steps to reach the origin.
        let spec = scalar_spec(1, ScalingFn::Linear).with_mode(Mode::Standard(origin()));
        assert_eq!(
            smallest_feasible_horizon(&spec, &v(&[1.5]), 64, true).unwrap(),
            2
        );
    }
}
