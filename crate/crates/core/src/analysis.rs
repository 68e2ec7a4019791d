//! Post-processing of closed-loop traces: performance sums, the transient
//! bound, turnpike counts, exponential fits and horizon sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::costs::{performance, CostConstants};
use crate::model::{Reference, Vector};
use crate::ocp::{self, OcpSpec, OcpStatus};
use crate::sim::{infinite_horizon_proxy, run_closed_loop, ProxyError, SimTrace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
}

/// `J_K^d = sum_{t<K} l(x(t), u(t), r_d)` along a trace.
pub fn closed_loop_performance(
    spec: &OcpSpec,
    trace: &SimTrace,
    r_d: &Reference,
    steps: usize,
) -> f64 {
    performance(&spec.sc, &trace.states(), &trace.inputs(), r_d, steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundResidual {
    pub performance: f64,
    pub value_drop: f64,
    pub series: f64,
    /// `value_drop + series - performance`.
    pub residual: f64,
}

impl BoundResidual {
    pub fn passed(&self) -> bool {
        self.residual >= -1e-6
    }
}

/// Residual of `J_K^d <= V(x(0)) - V(x(K)) + sum_t (c5 |r*(t) - r_d|^2 + c6 |r*(t) - r_d|)`
/// over the first `steps` steps. `values` holds `V(x(0..=K))`.
pub fn transient_bound_residual(
    spec: &OcpSpec,
    trace: &SimTrace,
    r_d: &Reference,
    values: &[f64],
    steps: usize,
    constants: &CostConstants,
) -> BoundResidual {
    let k = steps.min(trace.len()).min(values.len().saturating_sub(1));
    let performance = closed_loop_performance(spec, trace, r_d, k);
    let value_drop = values[0] - values[k];
    let series = trace.steps[..k]
        .iter()
        .map(|s| series_term(s.ref_offset, constants.c5, constants.c6))
        .sum();
    BoundResidual {
        performance,
        value_drop,
        series,
        residual: value_drop + series - performance,
    }
}

fn series_term(offset: f64, c5: f64, c6: f64) -> f64 {
    c5 * offset * offset + c6 * offset
}

/// `#{t : |x(t) - x_d| >= threshold}`.
pub fn turnpike_count(states: &[Vector], x_d: &Vector, threshold: f64) -> usize {
    states
        .iter()
        .filter(|x| (*x - x_d).norm() >= threshold)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    pub c: f64,
    pub gamma: f64,
    /// Every sample already sits at the target; `c` and `gamma` are zero.
    pub converged: bool,
}

impl ExpFit {
    pub fn is_contractive(&self) -> bool {
        self.converged || (self.gamma > 0.0 && self.gamma < 1.0)
    }
}

/// Least-squares fit of `log d(t) = log c + t log gamma` over the samples with
/// `d(t) > 1e-12`.
pub fn fit_exponential(states: &[Vector], x_d: &Vector) -> Result<ExpFit, AnalysisError> {
    let dist: Vec<f64> = states.iter().map(|x| (x - x_d).norm()).collect();
    fit_geometric(&dist)
}

/// As [`fit_exponential`], on a sequence of non-negative magnitudes.
pub fn fit_geometric(d: &[f64]) -> Result<ExpFit, AnalysisError> {
    if d.len() < 3 {
        return Err(AnalysisError::TooFewSamples(d.len()));
    }
    let pts: Vec<(f64, f64)> = d
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 1e-12)
        .map(|(t, v)| (t as f64, v.ln()))
        .collect();
    if pts.is_empty() {
        return Ok(ExpFit {
            c: 0.0,
            gamma: 0.0,
            converged: true,
        });
    }
    if pts.len() < 3 {
        return Err(AnalysisError::TooFewSamples(pts.len()));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    let slope = sxy / sxx;
    Ok(ExpFit {
        c: (ym - slope * tm).exp(),
        gamma: slope.exp(),
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesReport {
    pub partials: Vec<f64>,
    /// Geometric ratio fitted to the last quarter of the terms.
    pub tail_ratio: Option<f64>,
    /// Estimated remainder after the last partial sum; infinite when the tail
    /// does not contract.
    pub tail_estimate: f64,
}

/// Running sums of `c5 |r*(t) - r_d|^2 + c6 |r*(t) - r_d|`.
pub fn reference_series(trace: &SimTrace, c5: f64, c6: f64) -> SeriesReport {
    let terms: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| series_term(s.ref_offset, c5, c6))
        .collect();
    let mut acc = 0.0;
    let partials = terms
        .iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect();
    let tail = &terms[terms.len() - terms.len() / 4..];
    let (tail_ratio, tail_estimate) = match fit_geometric(tail) {
        Ok(f) if f.converged => (Some(0.0), 0.0),
        Ok(f) if f.gamma < 1.0 => {
            let last = *terms.last().unwrap();
            (Some(f.gamma), last * f.gamma / (1.0 - f.gamma))
        }
        Ok(f) => (Some(f.gamma), f64::INFINITY),
        Err(_) if terms.iter().all(|t| *t == 0.0) => (None, 0.0),
        Err(_) => (None, f64::INFINITY),
    };
    SeriesReport {
        partials,
        tail_ratio,
        tail_estimate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub fit: Option<ExpFit>,
    /// `min (T(r*) - T(r_d)) / |r* - r_d|^2` along the trace.
    pub a_lo_hat: Option<f64>,
    /// `min l(t) / |r*(t) - r_d|^2` over steps with `|r*(t) - r_d|^2 > 1e-8`.
    pub c_d_hat: Option<f64>,
    /// Steps with `l(t) = 0` but `|r*(t) - r_d| > 1e-6`.
    pub stationary_offsets: usize,
    pub turnpike_counts: BTreeMap<String, usize>,
    pub series: SeriesReport,
    pub bound: Option<BoundResidual>,
    pub performance: f64,
    pub max_value_increase: f64,
}

pub const TURNPIKE_THRESHOLDS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// All trace diagnostics. The transient bound needs the final value and an
/// uninterrupted trace; it is `None` otherwise.
pub fn diagnose(
    spec: &OcpSpec,
    trace: &SimTrace,
    r_d: &Reference,
    constants: &CostConstants,
) -> DiagnosticReport {
    let states = trace.states();
    let steps = trace.len();
    let values = trace.values();
    let bound = (trace.failed_at.is_none() && values.len() == steps + 1)
        .then(|| transient_bound_residual(spec, trace, r_d, &values, steps, constants));
    let t_d = spec.offset.eval(r_d);
    let mut a_lo: Option<f64> = None;
    let mut c_d: Option<f64> = None;
    let mut stationary_offsets = 0;
    for s in &trace.steps {
        let d2 = s.ref_offset * s.ref_offset;
        if d2 > 1e-8 {
            let r = Reference::unchecked(
                Vector::from_vec(s.r_x.clone()),
                Vector::from_vec(s.r_u.clone()),
            );
            let a = (spec.offset.eval(&r) - t_d) / d2;
            a_lo = Some(a_lo.map_or(a, |v| v.min(a)));
            let c = s.stage_cost / d2;
            c_d = Some(c_d.map_or(c, |v| v.min(c)));
        }
        if s.stage_cost == 0.0 && s.ref_offset > 1e-6 {
            stationary_offsets += 1;
        }
    }
    DiagnosticReport {
        fit: fit_exponential(&states, &r_d.x).ok(),
        a_lo_hat: a_lo,
        c_d_hat: c_d,
        stationary_offsets,
        turnpike_counts: TURNPIKE_THRESHOLDS
            .iter()
            .map(|t| (format!("{t:e}"), turnpike_count(&states, &r_d.x, *t)))
            .collect(),
        series: reference_series(trace, constants.c5, constants.c6),
        bound,
        performance: closed_loop_performance(spec, trace, r_d, steps),
        max_value_increase: trace.max_value_increase(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// `None` for the infinite-horizon proxy row.
    pub horizon: Option<usize>,
    pub feasible: bool,
    pub status: Option<OcpStatus>,
    pub value: Option<f64>,
    pub r_x: Vec<f64>,
    pub r_u: Vec<f64>,
    pub ref_offset: Option<f64>,
    pub performance: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(horizon: Option<usize>, error: String) -> Self {
        Self {
            horizon,
            feasible: false,
            status: None,
            value: None,
            r_x: vec![],
            r_u: vec![],
            ref_offset: None,
            performance: None,
            error: Some(error),
        }
    }
}

/// One row per horizon (open-loop solve at `x0` plus a `steps`-step closed
/// loop) and a final proxy row for the standard problem at `proxy_horizon`.
/// Rows are computed in parallel and returned in input order.
pub fn horizon_sweep(
    template: &OcpSpec,
    r_d: &Reference,
    x0: &Vector,
    horizons: &[usize],
    steps: usize,
    proxy_horizon: Option<usize>,
) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = horizons
        .par_iter()
        .map(|&n| sweep_row(&template.with_horizon(n), r_d, x0, steps))
        .collect();
    if let Some(big) = proxy_horizon {
        rows.push(
            match infinite_horizon_proxy(template, r_d, x0, big, steps) {
                Ok(run) => SweepRow {
                    horizon: None,
                    feasible: true,
                    status: run.trace.steps.first().map(|s| s.status),
                    value: run.trace.steps.first().map(|s| s.value),
                    r_x: r_d.x.iter().copied().collect(),
                    r_u: r_d.u.iter().copied().collect(),
                    ref_offset: Some(0.0),
                    performance: Some(closed_loop_performance(template, &run.trace, r_d, steps)),
                    error: None,
                },
                Err(e @ ProxyError::Infeasible { .. }) => SweepRow::failed(None, e.to_string()),
                Err(e) => SweepRow::failed(None, e.to_string()),
            },
        );
    }
    rows
}

fn sweep_row(spec: &OcpSpec, r_d: &Reference, x0: &Vector, steps: usize) -> SweepRow {
    let n = Some(spec.horizon);
    let sol = match ocp::solve(spec, x0, None) {
        Ok(s) => s,
        Err(e) => return SweepRow::failed(n, e.to_string()),
    };
    let feasible = sol.status != OcpStatus::Infeasible;
    let (performance, error) = if feasible {
        match run_closed_loop(spec, x0, steps, r_d) {
            Ok(t) if t.failed_at.is_none() => {
                (Some(closed_loop_performance(spec, &t, r_d, steps)), None)
            }
            Ok(t) => (
                None,
                Some(format!("solver failure at step {}", t.failed_at.unwrap())),
            ),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    SweepRow {
        horizon: n,
        feasible,
        status: Some(sol.status),
        value: feasible.then_some(sol.objective),
        r_x: sol.r_opt.x.iter().copied().collect(),
        r_u: sol.r_opt.u.iter().copied().collect(),
        ref_offset: Some(sol.r_opt.distance(r_d)),
        performance,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{ConstantSource, ScalingFn};
    use crate::ocp::tests::scalar_spec;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn origin() -> Reference {
        Reference::unchecked(v(&[0.0]), v(&[0.0]))
    }

    fn scalar_constants() -> CostConstants {
        CostConstants {
            c1: 1.0,
            c2: 1.1,
            c3: 2.0,
            c4: 4.4,
            c5: 1.0,
            c6: 8.0 * 2f64.sqrt(),
            sources: [ConstantSource::Formula; 6],
        }
    }

    fn geometric(gamma: f64, c: f64, len: usize) -> Vec<Vector> {
        (0..len).map(|t| v(&[c * gamma.powi(t as i32)])).collect()
    }

    #[test]
    fn turnpike_count_on_geometric_trace() {
        let states = geometric(2.0 / 3.0, 1.0, 21);
        assert_eq!(turnpike_count(&states, &v(&[0.0]), 0.1), 6);
        assert_eq!(turnpike_count(&states, &v(&[0.0]), 2.0), 0);
        assert_eq!(turnpike_count(&vec![v(&[0.0]); 5], &v(&[0.0]), 1e-9), 0);
    }

    #[test]
    fn fit_recovers_generator() {
        let fit = fit_exponential(&geometric(2.0 / 3.0, 1.0, 21), &v(&[0.0])).unwrap();
        assert_abs_diff_eq!(fit.gamma, 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.c, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_edge_cases() {
        let flat = fit_exponential(&vec![v(&[0.5]); 10], &v(&[0.0])).unwrap();
        assert_abs_diff_eq!(flat.gamma, 1.0, epsilon = 1e-12);
        assert!(!flat.is_contractive());
        assert!(
            fit_exponential(&vec![v(&[0.0]); 4], &v(&[0.0]))
                .unwrap()
                .converged
        );
        assert_eq!(
            fit_exponential(&[v(&[1.0])], &v(&[0.0])),
            Err(AnalysisError::TooFewSamples(1))
        );
    }

    #[test]
    fn resting_trace_has_zero_residual() {
        let spec = scalar_spec(1, ScalingFn::Constant(1.0));
        let trace = run_closed_loop(&spec, &v(&[0.0]), 10, &origin()).unwrap();
        let report = diagnose(&spec, &trace, &origin(), &scalar_constants());
        let b = report.bound.unwrap();
        assert_eq!(b.residual, 0.0);
        assert!(report.series.partials.iter().all(|p| *p == 0.0));
        assert!(report.fit.unwrap().converged);
    }

    #[test]
    fn scalar_bound_and_series() {
        let spec = scalar_spec(1, ScalingFn::Constant(1.0));
        let trace = run_closed_loop(&spec, &v(&[1.0]), 20, &origin()).unwrap();
        let report = diagnose(&spec, &trace, &origin(), &scalar_constants());
        assert!(report.bound.unwrap().passed());
        // r* = (2/3) x(t).
        for s in &trace.steps {
            assert_abs_diff_eq!(s.r_x[0], 2.0 * s.x[0] / 3.0, epsilon = 1e-7);
        }
        let p = &report.series.partials;
        assert!(p.windows(2).all(|w| w[1] >= w[0]));
        assert_abs_diff_eq!(report.series.tail_ratio.unwrap(), 2.0 / 3.0, epsilon = 1e-3);
        assert!(report.series.tail_estimate.is_finite());
        assert!(report.c_d_hat.unwrap() > 0.0);
        assert_eq!(report.stationary_offsets, 0);
    }

    #[test]
    fn sweep_rows_keep_horizon_order() {
        let spec = scalar_spec(1, ScalingFn::Linear);
        let rows = horizon_sweep(&spec, &origin(), &v(&[1.0]), &[5, 1, 2], 10, Some(20));
        let hs: Vec<_> = rows.iter().map(|r| r.horizon).collect();
        assert_eq!(hs, vec![Some(5), Some(1), Some(2), None]);
        assert!(rows.iter().all(|r| r.feasible));
    }
}
