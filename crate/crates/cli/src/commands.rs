//! The four subcommands. Each writes its files into an output directory and
//! returns the report it serialized.

use std::fs;
use std::path::Path;

use mpc_tracking::analysis::{
    closed_loop_performance, diagnose, horizon_sweep, DiagnosticReport, SweepRow,
};
use mpc_tracking::costs::{
    assumption_constants, verify_assumptions, AssumptionReport, CostConstants,
};
use mpc_tracking::model::{sample_references, Reference, Vector};
use mpc_tracking::ocp::{multistart, Mode, OcpSpec};
use mpc_tracking::sim::{
    infinite_horizon_proxy, run_closed_loop, smallest_feasible_horizon, ProxyError, SimError,
    SimTrace,
};
use mpc_tracking::terminal::{certify, Certification};
use serde::Serialize;
use serde_json::json;

use crate::output::{self, Plot};
use crate::scenario::Scenario;
use crate::CliError;

/// Tolerance of the value-decrease and transient-bound checks.
pub const CHECK_TOL: f64 = 1e-6;
/// Distance to the target counted as converged.
pub const CONVERGED: f64 = 1e-3;
const REFERENCE_SAMPLES: usize = 200;
const CONSTANT_SAMPLES: usize = 2000;

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InitialInfeasible => {
            CliError::infeasible("problem infeasible at the initial state")
        }
        e => CliError::solver(e.to_string()),
    }
}

/// Constants of the cost bounds for the scenario's weights and boxes.
pub fn constants(sc: &Scenario) -> CostConstants {
    let refs = sample_references(&sc.spec.model, &sc.spec.cs, REFERENCE_SAMPLES);
    assumption_constants(
        &sc.spec.sc,
        &sc.spec.cs,
        &refs,
        CONSTANT_SAMPLES,
        sc.file.run.seed,
    )
}

fn target(sc: &Scenario) -> &Reference {
    &sc.r_d.reference
}

fn final_distance(trace: &SimTrace, x_d: &Vector) -> f64 {
    (Vector::from_vec(trace.final_state.clone()) - x_d).norm()
}

fn first_within(trace: &SimTrace, x_d: &Vector, tol: f64) -> Option<usize> {
    trace.states().iter().position(|x| (x - x_d).norm() <= tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct Flags {
    pub all_optimal: bool,
    pub value_decrease: bool,
    pub transient_bound: Option<bool>,
    pub exponential: Option<bool>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub horizon: usize,
    pub steps: usize,
    pub scaling: String,
    pub terminal: String,
    pub r_d: ReferenceReport,
    #[serde(rename = "J_Kd")]
    pub j_kd: f64,
    pub gamma_exp: Option<f64>,
    pub bound_residual: Option<f64>,
    pub max_value_increase: f64,
    pub final_distance: f64,
    pub first_within_tolerance: Option<usize>,
    pub failed_at: Option<usize>,
    pub flags: Flags,
    pub constants: CostConstants,
    pub diagnostics: DiagnosticReport,
    pub multistart: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceReport {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub offset_cost: f64,
    pub equilibrium_residual: f64,
    pub kkt_residual: f64,
    pub certified: bool,
}

fn reference_report(sc: &Scenario) -> ReferenceReport {
    let r = target(sc);
    ReferenceReport {
        x: r.x.iter().copied().collect(),
        u: r.u.iter().copied().collect(),
        offset_cost: sc.spec.offset.eval(r),
        equilibrium_residual: sc.spec.model.equilibrium_residual(&r.x, &r.u).amax(),
        kkt_residual: sc.r_d.kkt_residual,
        certified: sc.r_d.certified,
    }
}

/// Summary of one closed-loop trace.
pub fn summarize(
    sc: &Scenario,
    spec: &OcpSpec,
    trace: &SimTrace,
    constants: &CostConstants,
    scaling: String,
) -> RunSummary {
    let r_d = target(sc);
    let d = diagnose(spec, trace, r_d, constants);
    let max_inc = d.max_value_increase;
    let fin = final_distance(trace, &r_d.x);
    RunSummary {
        scenario: sc.file.name.clone(),
        horizon: spec.horizon,
        steps: trace.len(),
        scaling,
        terminal: sc.file.terminal.kind.label().into(),
        r_d: reference_report(sc),
        j_kd: closed_loop_performance(spec, trace, r_d, trace.len()),
        gamma_exp: d.fit.map(|f| f.gamma),
        bound_residual: d.bound.map(|b| b.residual),
        max_value_increase: max_inc,
        final_distance: fin,
        first_within_tolerance: first_within(trace, &r_d.x, CONVERGED),
        failed_at: trace.failed_at,
        flags: Flags {
            all_optimal: trace.all_optimal(),
            // a single-step trace has no decrease to check
            value_decrease: !(max_inc > CHECK_TOL),
            transient_bound: d.bound.map(|b| b.passed()),
            exponential: d.fit.map(|f| f.is_contractive()),
            converged: fin <= CONVERGED,
        },
        constants: constants.clone(),
        diagnostics: d,
        multistart: None,
    }
}

fn plot_states(trace: &SimTrace) -> Vec<Vector> {
    trace.states()
}

fn write_plot(
    sc: &Scenario,
    path: &Path,
    title: &str,
    paths: Vec<(String, Vec<Vector>)>,
) -> Result<(), CliError> {
    let manifold = sample_references(&sc.spec.model, &sc.spec.cs, 400)
        .into_iter()
        .map(|r| r.x)
        .collect();
    output::write_svg(
        path,
        &Plot {
            title,
            paths,
            manifold,
            target: Some(target(sc).x.clone()),
        },
    )
}

pub struct SimulateReport {
    pub trace: SimTrace,
    pub summary: RunSummary,
}

impl SimulateReport {
    pub fn exit_code(&self) -> i32 {
        if self.trace.failed_at.is_some() {
            CliError::SOLVER
        } else {
            0
        }
    }
}

/// Closed loop at the scenario horizon; writes `trace.csv`, `summary.json`
/// and optionally `plot.svg`.
pub fn simulate(sc: &Scenario, out: &Path, svg: bool) -> Result<SimulateReport, CliError> {
    create_dir(out)?;
    let spec = &sc.spec;
    let trace = run_closed_loop(spec, &sc.x0, sc.file.run.steps, target(sc)).map_err(sim_error)?;
    output::write_trace(&out.join("trace.csv"), &trace, spec.cs.n, spec.cs.m)?;
    let constants = constants(sc);
    let mut summary = summarize(sc, spec, &trace, &constants, sc.scalings[0].0.label());
    if sc.file.run.multistart > 0 {
        let ms = multistart(spec, &sc.x0, sc.file.run.multistart, sc.file.run.seed)
            .map_err(|e| CliError::solver(e.to_string()))?;
        summary.multistart = Some(json!({
            "starts": sc.file.run.multistart,
            "seed": sc.file.run.seed,
            "objectives": ms.objectives,
            "disagreement": ms.disagreement,
        }));
    }
    output::write_json(&out.join("summary.json"), &summary)?;
    if svg {
        let label = format!("N={}", spec.horizon);
        write_plot(
            sc,
            &out.join("plot.svg"),
            &sc.file.name,
            vec![(label, plot_states(&trace))],
        )?;
    }
    Ok(SimulateReport { trace, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepBlock {
    pub scaling: String,
    pub rows: Vec<SweepRow>,
    /// `J_K^d` never grows by more than 5% from one horizon to the next.
    pub performance_non_increasing: bool,
    /// The reference offset at the largest horizon is below the one at the
    /// smallest.
    pub offset_shrinks: bool,
}

/// One row per horizon and scaling block, plus the proxy row for the first
/// block; writes `sweep.csv` and `summary.json`.
pub fn sweep(sc: &Scenario, out: &Path) -> Result<Vec<SweepBlock>, CliError> {
    let horizons = &sc.file.run.horizons;
    if horizons.is_empty() {
        return Err(CliError::config(
            "sweep needs at least one horizon (run.horizons or --horizons)",
        ));
    }
    create_dir(out)?;
    let mut blocks = Vec::new();
    for (i, (label, scaling)) in sc.scalings.iter().enumerate() {
        let template = OcpSpec {
            scaling: *scaling,
            ..sc.spec.clone()
        };
        let proxy = if i == 0 {
            sc.file.run.proxy_horizon
        } else {
            None
        };
        let rows = horizon_sweep(
            &template,
            target(sc),
            &sc.x0,
            horizons,
            sc.file.run.steps,
            proxy,
        );
        let by_horizon: Vec<&SweepRow> = rows.iter().filter(|r| r.horizon.is_some()).collect();
        let perf: Vec<f64> = by_horizon.iter().filter_map(|r| r.performance).collect();
        let performance_non_increasing =
            perf.len() == by_horizon.len() && perf.windows(2).all(|w| w[1] <= w[0] * 1.05);
        let offset_shrinks = match (by_horizon.first(), by_horizon.last()) {
            (Some(a), Some(b)) if by_horizon.len() > 1 => {
                matches!((a.ref_offset, b.ref_offset), (Some(x), Some(y)) if y < x)
            }
            _ => false,
        };
        blocks.push(SweepBlock {
            scaling: label.label(),
            rows,
            performance_non_increasing,
            offset_shrinks,
        });
    }
    let table: Vec<(String, Vec<SweepRow>)> = blocks
        .iter()
        .map(|b| (b.scaling.clone(), b.rows.clone()))
        .collect();
    output::write_sweep(&out.join("sweep.csv"), &table, sc.spec.cs.n, sc.spec.cs.m)?;
    output::write_json(
        &out.join("summary.json"),
        &json!({
            "scenario": sc.file.name,
            "steps": sc.file.run.steps,
            "horizons": horizons,
            "r_d": reference_report(sc),
            "blocks": blocks,
        }),
    )?;
    Ok(blocks)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub controller: String,
    pub horizon: Option<usize>,
    pub feasible: bool,
    #[serde(rename = "J_Kd")]
    pub j_kd: Option<f64>,
    pub final_distance: Option<f64>,
    pub gamma_exp: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub scenario: String,
    pub steps: usize,
    pub rows: Vec<CompareRow>,
    /// Smallest horizon making the standard problem feasible at `x0`, by
    /// doubling; `None` when none up to `search_limit` is.
    pub standard_min_horizon: Option<usize>,
    pub search_limit: usize,
}

fn compare_row(sc: &Scenario, controller: &str, spec: &OcpSpec, trace: &SimTrace) -> CompareRow {
    let r_d = target(sc);
    CompareRow {
        controller: controller.into(),
        horizon: Some(spec.horizon),
        feasible: true,
        j_kd: Some(closed_loop_performance(spec, trace, r_d, trace.len())),
        final_distance: Some(final_distance(trace, &r_d.x)),
        gamma_exp: mpc_tracking::analysis::fit_exponential(&trace.states(), &r_d.x)
            .ok()
            .map(|f| f.gamma),
        note: trace
            .failed_at
            .map(|t| format!("solver failure at t = {t}")),
    }
}

fn infeasible_row(controller: &str, horizon: Option<usize>, note: String) -> CompareRow {
    CompareRow {
        controller: controller.into(),
        horizon,
        feasible: false,
        j_kd: None,
        final_distance: None,
        gamma_exp: None,
        note: Some(note),
    }
}

/// Tracking, standard and infinite-horizon proxy controllers from the same
/// initial state; writes `compare.csv`, `compare.json` and one trace per
/// feasible controller.
pub fn compare(sc: &Scenario, out: &Path, svg: bool) -> Result<CompareReport, CliError> {
    create_dir(out)?;
    let steps = sc.file.run.steps;
    let r_d = target(sc);
    let (n, m) = (sc.spec.cs.n, sc.spec.cs.m);
    let mut rows = Vec::new();
    let mut paths = Vec::new();

    let tracking = run_closed_loop(&sc.spec, &sc.x0, steps, r_d).map_err(sim_error)?;
    output::write_trace(&out.join("trace_tracking.csv"), &tracking, n, m)?;
    rows.push(compare_row(sc, "tracking", &sc.spec, &tracking));
    paths.push((format!("tracking N={}", sc.horizon), tracking.states()));

    let standard = sc.spec.with_mode(Mode::Standard(r_d.clone()));
    match run_closed_loop(&standard, &sc.x0, steps, r_d) {
        Ok(trace) => {
            output::write_trace(&out.join("trace_standard.csv"), &trace, n, m)?;
            rows.push(compare_row(sc, "standard", &standard, &trace));
            paths.push((format!("standard N={}", sc.horizon), trace.states()));
        }
        Err(e) => rows.push(infeasible_row("standard", Some(sc.horizon), e.to_string())),
    }

    let search_limit = sc
        .file
        .run
        .proxy_horizon
        .unwrap_or(sc.horizon)
        .max(sc.horizon)
        .max(1)
        * 2;
    let standard_min_horizon =
        smallest_feasible_horizon(&standard, &sc.x0, search_limit, false).ok();

    if let Some(big) = sc.file.run.proxy_horizon {
        match infinite_horizon_proxy(&sc.spec, r_d, &sc.x0, big, steps) {
            Ok(run) => {
                output::write_trace(&out.join("trace_proxy.csv"), &run.trace, n, m)?;
                rows.push(compare_row(
                    sc,
                    "proxy",
                    &standard.with_horizon(run.horizon),
                    &run.trace,
                ));
                paths.push((format!("proxy N={big}"), run.trace.states()));
            }
            Err(e @ ProxyError::Infeasible { .. }) => {
                rows.push(infeasible_row("proxy", Some(big), e.to_string()))
            }
            Err(ProxyError::Sim(e)) => rows.push(infeasible_row("proxy", Some(big), e.to_string())),
        }
    }

    let mut w = csv::Writer::from_path(out.join("compare.csv"))?;
    w.write_record([
        "controller",
        "horizon",
        "feasible",
        "J_Kd",
        "final_distance",
        "gamma_exp",
        "note",
    ])?;
    let opt = |v: Option<f64>| v.map(output::num).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.controller.clone(),
            r.horizon.map(|h| h.to_string()).unwrap_or_default(),
            r.feasible.to_string(),
            opt(r.j_kd),
            opt(r.final_distance),
            opt(r.gamma_exp),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let report = CompareReport {
        scenario: sc.file.name.clone(),
        steps,
        rows,
        standard_min_horizon,
        search_limit,
    };
    output::write_json(&out.join("compare.json"), &report)?;
    if svg {
        write_plot(sc, &out.join("plot.svg"), &sc.file.name, paths)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct TerminalReport {
    pub kind: String,
    pub at_target: Option<Certification>,
    pub sampled_references: usize,
    pub failed_references: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingCheck {
    pub scaling: String,
    /// `max_N (N - lambda(N))` over `N <= 10^4`, and `1 - lambda(0)`.
    pub violation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    /// Sampled with the first scaling block.
    pub assumptions: AssumptionReport,
    /// Worst violation of the cost inequalities, the offset-cost bounds and
    /// the candidate-reference condition.
    pub max_violation: f64,
    pub passed: bool,
    pub scaling: Vec<ScalingCheck>,
    pub terminal: TerminalReport,
    pub best_reference: ReferenceReport,
    /// Distance of the best reachable state from `run.x_d`, when given.
    pub x_d_distance: Option<f64>,
}

const CERTIFIED_REFERENCES: usize = 20;

/// Sampled assumption checks and terminal certification; writes
/// `verify.json`.
pub fn verify(sc: &Scenario, out: &Path) -> Result<VerifyReport, CliError> {
    create_dir(out)?;
    let spec = &sc.spec;
    let run = &sc.file.run;
    let refs = sample_references(&spec.model, &spec.cs, REFERENCE_SAMPLES);
    let assumptions = verify_assumptions(
        &spec.sc,
        &spec.offset,
        &spec.scaling,
        &spec.model,
        &spec.cs,
        &refs,
        target(sc),
        run.verify_samples,
        run.seed,
    );

    let samples = sc.file.terminal.certification_samples;
    let cert = |r: &Reference| {
        certify(
            &spec.terminal,
            &spec.model,
            &spec.sc,
            &spec.cs,
            r,
            samples,
            run.seed,
        )
    };
    let mut errors = Vec::new();
    let at_target = cert(target(sc))
        .map_err(|e| errors.push(e.to_string()))
        .ok();
    let step = (refs.len() / CERTIFIED_REFERENCES).max(1);
    let picked: Vec<&Reference> = refs
        .iter()
        .step_by(step)
        .take(CERTIFIED_REFERENCES)
        .collect();
    let mut failed = 0;
    for r in &picked {
        match cert(r) {
            Ok(c) if c.passed() => {}
            Ok(_) => failed += 1,
            Err(e) => {
                failed += 1;
                errors.push(e.to_string());
            }
        }
    }
    let terminal = TerminalReport {
        kind: sc.file.terminal.kind.label().into(),
        at_target,
        sampled_references: picked.len(),
        failed_references: failed,
        errors,
    };
    let x_d_distance = run
        .x_d
        .as_ref()
        .map(|x| (Vector::from_column_slice(x) - &target(sc).x).norm());
    let a = &assumptions;
    let max_violation = a
        .offset_indication
        .max(a.stage_sandwich)
        .max(a.stage_difference)
        .max(a.stage_difference_linear)
        .max(
            a.candidate
                .as_ref()
                .map_or(f64::NEG_INFINITY, |c| c.violation),
        );
    let scaling = sc
        .scalings
        .iter()
        .map(|(block, f)| {
            let violation = (0..=10_000usize)
                .map(|n| n as f64 - f.value(n))
                .fold(1.0 - f.value(0), f64::max);
            ScalingCheck {
                scaling: block.label(),
                violation,
                passed: violation <= 0.0,
            }
        })
        .collect();
    let report = VerifyReport {
        scenario: sc.file.name.clone(),
        max_violation,
        passed: max_violation <= 0.0,
        scaling,
        assumptions,
        terminal,
        best_reference: reference_report(sc),
        x_d_distance,
    };
    output::write_json(&out.join("verify.json"), &report)?;
    Ok(report)
}
