//! TOML scenario files and their translation into a certified problem spec.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use mpc_tracking::costs::{OffsetCost, ScalingFn, StageCost};
use mpc_tracking::model::{
    best_reachable_reference, project_to_manifold, scalar_integrator, Affine, BoxSet,
    ConstraintSet, Cstr, Dynamics, Matrix, ReachableReference, Scheme, SystemModel, Vector,
};
use mpc_tracking::nlp::SqpSettings;
use mpc_tracking::ocp::{Mode, OcpSpec};
use mpc_tracking::terminal::{QuadraticTerminal, TerminalIngredients};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub system: SystemBlock,
    pub constraints: ConstraintsBlock,
    pub cost: CostBlock,
    #[serde(default)]
    pub scaling: ScalingBlocks,
    pub terminal: TerminalBlock,
    pub run: RunBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    ScalarIntegrator,
    Cstr,
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub rhs: Builtin,
    pub state_dim: usize,
    pub input_dim: usize,
    /// Affine systems only.
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<f64>>,
    /// Absent for an affine map that is already discrete-time.
    pub sampling_time: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeName,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn default_scheme() -> SchemeName {
    SchemeName::Euler
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsBlock {
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub zr_lower: Vec<f64>,
    pub zr_upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub s_x: Vec<Vec<f64>>,
    pub s_u: Vec<Vec<f64>>,
    pub x_e: Vec<f64>,
    /// Defaults to the equilibrium input at `x_e`.
    pub u_e: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalingBlock {
    Linear,
    Constant { value: f64 },
}

impl ScalingBlock {
    pub fn label(&self) -> String {
        match self {
            ScalingBlock::Linear => "linear".into(),
            ScalingBlock::Constant { value } => format!("constant:{value}"),
        }
    }
}

impl std::str::FromStr for ScalingBlock {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "linear" {
            return Ok(ScalingBlock::Linear);
        }
        match s.strip_prefix("constant:").map(str::parse::<f64>) {
            Some(Ok(value)) => Ok(ScalingBlock::Constant { value }),
            _ => Err(format!("expected `linear` or `constant:<c>`, got `{s}`")),
        }
    }
}

/// One `[scaling]` table or an array of `[[scaling]]` tables.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalingBlocks {
    One(ScalingBlock),
    Many(Vec<ScalingBlock>),
}

impl Default for ScalingBlocks {
    fn default() -> Self {
        ScalingBlocks::One(ScalingBlock::Linear)
    }
}

impl ScalingBlocks {
    pub fn to_vec(&self) -> Vec<ScalingBlock> {
        match self {
            ScalingBlocks::One(s) => vec![*s],
            ScalingBlocks::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Equality,
    Quadratic,
}

impl TerminalKind {
    pub fn label(&self) -> &'static str {
        match self {
            TerminalKind::Equality => "equality",
            TerminalKind::Quadratic => "quadratic",
        }
    }
}

impl std::str::FromStr for TerminalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "equality" => Ok(TerminalKind::Equality),
            "quadratic" => Ok(TerminalKind::Quadratic),
            _ => Err(format!("expected `equality` or `quadratic`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalBlock {
    pub kind: TerminalKind,
    /// Equilibria used to calibrate the ellipsoid level.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Samples per equilibrium in the level design.
    #[serde(default = "default_design_samples")]
    pub design_samples: usize,
    #[serde(default = "default_certification_samples")]
    pub certification_samples: usize,
}

fn default_grid_points() -> usize {
    200
}

fn default_design_samples() -> usize {
    200
}

fn default_certification_samples() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub x0: Vec<f64>,
    /// Horizon for `simulate` and `compare`; defaults to the first sweep
    /// horizon.
    pub horizon: Option<usize>,
    #[serde(default)]
    pub horizons: Vec<usize>,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Extra randomized starts at `t = 0`; zero disables multistart.
    #[serde(default)]
    pub multistart: usize,
    /// Horizon of the standard problem standing in for the infinite-horizon
    /// optimum.
    pub proxy_horizon: Option<usize>,
    /// Expected target state; the best reachable reference must land within
    /// `x_d_tolerance` of it.
    pub x_d: Option<Vec<f64>>,
    #[serde(default = "default_x_d_tolerance")]
    pub x_d_tolerance: f64,
    #[serde(default = "default_verify_samples")]
    pub verify_samples: usize,
}

fn default_x_d_tolerance() -> f64 {
    1e-3
}

fn default_verify_samples() -> usize {
    10_000
}

/// Command-line values that replace scenario entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub horizons: Option<Vec<usize>>,
    pub scaling: Option<ScalingBlock>,
    pub terminal: Option<TerminalKind>,
}

impl ScenarioFile {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.steps {
            self.run.steps = k;
        }
        if let Some(h) = &o.horizons {
            self.run.horizons = h.clone();
            self.run.horizon = h.first().copied();
        }
        if let Some(s) = o.scaling {
            self.scaling = ScalingBlocks::One(s);
        }
        if let Some(t) = o.terminal {
            self.terminal.kind = t;
        }
    }
}

/// A parsed scenario with its certified spec.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    /// Spec at the primary horizon with the first scaling.
    pub spec: OcpSpec,
    pub scalings: Vec<(ScalingBlock, ScalingFn)>,
    pub x0: Vector,
    pub horizon: usize,
    pub r_d: ReachableReference,
}

/// Source text kept for line-anchored messages.
pub struct Source<'a> {
    pub origin: String,
    pub text: &'a str,
}

impl Source<'_> {
    /// Line of `key` inside `[table]`, or of the table header when the key is
    /// absent.
    fn line_of(&self, table: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        let mut header = None;
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('[') {
                current = line
                    .trim_matches(|c| c == '[' || c == ']')
                    .trim()
                    .to_string();
                if current == table && header.is_none() {
                    header = Some(i + 1);
                }
                continue;
            }
            if current == table {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim() == key {
                        return Some(i + 1);
                    }
                }
            }
        }
        header
    }

    pub fn error(&self, table: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
        let at = match self.line_of(table, key) {
            Some(l) => format!("{}:{l}", self.origin),
            None => self.origin.clone(),
        };
        CliError::config(format!("{at}: {table}.{key}: {msg}"))
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse(&text, &path.display().to_string(), overrides)
}

pub fn parse(text: &str, origin: &str, overrides: &Overrides) -> Result<Scenario, CliError> {
    let src = Source {
        origin: origin.to_string(),
        text,
    };
    let mut file: ScenarioFile =
        toml::from_str(text).map_err(|e| CliError::config(format!("{origin}: {e}")))?;
    file.apply(overrides);
    build(file, &src)
}

fn matrix(
    src: &Source,
    table: &str,
    key: &str,
    rows: &[Vec<f64>],
    r: usize,
    c: usize,
) -> Result<Matrix, CliError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(src.error(table, key, format!("expected a {r}x{c} matrix")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(src: &Source, table: &str, key: &str, v: &[f64], n: usize) -> Result<Vector, CliError> {
    if v.len() != n {
        return Err(src.error(table, key, format!("expected {n} entries, got {}", v.len())));
    }
    Ok(Vector::from_column_slice(v))
}

fn model(src: &Source, s: &SystemBlock) -> Result<SystemModel, CliError> {
    let (n, m) = (s.state_dim, s.input_dim);
    let field: Arc<dyn Dynamics> = match s.rhs {
        Builtin::ScalarIntegrator => Arc::new(scalar_integrator()),
        Builtin::Cstr => Arc::new(Cstr::from_params(&s.params)),
        Builtin::Affine => {
            let missing = |k: &str| src.error("system", k, "required for an affine system");
            let a = matrix(
                src,
                "system",
                "a",
                s.a.as_ref().ok_or_else(|| missing("a"))?,
                n,
                n,
            )?;
            let b = matrix(
                src,
                "system",
                "b",
                s.b.as_ref().ok_or_else(|| missing("b"))?,
                n,
                m,
            )?;
            let c = match &s.c {
                Some(c) => vector(src, "system", "c", c, n)?,
                None => Vector::zeros(n),
            };
            Arc::new(Affine::new(a, b, c).map_err(|e| src.error("system", "a", e))?)
        }
    };
    if field.state_dim() != n {
        return Err(src.error(
            "system",
            "state_dim",
            format!("{:?} has {} states", s.rhs, field.state_dim()),
        ));
    }
    if field.input_dim() != m {
        return Err(src.error(
            "system",
            "input_dim",
            format!("{:?} has {} inputs", s.rhs, field.input_dim()),
        ));
    }
    let scheme = match s.scheme {
        SchemeName::Euler => Scheme::Euler,
        SchemeName::Rk4 => Scheme::Rk4,
    };
    let model = match (s.rhs, s.sampling_time) {
        (_, Some(h)) => SystemModel::continuous(field, h, scheme)
            .map_err(|e| src.error("system", "sampling_time", e))?,
        (Builtin::Affine, None) => SystemModel::discrete(field),
        (_, None) => {
            return Err(src.error(
                "system",
                "sampling_time",
                "required for a continuous-time builtin",
            ))
        }
    };
    Ok(model.with_params(s.params.clone()))
}

/// Input of the equilibrium nearest to `x` among projections started from a
/// grid over the reference input box.
fn equilibrium_input(model: &SystemModel, cs: &ConstraintSet, x: &Vector) -> Option<Vector> {
    let b = cs.reference_input_box();
    let mut best: Option<(f64, Vector)> = None;
    for k in 0..=8 {
        let u = &b.lower + (&b.upper - &b.lower) * (k as f64 / 8.0);
        if let Ok(r) = project_to_manifold(model, x, &u) {
            let d = (&r.x - x).norm();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, r.u));
            }
        }
    }
    best.map(|(_, u)| u)
}

fn scaling_fn(src: &Source, s: &ScalingBlock) -> Result<ScalingFn, CliError> {
    match s {
        ScalingBlock::Linear => Ok(ScalingFn::Linear),
        ScalingBlock::Constant { value } => {
            ScalingFn::constant(*value).map_err(|e| src.error("scaling", "value", e))
        }
    }
}

fn build(file: ScenarioFile, src: &Source) -> Result<Scenario, CliError> {
    let n = file.system.state_dim;
    let m = file.system.input_dim;
    let model = model(src, &file.system)?;

    let c = &file.constraints;
    let z = BoxSet::new(
        vector(src, "constraints", "z_lower", &c.z_lower, n + m)?,
        vector(src, "constraints", "z_upper", &c.z_upper, n + m)?,
    )
    .map_err(|e| src.error("constraints", "z_lower", e))?;
    let zr = BoxSet::new(
        vector(src, "constraints", "zr_lower", &c.zr_lower, n + m)?,
        vector(src, "constraints", "zr_upper", &c.zr_upper, n + m)?,
    )
    .map_err(|e| src.error("constraints", "zr_lower", e))?;
    let cs =
        ConstraintSet::new(n, m, z, zr).map_err(|e| src.error("constraints", "zr_lower", e))?;

    let k = &file.cost;
    let q = matrix(src, "cost", "q", &k.q, n, n)?;
    let r = matrix(src, "cost", "r", &k.r, m, m)?;
    let sc = StageCost::new(q, r).map_err(|e| src.error("cost", "q", e))?;
    let sx = matrix(src, "cost", "s_x", &k.s_x, n, n)?;
    let su = matrix(src, "cost", "s_u", &k.s_u, m, m)?;
    let x_e = vector(src, "cost", "x_e", &k.x_e, n)?;
    let u_e = match &k.u_e {
        Some(u) => vector(src, "cost", "u_e", u, m)?,
        None => equilibrium_input(&model, &cs, &x_e).ok_or_else(|| {
            src.error("cost", "x_e", "no equilibrium input found near this state")
        })?,
    };
    let offset = OffsetCost::new(sx, su, x_e, u_e).map_err(|e| src.error("cost", "s_x", e))?;

    let blocks = file.scaling.to_vec();
    if blocks.is_empty() {
        return Err(src.error("scaling", "kind", "at least one scaling block is required"));
    }
    let scalings = blocks
        .iter()
        .map(|b| Ok((*b, scaling_fn(src, b)?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    let run = &file.run;
    let x0 = vector(src, "run", "x0", &run.x0, n)?;
    if !cs.state_box().contains(&x0) {
        return Err(src.error(
            "run",
            "x0",
            "initial state lies outside the state constraints",
        ));
    }
    let horizon = run
        .horizon
        .or_else(|| run.horizons.first().copied())
        .ok_or_else(|| src.error("run", "horizon", "no horizon given"))?;

    let r_d = best_reachable_reference(&model, &cs, &offset)
        .map_err(|e| src.error("cost", "x_e", format!("no reachable reference: {e}")))?;
    if let Some(x_d) = &run.x_d {
        let x_d = vector(src, "run", "x_d", x_d, n)?;
        let gap = (&r_d.reference.x - &x_d).amax();
        let residual = model
            .equilibrium_residual(&r_d.reference.x, &r_d.reference.u)
            .amax();
        if !(gap <= run.x_d_tolerance) || !(residual <= 1e-8) {
            return Err(src.error(
                "run",
                "x_d",
                format!(
                    "equilibrium check failed: best reachable state {:?} (residual {residual:e}) is \
                     {gap:e} from the expected target; check the system parameters",
                    r_d.reference.x.as_slice()
                ),
            ));
        }
    }

    let terminal = match file.terminal.kind {
        TerminalKind::Equality => TerminalIngredients::Equality,
        TerminalKind::Quadratic => TerminalIngredients::Quadratic(
            QuadraticTerminal::new(
                &model,
                &sc,
                &cs,
                file.terminal.grid_points,
                file.terminal.design_samples,
            )
            .map_err(|e| src.error("terminal", "kind", e))?,
        ),
    };
    let spec = OcpSpec {
        model,
        cs,
        sc,
        offset,
        scaling: scalings[0].1,
        terminal: Arc::new(terminal),
        horizon,
        mode: Mode::Tracking,
        settings: SqpSettings::default(),
    };
    Ok(Scenario {
        file,
        spec,
        scalings,
        x0,
        horizon,
        r_d,
    })
}
