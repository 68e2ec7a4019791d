//! Dynamics, box constraints and the set of admissible equilibria.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::costs::OffsetCost;
use crate::linalg::SparseMatrix;
use crate::nlp::{self, Nlp, NlpEval, NlpStructure, SqpSettings, SqpStatus};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default equilibrium tolerance for certified references.
pub const TOL_EQ: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dynamics produced a non-finite value at x = {x:?}, u = {u:?}")]
    DynamicsBlowup { x: Vec<f64>, u: Vec<f64> },
    #[error("invalid sampling time {0}; must be positive and finite")]
    SamplingTime(f64),
    #[error("invalid constraint set: {0}")]
    Constraints(String),
    #[error("equilibrium residual {residual:e} exceeds tolerance {tol:e}")]
    NotEquilibrium { residual: f64, tol: f64 },
    #[error("reference lies outside the admissible reference box")]
    OutsideReferenceBox,
    #[error("no admissible equilibrium found")]
    NoEquilibrium,
    #[error("projection onto the equilibrium manifold did not converge (residual {0:e})")]
    ProjectionFailed(f64),
    #[error("interpolation parameter {0} outside [0, 1]")]
    Theta(f64),
}

/// A map `(x, u) -> R^n`: either the discrete-time transition itself or a
/// continuous-time vector field.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &Vector, u: &Vector) -> Vector;

    /// Analytic Jacobians `(d/dx, d/du)`; `None` falls back to finite differences.
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        None
    }

    /// True when `eval` is affine in `(x, u)`.
    fn is_affine(&self) -> bool {
        false
    }
}

/// `a x + b u + c`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Vector,
}

impl Affine {
    pub fn new(a: Matrix, b: Matrix, c: Vector) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(ModelError::Dimension {
                what: "A columns",
                expected: n,
                got: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(ModelError::Dimension {
                what: "B rows",
                expected: n,
                got: b.nrows(),
            });
        }
        if c.len() != n {
            return Err(ModelError::Dimension {
                what: "offset length",
                expected: n,
                got: c.len(),
            });
        }
        Ok(Self { a, b, c })
    }
}

impl Dynamics for Affine {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.c
    }
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        Some((self.a.clone(), self.b.clone()))
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// Continuous-time scalar integrator `dx/dt = u`.
pub fn scalar_integrator() -> Affine {
    Affine {
        a: Matrix::zeros(1, 1),
        b: Matrix::identity(1, 1),
        c: Vector::zeros(1),
    }
}

/// Exothermic continuous stirred-tank reactor (dimensionless concentration
/// `x1`, temperature `x2`, coolant flow `u`).
#[derive(Debug, Clone, PartialEq)]
pub struct Cstr {
    pub theta: f64,
    pub k: f64,
    pub activation: f64,
    pub feed_temperature: f64,
    pub coolant_temperature: f64,
    pub alpha: f64,
}

impl Default for Cstr {
    fn default() -> Self {
        Self {
            theta: 20.0,
            k: 300.0,
            activation: 5.0,
            feed_temperature: 0.3947,
            coolant_temperature: 0.3816,
            alpha: 0.117,
        }
    }
}

impl Cstr {
    pub fn from_params(params: &BTreeMap<String, f64>) -> Self {
        let d = Self::default();
        let get = |k: &str, v: f64| params.get(k).copied().unwrap_or(v);
        Self {
            theta: get("theta", d.theta),
            k: get("k", d.k),
            activation: get("M", d.activation),
            feed_temperature: get("xf", d.feed_temperature),
            coolant_temperature: get("xc", d.coolant_temperature),
            alpha: get("alpha", d.alpha),
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        [
            ("theta", self.theta),
            ("k", self.k),
            ("M", self.activation),
            ("xf", self.feed_temperature),
            ("xc", self.coolant_temperature),
            ("alpha", self.alpha),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

impl Dynamics for Cstr {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        let rate = self.k * x[0] * (-self.activation / x[1]).exp();
        Vector::from_vec(vec![
            (1.0 - x[0]) / self.theta - rate,
            (self.feed_temperature - x[1]) / self.theta + rate
                - self.alpha * u[0] * (x[1] - self.coolant_temperature),
        ])
    }
    fn jacobians(&self, x: &Vector, u: &Vector) -> Option<(Matrix, Matrix)> {
        let e = (-self.activation / x[1]).exp();
        let dr_dx1 = self.k * e;
        let dr_dx2 = self.k * x[0] * e * self.activation / (x[1] * x[1]);
        let a = Matrix::from_row_slice(
            2,
            2,
            &[
                -1.0 / self.theta - dr_dx1,
                -dr_dx2,
                dr_dx1,
                -1.0 / self.theta + dr_dx2 - self.alpha * u[0],
            ],
        );
        let b = Matrix::from_row_slice(
            2,
            1,
            &[0.0, -self.alpha * (x[1] - self.coolant_temperature)],
        );
        Some((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone)]
enum Rhs {
    Discrete(Arc<dyn Dynamics>),
    Continuous {
        field: Arc<dyn Dynamics>,
        step: f64,
        scheme: Scheme,
    },
}

/// Discrete-time system `x+ = f(x, u)`, possibly obtained by discretizing a
/// continuous-time vector field.
#[derive(Debug, Clone)]
pub struct SystemModel {
    rhs: Rhs,
    pub params: BTreeMap<String, f64>,
}

impl SystemModel {
    pub fn discrete(map: Arc<dyn Dynamics>) -> Self {
        Self {
            rhs: Rhs::Discrete(map),
            params: BTreeMap::new(),
        }
    }

    pub fn continuous(
        field: Arc<dyn Dynamics>,
        step: f64,
        scheme: Scheme,
    ) -> Result<Self, ModelError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(ModelError::SamplingTime(step));
        }
        Ok(Self {
            rhs: Rhs::Continuous {
                field,
                step,
                scheme,
            },
            params: BTreeMap::new(),
        })
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    fn inner(&self) -> &Arc<dyn Dynamics> {
        match &self.rhs {
            Rhs::Discrete(d) => d,
            Rhs::Continuous { field, .. } => field,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    /// True when the discrete map is affine (Euler and RK4 preserve affinity).
    pub fn is_affine(&self) -> bool {
        self.inner().is_affine()
    }

    fn check_dims(&self, x: &Vector, u: &Vector) -> Result<(), ModelError> {
        if x.len() != self.state_dim() {
            return Err(ModelError::Dimension {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(ModelError::Dimension {
                what: "input",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// One step of the discrete-time dynamics.
    pub fn step(&self, x: &Vector, u: &Vector) -> Result<Vector, ModelError> {
        self.check_dims(x, u)?;
        let next = self.step_unchecked(x, u);
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(ModelError::DynamicsBlowup {
                x: x.iter().copied().collect(),
                u: u.iter().copied().collect(),
            })
        }
    }

    pub(crate) fn step_unchecked(&self, x: &Vector, u: &Vector) -> Vector {
        match &self.rhs {
            Rhs::Discrete(d) => d.eval(x, u),
            Rhs::Continuous {
                field,
                step,
                scheme,
            } => {
                let h = *step;
                match scheme {
                    Scheme::Euler => x + field.eval(x, u) * h,
                    Scheme::Rk4 => {
                        let k1 = field.eval(x, u);
                        let k2 = field.eval(&(x + &k1 * (h / 2.0)), u);
                        let k3 = field.eval(&(x + &k2 * (h / 2.0)), u);
                        let k4 = field.eval(&(x + &k3 * h), u);
                        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
                    }
                }
            }
        }
    }

    /// Jacobians `(A, B)` of the discrete map at `(x, u)`.
    pub fn jacobians(&self, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        let n = self.state_dim();
        match &self.rhs {
            Rhs::Discrete(d) => field_jacobians(d.as_ref(), x, u),
            Rhs::Continuous {
                field,
                step,
                scheme,
            } => {
                let h = *step;
                let eye = Matrix::identity(n, n);
                match scheme {
                    Scheme::Euler => {
                        let (gx, gu) = field_jacobians(field.as_ref(), x, u);
                        (eye + gx * h, gu * h)
                    }
                    Scheme::Rk4 => {
                        let k1 = field.eval(x, u);
                        let (g1x, g1u) = field_jacobians(field.as_ref(), x, u);
                        let x2 = x + &k1 * (h / 2.0);
                        let k2 = field.eval(&x2, u);
                        let (g2x, g2u) = field_jacobians(field.as_ref(), &x2, u);
                        let d2x = &g2x * (&eye + &g1x * (h / 2.0));
                        let d2u = &g2x * &g1u * (h / 2.0) + g2u;
                        let x3 = x + &k2 * (h / 2.0);
                        let k3 = field.eval(&x3, u);
                        let (g3x, g3u) = field_jacobians(field.as_ref(), &x3, u);
                        let d3x = &g3x * (&eye + &d2x * (h / 2.0));
                        let d3u = &g3x * &d2u * (h / 2.0) + g3u;
                        let x4 = x + &k3 * h;
                        let (g4x, g4u) = field_jacobians(field.as_ref(), &x4, u);
                        let d4x = &g4x * (&eye + &d3x * h);
                        let d4u = &g4x * &d3u * h + g4u;
                        let a = &eye + (g1x + d2x * 2.0 + d3x * 2.0 + d4x) * (h / 6.0);
                        let b = (g1u + d2u * 2.0 + d3u * 2.0 + d4u) * (h / 6.0);
                        (a, b)
                    }
                }
            }
        }
    }

    /// `f(x, u) - x`.
    pub fn equilibrium_residual(&self, x: &Vector, u: &Vector) -> Vector {
        self.step_unchecked(x, u) - x
    }
}

fn field_jacobians(d: &dyn Dynamics, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
    if let Some(j) = d.jacobians(x, u) {
        return j;
    }
    // Central differences, step scaled by the magnitude of each coordinate.
    let n = d.state_dim();
    let m = d.input_dim();
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, m);
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        a.set_column(j, &((d.eval(&xp, u) - d.eval(&xm, u)) / (2.0 * h)));
    }
    for j in 0..m {
        let h = 1e-6 * u[j].abs().max(1.0);
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += h;
        um[j] -= h;
        b.set_column(j, &((d.eval(x, &up) - d.eval(x, &um)) / (2.0 * h)));
    }
    (a, b)
}

/// Axis-aligned box with finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: Vector,
    pub upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, ModelError> {
        if lower.len() != upper.len() {
            return Err(ModelError::Constraints(
                "lower and upper bounds differ in length".into(),
            ));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(ModelError::Constraints(format!(
                    "bound {i} is not finite (sets must be compact)"
                )));
            }
            if lower[i] > upper[i] {
                return Err(ModelError::Constraints(format!(
                    "lower bound {i} exceeds upper bound"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, v: &Vector) -> bool {
        v.len() == self.dim()
            && v.iter()
                .enumerate()
                .all(|(i, x)| *x >= self.lower[i] && *x <= self.upper[i])
    }

    pub fn clamp(&self, v: &Vector) -> Vector {
        Vector::from_iterator(
            v.len(),
            v.iter()
                .enumerate()
                .map(|(i, x)| x.clamp(self.lower[i], self.upper[i])),
        )
    }

    pub fn center(&self) -> Vector {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> BoxSet {
        BoxSet {
            lower: self.lower.rows(range.start, range.len()).into_owned(),
            upper: self.upper.rows(range.start, range.len()).into_owned(),
        }
    }
}

/// State-input constraints `Z` and the reference box `Z_r`, both over the
/// stacked vector `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub n: usize,
    pub m: usize,
    pub z: BoxSet,
    pub zr: BoxSet,
}

impl ConstraintSet {
    pub fn new(n: usize, m: usize, z: BoxSet, zr: BoxSet) -> Result<Self, ModelError> {
        for (name, b) in [("Z", &z), ("Z_r", &zr)] {
            if b.dim() != n + m {
                return Err(ModelError::Constraints(format!(
                    "{name} has dimension {}, expected {}",
                    b.dim(),
                    n + m
                )));
            }
        }
        for i in 0..n + m {
            if !(zr.lower[i] > z.lower[i] && zr.upper[i] < z.upper[i]) {
                return Err(ModelError::Constraints(format!(
                    "Z_r must lie strictly inside Z (coordinate {i})"
                )));
            }
        }
        Ok(Self { n, m, z, zr })
    }

    pub fn state_box(&self) -> BoxSet {
        self.z.rows(0..self.n)
    }

    pub fn input_box(&self) -> BoxSet {
        self.z.rows(self.n..self.n + self.m)
    }

    pub fn reference_state_box(&self) -> BoxSet {
        self.zr.rows(0..self.n)
    }

    pub fn reference_input_box(&self) -> BoxSet {
        self.zr.rows(self.n..self.n + self.m)
    }

    /// `(x, u) ∈ Z`, bounds inclusive.
    pub fn is_admissible(&self, x: &Vector, u: &Vector) -> bool {
        x.len() == self.n && u.len() == self.m && self.z.contains(&stack(x, u))
    }

    pub fn in_reference_box(&self, x: &Vector, u: &Vector) -> bool {
        x.len() == self.n && u.len() == self.m && self.zr.contains(&stack(x, u))
    }
}

pub fn stack(x: &Vector, u: &Vector) -> Vector {
    let mut v = Vector::zeros(x.len() + u.len());
    v.rows_mut(0, x.len()).copy_from(x);
    v.rows_mut(x.len(), u.len()).copy_from(u);
    v
}

/// Equilibrium pair `(x_r, u_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: Vector,
    pub u: Vector,
}

impl Reference {
    /// Checks the equilibrium residual against `TOL_EQ` and membership in `Z_r`.
    pub fn certified(
        model: &SystemModel,
        cs: &ConstraintSet,
        x: Vector,
        u: Vector,
    ) -> Result<Self, ModelError> {
        model.check_dims(&x, &u)?;
        let residual = model.equilibrium_residual(&x, &u).norm();
        if !(residual <= TOL_EQ) {
            return Err(ModelError::NotEquilibrium {
                residual,
                tol: TOL_EQ,
            });
        }
        if !cs.in_reference_box(&x, &u) {
            return Err(ModelError::OutsideReferenceBox);
        }
        Ok(Self { x, u })
    }

    /// A pair taken as-is, without equilibrium checks.
    pub fn unchecked(x: Vector, u: Vector) -> Self {
        Self { x, u }
    }

    pub fn stacked(&self) -> Vector {
        stack(&self.x, &self.u)
    }

    pub fn from_stacked(v: &Vector, n: usize) -> Self {
        let m = v.len() - n;
        Self {
            x: v.rows(0, n).into_owned(),
            u: v.rows(n, m).into_owned(),
        }
    }

    /// Euclidean distance over the stacked pair.
    pub fn distance(&self, other: &Reference) -> f64 {
        ((&self.x - &other.x).norm_squared() + (&self.u - &other.u).norm_squared()).sqrt()
    }
}

/// Minimum-norm Gauss-Newton projection of `(x, u)` onto `f(x, u) = x`.
pub fn project_to_manifold(
    model: &SystemModel,
    x: &Vector,
    u: &Vector,
) -> Result<Reference, ModelError> {
    let n = model.state_dim();
    let m = model.input_dim();
    let mut z = stack(x, u);
    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let xr = z.rows(0, n).into_owned();
        let ur = z.rows(n, m).into_owned();
        let c = model.equilibrium_residual(&xr, &ur);
        residual = c.norm();
        if !residual.is_finite() {
            break;
        }
        if residual <= 1e-13 {
            return Ok(Reference { x: xr, u: ur });
        }
        let (a, b) = model.jacobians(&xr, &ur);
        let mut j = Matrix::zeros(n, n + m);
        j.view_mut((0, 0), (n, n))
            .copy_from(&(a - Matrix::identity(n, n)));
        j.view_mut((0, n), (n, m)).copy_from(&b);
        let jjt = &j * j.transpose();
        let Some(w) = jjt.lu().solve(&c) else { break };
        z -= j.transpose() * w;
    }
    if residual <= TOL_EQ {
        let xr = z.rows(0, n).into_owned();
        let ur = z.rows(n, m).into_owned();
        Ok(Reference { x: xr, u: ur })
    } else {
        Err(ModelError::ProjectionFailed(residual))
    }
}

/// Candidate reference `r + θ (r_d - r)` pulled back onto the equilibrium
/// manifold, together with the observed ratio `|r̂ - r| / (θ |r - r_d|)`.
#[derive(Debug, Clone)]
pub struct CandidateReference {
    pub reference: Reference,
    pub c1_ratio: f64,
}

pub fn candidate_reference(
    model: &SystemModel,
    r: &Reference,
    r_d: &Reference,
    theta: f64,
) -> Result<CandidateReference, ModelError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(ModelError::Theta(theta));
    }
    let x = &r.x + (&r_d.x - &r.x) * theta;
    let u = &r.u + (&r_d.u - &r.u) * theta;
    let reference = if theta == 0.0 {
        r.clone()
    } else if theta == 1.0 {
        r_d.clone()
    } else {
        project_to_manifold(model, &x, &u)?
    };
    let denom = theta * r.distance(r_d);
    let c1_ratio = if denom > 0.0 {
        reference.distance(r) / denom
    } else {
        0.0
    };
    Ok(CandidateReference {
        reference,
        c1_ratio,
    })
}

/// Deterministic space-filling points in a box (Halton sequence).
pub fn halton_points(b: &BoxSet, count: usize) -> Vec<Vector> {
    const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    let d = b.dim();
    (1..=count)
        .map(|k| {
            Vector::from_iterator(
                d,
                (0..d).map(|i| {
                    let base = PRIMES[i % PRIMES.len()] as f64;
                    let mut f = 1.0;
                    let mut r = 0.0;
                    let mut idx = k as f64;
                    while idx > 0.0 {
                        f /= base;
                        r += f * (idx % base);
                        idx = (idx / base).floor();
                    }
                    b.lower[i] + r * (b.upper[i] - b.lower[i])
                }),
            )
        })
        .collect()
}

/// Equilibria found by projecting Halton points of `Z_r` onto the manifold;
/// only projections that land inside `Z_r` are kept.
pub fn sample_references(model: &SystemModel, cs: &ConstraintSet, count: usize) -> Vec<Reference> {
    let n = cs.n;
    halton_points(&cs.zr, count)
        .into_iter()
        .filter_map(|p| {
            let x = p.rows(0, n).into_owned();
            let u = p.rows(n, cs.m).into_owned();
            project_to_manifold(model, &x, &u).ok()
        })
        .filter(|r| cs.in_reference_box(&r.x, &r.u))
        .collect()
}

/// Minimizer of the offset cost over the admissible equilibria.
#[derive(Debug, Clone)]
pub struct ReachableReference {
    pub reference: Reference,
    pub offset: f64,
    pub kkt_residual: f64,
    /// False when the solver stalled; the reference is then the best iterate.
    pub certified: bool,
}

struct ReferenceNlp<'a> {
    model: &'a SystemModel,
    t: &'a OffsetCost,
    s: NlpStructure,
}

impl ReferenceNlp<'_> {
    fn split(&self, z: &[f64]) -> (Vector, Vector) {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        (
            Vector::from_column_slice(&z[..n]),
            Vector::from_column_slice(&z[n..n + m]),
        )
    }
}

impl Nlp for ReferenceNlp<'_> {
    fn structure(&self) -> &NlpStructure {
        &self.s
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let (x, u) = self.split(z);
        self.t.eval(&Reference::unchecked(x, u))
    }

    fn constraints(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (x, u) = self.split(z);
        (
            self.model
                .equilibrium_residual(&x, &u)
                .iter()
                .copied()
                .collect(),
            vec![],
        )
    }

    fn evaluate(&self, z: &[f64]) -> NlpEval {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        let (x, u) = self.split(z);
        let gx = self.t.sx() * (&x - &self.t.x_e) * 2.0;
        let gu = self.t.su() * (&u - &self.t.u_e) * 2.0;
        let mut hessian = SparseMatrix::new(n + m, n + m);
        hessian.push_block(0, 0, &(self.t.sx() * 2.0));
        hessian.push_block(n, n, &(self.t.su() * 2.0));
        let (a, b) = self.model.jacobians(&x, &u);
        let mut eq_jac = SparseMatrix::new(n, n + m);
        eq_jac.push_block(0, 0, &(a - Matrix::identity(n, n)));
        eq_jac.push_block(0, n, &b);
        NlpEval {
            objective: self.objective(z),
            gradient: gx.iter().chain(gu.iter()).copied().collect(),
            hessian,
            eq: self.constraints(z).0,
            eq_jac,
            ineq: vec![],
            ineq_jac: SparseMatrix::new(0, n + m),
        }
    }
}

/// Minimizes `T` over `{(x, u) in Z_r : f(x, u) = x}` with SQP started from
/// the clamped external reference and from sampled equilibria.
pub fn best_reachable_reference(
    model: &SystemModel,
    cs: &ConstraintSet,
    t: &OffsetCost,
) -> Result<ReachableReference, ModelError> {
    let mut starts = vec![cs.zr.clamp(&stack(&t.x_e, &t.u_e))];
    starts.extend(
        sample_references(model, cs, 32)
            .iter()
            .map(Reference::stacked),
    );
    best_reference_from_starts(model, cs, t, &starts)
}

/// As [`best_reachable_reference`], from a single initial guess.
pub fn best_reachable_reference_from(
    model: &SystemModel,
    cs: &ConstraintSet,
    t: &OffsetCost,
    guess: &Reference,
) -> Result<ReachableReference, ModelError> {
    best_reference_from_starts(model, cs, t, &[guess.stacked()])
}

fn best_reference_from_starts(
    model: &SystemModel,
    cs: &ConstraintSet,
    t: &OffsetCost,
    starts: &[Vector],
) -> Result<ReachableReference, ModelError> {
    let dim = cs.n + cs.m;
    let nlp = ReferenceNlp {
        model,
        t,
        s: NlpStructure {
            lower: cs.zr.lower.iter().copied().collect(),
            upper: cs.zr.upper.iter().copied().collect(),
            var_keys: vec![0; dim],
            eq_keys: vec![0; cs.n],
            ineq_keys: vec![],
        },
    };
    let mut best: Option<ReachableReference> = None;
    for start in starts {
        let res = nlp::solve(&nlp, start.as_slice(), &SqpSettings::default());
        let reference = Reference::from_stacked(&Vector::from_vec(res.z.clone()), cs.n);
        let residual = model
            .equilibrium_residual(&reference.x, &reference.u)
            .norm();
        if !(residual <= TOL_EQ) || !cs.in_reference_box(&reference.x, &reference.u) {
            continue;
        }
        let candidate = ReachableReference {
            offset: res.objective,
            kkt_residual: res.kkt_residual,
            certified: res.status == SqpStatus::Converged,
            reference,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                (candidate.certified && !b.certified)
                    || (candidate.certified == b.certified && candidate.offset < b.offset - 1e-12)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or(ModelError::NoEquilibrium)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn scalar() -> SystemModel {
        SystemModel::continuous(Arc::new(scalar_integrator()), 1.0, Scheme::Euler).unwrap()
    }

    fn scalar_constraints() -> ConstraintSet {
        ConstraintSet::new(
            1,
            1,
            BoxSet::new(v(&[-2.0, -1.0]), v(&[2.0, 1.0])).unwrap(),
            BoxSet::new(v(&[-1.9, -0.9]), v(&[1.9, 0.9])).unwrap(),
        )
        .unwrap()
    }

    fn cstr() -> SystemModel {
        SystemModel::continuous(Arc::new(Cstr::default()), 0.1, Scheme::Euler).unwrap()
    }

    #[test]
    fn euler_integrator_step() {
        let x = scalar().step(&v(&[1.0]), &v(&[-1.0 / 3.0])).unwrap();
        assert_abs_diff_eq!(x[0], 2.0 / 3.0, epsilon = 1e-15);
        let x = scalar().step(&v(&[0.0]), &v(&[0.0])).unwrap();
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(
            scalar().step(&v(&[1.0, 2.0]), &v(&[0.0])),
            Err(ModelError::Dimension { .. })
        ));
    }

    #[test]
    fn blowup_carries_offending_point() {
        // exp(-M / x2) overflows for tiny negative temperatures
        let err = cstr().step(&v(&[1.0, -1e-300]), &v(&[0.0])).unwrap_err();
        match err {
            ModelError::DynamicsBlowup { x, u } => {
                assert_eq!(x, vec![1.0, -1e-300]);
                assert_eq!(u, vec![0.0]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn nonpositive_sampling_time_rejected() {
        assert!(
            SystemModel::continuous(Arc::new(scalar_integrator()), 0.0, Scheme::Euler).is_err()
        );
    }

    #[test]
    fn cstr_equilibrium_at_desired_state() {
        // u_d from a 1-D root find on the temperature equation at x2 = 0.6519,
        // x1 then follows from the concentration balance.
        let model = cstr();
        let r = project_to_manifold(&model, &v(&[0.2632, 0.6519]), &v(&[0.7585])).unwrap();
        assert!(model.equilibrium_residual(&r.x, &r.u).norm() <= 1e-9);
        assert_abs_diff_eq!(r.x[0], 0.2632, epsilon = 1e-4);
        assert_abs_diff_eq!(r.x[1], 0.6519, epsilon = 1e-4);
        let next = model.step(&r.x, &r.u).unwrap();
        assert_abs_diff_eq!((next - &r.x).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rk4_jacobian_matches_finite_differences() {
        let model = SystemModel::continuous(Arc::new(Cstr::default()), 0.1, Scheme::Rk4).unwrap();
        let x = v(&[0.5, 0.6]);
        let u = v(&[0.7]);
        let (a, b) = model.jacobians(&x, &u);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (model.step(&xp, &u).unwrap() - model.step(&xm, &u).unwrap()) / (2.0 * h);
            for i in 0..2 {
                assert_abs_diff_eq!(a[(i, j)], col[i], epsilon = 1e-8);
            }
        }
        let col = (model.step(&x, &v(&[0.7 + h])).unwrap()
            - model.step(&x, &v(&[0.7 - h])).unwrap())
            / (2.0 * h);
        for i in 0..2 {
            assert_abs_diff_eq!(b[(i, 0)], col[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn admissibility_is_inclusive() {
        let cs = scalar_constraints();
        assert!(cs.is_admissible(&v(&[1.0]), &v(&[1.0])));
        assert!(!cs.is_admissible(&v(&[1.0]), &v(&[1.0001])));
        assert!(cs.is_admissible(&v(&[-2.0]), &v(&[-1.0])));
    }

    #[test]
    fn reference_box_must_be_interior() {
        let z = BoxSet::new(v(&[-2.0, -1.0]), v(&[2.0, 1.0])).unwrap();
        let touching = BoxSet::new(v(&[-2.0, -0.5]), v(&[1.0, 0.5])).unwrap();
        assert!(ConstraintSet::new(1, 1, z.clone(), touching).is_err());
        let unbounded = BoxSet::new(v(&[f64::NEG_INFINITY, -1.0]), v(&[2.0, 1.0]));
        assert!(unbounded.is_err());
    }

    #[test]
    fn candidate_reference_endpoints_and_midpoint() {
        let model = scalar();
        let r = Reference::unchecked(v(&[1.0]), v(&[0.0]));
        let rd = Reference::unchecked(v(&[0.0]), v(&[0.0]));
        let c0 = candidate_reference(&model, &r, &rd, 0.0).unwrap();
        assert_eq!(c0.reference, r);
        let c1 = candidate_reference(&model, &r, &rd, 1.0).unwrap();
        assert_eq!(c1.reference, rd);
        let half = candidate_reference(&model, &r, &rd, 0.5).unwrap();
        assert_abs_diff_eq!(half.reference.x[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(half.reference.u[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(half.c1_ratio, 1.0, epsilon = 1e-12);
        assert!(candidate_reference(&model, &r, &rd, 1.5).is_err());
    }

    #[test]
    fn certified_reference_rejects_non_equilibria() {
        let cs = scalar_constraints();
        assert!(Reference::certified(&scalar(), &cs, v(&[0.5]), v(&[0.1])).is_err());
        assert!(Reference::certified(&scalar(), &cs, v(&[0.5]), v(&[0.0])).is_ok());
        assert!(matches!(
            Reference::certified(&scalar(), &cs, v(&[1.95]), v(&[0.0])),
            Err(ModelError::OutsideReferenceBox)
        ));
    }

    #[test]
    fn sampled_references_are_certified() {
        let model = cstr();
        let cs = ConstraintSet::new(
            2,
            1,
            BoxSet::new(v(&[0.0, 0.0, 0.0]), v(&[1.0, 1.0, 2.0])).unwrap(),
            BoxSet::new(v(&[0.0529, 0.43, 0.1366]), v(&[0.9492, 0.86, 0.7687])).unwrap(),
        )
        .unwrap();
        let refs = sample_references(&model, &cs, 60);
        assert!(refs.len() > 10);
        for r in refs {
            assert!(Reference::certified(&model, &cs, r.x.clone(), r.u.clone()).is_ok());
        }
    }
    fn scalar_offset(x_e: f64) -> OffsetCost {
        OffsetCost::new(
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            v(&[x_e]),
            v(&[0.0]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_best_reference_is_origin() {
        let r = best_reachable_reference(&scalar(), &scalar_constraints(), &scalar_offset(0.0))
            .unwrap();
        assert!(r.certified);
        assert_abs_diff_eq!(r.reference.x[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.reference.u[0], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn best_reference_on_box_boundary() {
        let cs = ConstraintSet::new(
            1,
            1,
            BoxSet::new(v(&[-3.0, -1.0]), v(&[3.0, 1.0])).unwrap(),
            BoxSet::new(v(&[-2.0, -0.5]), v(&[2.0, 0.5])).unwrap(),
        )
        .unwrap();
        let r = best_reachable_reference(&scalar(), &cs, &scalar_offset(3.0)).unwrap();
        assert!(r.certified);
        assert_abs_diff_eq!(r.reference.x[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cstr_best_reference_and_fixed_point() {
        let model = cstr();
        let cs = ConstraintSet::new(
            2,
            1,
            BoxSet::new(v(&[0.0, 0.0, 0.0]), v(&[1.0, 1.0, 2.0])).unwrap(),
            BoxSet::new(v(&[0.0529, 0.43, 0.1366]), v(&[0.9492, 0.86, 0.7687])).unwrap(),
        )
        .unwrap();
        let t = OffsetCost::new(
            Matrix::from_diagonal(&v(&[0.01, 1000.0])),
            Matrix::identity(1, 1),
            v(&[0.2632, 0.6519]),
            v(&[0.7585199544]),
        )
        .unwrap();
        let r = best_reachable_reference(&model, &cs, &t).unwrap();
        assert!(r.certified);
        assert_abs_diff_eq!(r.reference.x[0], 0.2632, epsilon = 1e-4);
        assert_abs_diff_eq!(r.reference.x[1], 0.6519, epsilon = 1e-4);
        assert!(r.reference.u[0] >= 0.1366 && r.reference.u[0] <= 0.7687);
        let again = best_reachable_reference_from(&model, &cs, &t, &r.reference).unwrap();
        assert!(again.reference.distance(&r.reference) <= 1e-10);
    }
}
