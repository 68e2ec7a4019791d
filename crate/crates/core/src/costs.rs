//! Quadratic stage and offset costs, horizon scaling, and sampled checks of
//! the stage-cost bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::sym_eig_range;
use crate::model::{BoxSet, ConstraintSet, Matrix, Reference, SystemModel, Vector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("{name} must be square with dimension {expected}, got {rows}x{cols}")]
    Shape {
        name: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{name} must be symmetric")]
    NotSymmetric { name: &'static str },
    #[error("{name} must be positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { name: &'static str, min_eig: f64 },
    #[error("constant scaling must be at least 1, got {0}")]
    Scaling(f64),
    #[error("no admissible input exists at this state")]
    EmptyInputSlice,
    #[error("trajectory is not dynamically consistent (defect {defect:e} at step {step})")]
    InconsistentTrajectory { step: usize, defect: f64 },
    #[error("trajectory needs {expected} states for {inputs} inputs, got {got}")]
    TrajectoryLength {
        expected: usize,
        inputs: usize,
        got: usize,
    },
}

fn check_weight(name: &'static str, w: &Matrix, dim: usize) -> Result<(), CostError> {
    if w.nrows() != dim || w.ncols() != dim {
        return Err(CostError::Shape {
            name,
            expected: dim,
            rows: w.nrows(),
            cols: w.ncols(),
        });
    }
    let scale = w.amax().max(1.0);
    if (w - w.transpose()).amax() > 1e-12 * scale {
        return Err(CostError::NotSymmetric { name });
    }
    let (lo, _) = sym_eig_range(w);
    if !(lo > 0.0) {
        return Err(CostError::NotPositiveDefinite { name, min_eig: lo });
    }
    Ok(())
}

fn quad(w: &Matrix, v: &Vector) -> f64 {
    v.dot(&(w * v))
}

/// `l(x, u, r) = |x - x_r|_Q^2 + |u - u_r|_R^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    q: Matrix,
    r: Matrix,
}

impl StageCost {
    pub fn new(q: Matrix, r: Matrix) -> Result<Self, CostError> {
        check_weight("Q", &q, q.nrows())?;
        check_weight("R", &r, r.nrows())?;
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn eval(&self, x: &Vector, u: &Vector, r: &Reference) -> f64 {
        quad(&self.q, &(x - &r.x)) + quad(&self.r, &(u - &r.u))
    }
}

pub fn stage_cost(sc: &StageCost, x: &Vector, u: &Vector, r: &Reference) -> f64 {
    sc.eval(x, u, r)
}

/// `min_u l(x, u, r)` over inputs with `(x, u)` in `Z`.
pub fn min_input_cost(
    sc: &StageCost,
    cs: &ConstraintSet,
    x: &Vector,
    r: &Reference,
) -> Result<f64, CostError> {
    if !cs.state_box().contains(x) {
        return Err(CostError::EmptyInputSlice);
    }
    let u = box_minimizer(&sc.r, &r.u, &cs.input_box());
    Ok(sc.eval(x, &u, r))
}

/// Minimizer of `|u - c|_W^2` over a box: a clamp for diagonal `W`, otherwise
/// a small box-constrained QP.
fn box_minimizer(w: &Matrix, c: &Vector, b: &BoxSet) -> Vector {
    let m = c.len();
    let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || w[(i, j)] == 0.0));
    if diagonal {
        return b.clamp(c);
    }
    let mut hessian = crate::linalg::SparseMatrix::new(m, m);
    hessian.push_block(0, 0, &(w * 2.0));
    let gradient = (w * c * -2.0).iter().copied().collect();
    let problem = crate::qp::QpProblem {
        hessian,
        gradient,
        eq: crate::linalg::SparseMatrix::new(0, m),
        eq_rhs: vec![],
        ineq: crate::linalg::SparseMatrix::new(0, m),
        ineq_rhs: vec![],
        lower: b.lower.iter().copied().collect(),
        upper: b.upper.iter().copied().collect(),
        var_keys: vec![0; m],
        eq_keys: vec![],
        ineq_keys: vec![],
    };
    match crate::qp::solve(&problem, None, None, &Default::default()) {
        Ok(sol) => Vector::from_vec(sol.x),
        Err(_) => b.clamp(c),
    }
}

/// `T(r) = |x_r - x_e|_{S_x}^2 + |u_r - u_e|_{S_u}^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetCost {
    sx: Matrix,
    su: Matrix,
    pub x_e: Vector,
    pub u_e: Vector,
}

impl OffsetCost {
    pub fn new(sx: Matrix, su: Matrix, x_e: Vector, u_e: Vector) -> Result<Self, CostError> {
        check_weight("S_x", &sx, x_e.len())?;
        check_weight("S_u", &su, u_e.len())?;
        Ok(Self { sx, su, x_e, u_e })
    }

    pub fn sx(&self) -> &Matrix {
        &self.sx
    }

    pub fn su(&self) -> &Matrix {
        &self.su
    }

    pub fn eval(&self, r: &Reference) -> f64 {
        quad(&self.sx, &(&r.x - &self.x_e)) + quad(&self.su, &(&r.u - &self.u_e))
    }
}

pub fn offset_cost(t: &OffsetCost, r: &Reference) -> f64 {
    t.eval(r)
}

/// Horizon-dependent weight `lambda(N)` on the offset cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
#[derive(Default)]
pub enum ScalingFn {
    Constant(f64),
    /// `lambda(N) = max(N, 1)`
    #[default]
    Linear,
}

impl ScalingFn {
    pub fn constant(c: f64) -> Result<Self, CostError> {
        if c >= 1.0 && c.is_finite() {
            Ok(Self::Constant(c))
        } else {
            Err(CostError::Scaling(c))
        }
    }

    pub fn value(&self, horizon: usize) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Linear => horizon.max(1) as f64,
        }
    }
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantSource {
    Formula,
    Sampled,
}

/// Constants of the stage-cost bounds:
/// `c1 |x - x_r|^2 <= lbar(x, r) <= c2 |x - x_r|^2`,
/// `l(r1) <= c3 l(r2) + c4 |r1 - r2|^2`,
/// `l(r1) <= l(r2) + c5 |r1 - r2|^2 + c6 |r1 - r2|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub sources: [ConstantSource; 6],
}

/// Largest Euclidean distance between two points of a box.
fn box_diameter(b: &BoxSet) -> f64 {
    (&b.upper - &b.lower).norm()
}

const SAMPLE_INFLATION: f64 = 1.1;

/// `c1 = mu_min(Q)`, `c3 = 2`; `c5`, `c6` from the Cauchy-Schwarz expansion of
/// the quadratic cost; `c2` and `c4` sampled over `Z` and references from
/// `refs`, then inflated by 10%.
pub fn assumption_constants(
    sc: &StageCost,
    cs: &ConstraintSet,
    refs: &[Reference],
    samples: usize,
    seed: u64,
) -> CostConstants {
    let (q_lo, q_hi) = sym_eig_range(&sc.q);
    let (_, r_hi) = sym_eig_range(&sc.r);
    let c5 = q_hi.max(r_hi);
    let c6 =
        2.0 * 2f64.sqrt() * c5 * box_diameter(&cs.state_box()).max(box_diameter(&cs.input_box()));
    let c3 = 2.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c2 = q_hi;
    let mut c4 = 2.0 * c5;
    if !refs.is_empty() {
        let mut c2_obs = 0.0f64;
        let mut c4_obs = 0.0f64;
        for _ in 0..samples {
            let (x, u) = sample_box_pair(&mut rng, cs);
            let r1 = &refs[rng.gen_range(0..refs.len())];
            let r2 = &refs[rng.gen_range(0..refs.len())];
            let dx = (&x - &r1.x).norm_squared();
            if dx > 1e-12 {
                if let Ok(lbar) = min_input_cost(sc, cs, &x, r1) {
                    c2_obs = c2_obs.max(lbar / dx);
                }
            }
            let d = r1.distance(r2).powi(2);
            if d > 1e-12 {
                c4_obs = c4_obs.max((sc.eval(&x, &u, r1) - c3 * sc.eval(&x, &u, r2)) / d);
            }
        }
        if c2_obs > 0.0 {
            c2 = c2_obs * SAMPLE_INFLATION;
        }
        if c4_obs > 0.0 {
            c4 = c4_obs * SAMPLE_INFLATION;
        } else {
            c4 = f64::EPSILON;
        }
    }
    CostConstants {
        c1: q_lo,
        c2,
        c3,
        c4,
        c5,
        c6,
        sources: [
            ConstantSource::Formula,
            ConstantSource::Sampled,
            ConstantSource::Formula,
            ConstantSource::Sampled,
            ConstantSource::Formula,
            ConstantSource::Formula,
        ],
    }
}

fn sample_box(rng: &mut ChaCha8Rng, b: &BoxSet) -> Vector {
    Vector::from_iterator(
        b.dim(),
        (0..b.dim()).map(|i| {
            if b.upper[i] > b.lower[i] {
                rng.gen_range(b.lower[i]..=b.upper[i])
            } else {
                b.lower[i]
            }
        }),
    )
}

fn sample_box_pair(rng: &mut ChaCha8Rng, cs: &ConstraintSet) -> (Vector, Vector) {
    let z = sample_box(rng, &cs.z);
    (
        z.rows(0, cs.n).into_owned(),
        z.rows(cs.n, cs.m).into_owned(),
    )
}

/// `sum_k l(x(k), u(k), r) + V^f(x(N), r)` over a dynamically consistent
/// trajectory; `terminal` evaluates `V^f`.
pub fn tracking_objective(
    sc: &StageCost,
    model: &SystemModel,
    terminal: impl Fn(&Vector, &Reference) -> f64,
    states: &[Vector],
    inputs: &[Vector],
    r: &Reference,
) -> Result<f64, CostError> {
    if states.len() != inputs.len() + 1 {
        return Err(CostError::TrajectoryLength {
            expected: inputs.len() + 1,
            inputs: inputs.len(),
            got: states.len(),
        });
    }
    let mut total = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        let next = model.step_unchecked(&states[k], u);
        let defect = (next - &states[k + 1]).amax();
        if !(defect <= 1e-8) {
            return Err(CostError::InconsistentTrajectory { step: k, defect });
        }
        total += sc.eval(&states[k], u, r);
    }
    Ok(total + terminal(states.last().unwrap(), r))
}

/// `J_K = sum_{k<K} l(x(k), u(k), r_d)`.
pub fn performance(
    sc: &StageCost,
    states: &[Vector],
    inputs: &[Vector],
    r_d: &Reference,
    steps: usize,
) -> f64 {
    (0..steps.min(inputs.len()).min(states.len()))
        .map(|k| sc.eval(&states[k], &inputs[k], r_d))
        .sum()
}

/// Largest observed violation of each inequality (positive means violated).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub constants: CostConstants,
    /// Quadratic bounds `a_lo |r - r_d|^2 <= T(r) - T(r_d) <= a_up |r - r_d|^2`.
    pub offset_bounds: (f64, f64),
    pub offset_indication: f64,
    pub stage_sandwich: f64,
    pub stage_difference: f64,
    pub stage_difference_linear: f64,
    pub scaling: f64,
    /// Observed constants of the candidate-reference condition and its worst
    /// violation; `None` when no references were supplied.
    pub candidate: Option<CandidateConstants>,
}

impl AssumptionReport {
    pub fn max_violation(&self) -> f64 {
        let mut v = self
            .offset_indication
            .max(self.stage_sandwich)
            .max(self.stage_difference)
            .max(self.stage_difference_linear)
            .max(self.scaling);
        if let Some(c) = &self.candidate {
            v = v.max(c.violation);
        }
        v
    }

    pub fn passed(&self) -> bool {
        self.max_violation() <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateConstants {
    pub c1: f64,
    pub c2: f64,
    pub violation: f64,
}

/// Relative slack absorbing floating-point rounding in the sampled checks.
const ROUNDING: f64 = 1e-12;

/// Checks the stage-cost bounds, the offset-cost indication and the
/// candidate-reference condition on random tuples. `refs` are sampled
/// equilibria, `r_d` the best reachable reference.
#[allow(clippy::too_many_arguments)]
pub fn verify_assumptions(
    sc: &StageCost,
    t: &OffsetCost,
    scaling: &ScalingFn,
    model: &SystemModel,
    cs: &ConstraintSet,
    refs: &[Reference],
    r_d: &Reference,
    samples: usize,
    seed: u64,
) -> AssumptionReport {
    let constants = assumption_constants(sc, cs, refs, samples, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let t_d = t.eval(r_d);

    let mut a_lo = f64::INFINITY;
    let mut a_up = 0.0f64;
    for r in refs {
        let d2 = r.distance(r_d).powi(2);
        if d2 > 1e-12 {
            let ratio = (t.eval(r) - t_d) / d2;
            a_lo = a_lo.min(ratio);
            a_up = a_up.max(ratio);
        }
    }
    if !a_lo.is_finite() {
        a_lo = 0.0;
    }
    let mut offset_indication = f64::NEG_INFINITY;
    for r in refs {
        let d2 = r.distance(r_d).powi(2);
        let tt = t.eval(r) - t_d;
        let tol = ROUNDING * (1.0 + t.eval(r).abs());
        offset_indication = offset_indication
            .max(a_lo * d2 - tt - tol)
            .max(tt - a_up * d2 - tol);
    }
    if a_lo <= 0.0 && refs.iter().any(|r| r.distance(r_d) > 1e-6) {
        // the lower comparison function needs a strictly positive slope
        offset_indication = offset_indication.max(f64::MIN_POSITIVE - a_lo);
    }

    let mut sandwich = f64::NEG_INFINITY;
    let mut diff = f64::NEG_INFINITY;
    let mut diff_lin = f64::NEG_INFINITY;
    if !refs.is_empty() {
        for _ in 0..samples {
            let (x, u) = sample_box_pair(&mut rng, cs);
            let r1 = &refs[rng.gen_range(0..refs.len())];
            let r2 = &refs[rng.gen_range(0..refs.len())];
            let dx2 = (&x - &r1.x).norm_squared();
            if let Ok(lbar) = min_input_cost(sc, cs, &x, r1) {
                let tol = ROUNDING * (1.0 + lbar);
                sandwich = sandwich
                    .max(constants.c1 * dx2 - lbar - tol)
                    .max(lbar - constants.c2 * dx2 - tol);
            }
            let l1 = sc.eval(&x, &u, r1);
            let l2 = sc.eval(&x, &u, r2);
            let d = r1.distance(r2);
            let tol = ROUNDING * (1.0 + l1 + l2);
            diff = diff.max(l1 - constants.c3 * l2 - constants.c4 * d * d - tol);
            diff_lin = diff_lin.max(l1 - l2 - constants.c5 * d * d - constants.c6 * d - tol);
        }
    }

    let scaling_violation = (0..=10_000usize)
        .map(|n| n as f64 - scaling.value(n))
        .fold(1.0 - scaling.value(0), f64::max);

    let candidate = if refs.is_empty() {
        None
    } else {
        Some(candidate_constants(model, t, refs, r_d, &mut rng))
    };

    AssumptionReport {
        samples,
        constants,
        offset_bounds: (a_lo, a_up),
        offset_indication: offset_indication.max(-f64::MAX),
        stage_sandwich: sandwich.max(-f64::MAX),
        stage_difference: diff.max(-f64::MAX),
        stage_difference_linear: diff_lin.max(-f64::MAX),
        scaling: scaling_violation,
        candidate,
    }
}

/// Observed constants of `|r^ - r| <= c1 theta |r - r_d|` and
/// `T(r^) - T(r) <= -c2 theta |r - r_d|^2` for `theta in {0.1, ..., 1}` and up
/// to 100 of the supplied references. The violation is positive when some
/// candidate fails to decrease `T`.
pub fn candidate_constants(
    model: &SystemModel,
    t: &OffsetCost,
    refs: &[Reference],
    r_d: &Reference,
    rng: &mut ChaCha8Rng,
) -> CandidateConstants {
    let mut c1 = 0.0f64;
    let mut c2 = f64::INFINITY;
    let picks: Vec<&Reference> = if refs.len() <= 100 {
        refs.iter().collect()
    } else {
        (0..100)
            .map(|_| &refs[rng.gen_range(0..refs.len())])
            .collect()
    };
    let mut failures = 0usize;
    for r in picks {
        let dist = r.distance(r_d);
        if dist <= 1e-8 {
            continue;
        }
        for k in 1..=10 {
            let theta = k as f64 / 10.0;
            match crate::model::candidate_reference(model, r, r_d, theta) {
                Ok(c) => {
                    c1 = c1.max(c.c1_ratio);
                    c2 = c2.min((t.eval(r) - t.eval(&c.reference)) / (theta * dist * dist));
                }
                Err(_) => failures += 1,
            }
        }
    }
    if !c2.is_finite() {
        c2 = 0.0;
    }
    let violation = if failures > 0 {
        failures as f64
    } else if c2 > 0.0 {
        f64::NEG_INFINITY
    } else {
        -c2 + f64::MIN_POSITIVE
    };
    CandidateConstants {
        c1,
        c2,
        violation: violation.max(-f64::MAX),
    }
}
