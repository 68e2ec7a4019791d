//! Terminal ingredients: the singleton terminal set with zero cost, or a
//! reference-dependent LQR ellipsoid `{x : |x - x_r|_P(r)^2 <= alpha(r)}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::costs::{min_input_cost, StageCost};
use crate::linalg::{chol_upper, sym_eig_range};
use crate::model::{
    sample_references, stack, ConstraintSet, Matrix, Reference, SystemModel, Vector,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TerminalError {
    #[error("Riccati iteration diverged (linearization not stabilizable)")]
    RiccatiDivergence,
    #[error("terminal level collapsed to {0:e}")]
    AlphaCollapse(f64),
    #[error("state lies outside the terminal set")]
    OutsideTerminalSet,
    #[error("no equilibria found to calibrate the terminal level")]
    NoCalibrationPoints,
}

/// Stabilizing solution of `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q` by the
/// structure-preserving doubling algorithm.
pub fn dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix, TerminalError> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(TerminalError::RiccatiDivergence)?;
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    let eye = Matrix::identity(n, n);
    for _ in 0..80 {
        let w = (&eye + &gk * &hk)
            .try_inverse()
            .ok_or(TerminalError::RiccatiDivergence)?;
        let w_a = &w * &ak;
        let h_next = &hk + ak.transpose() * &hk * &w_a;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let a_next = &ak * &w_a;
        if h_next.iter().any(|v| !v.is_finite()) {
            return Err(TerminalError::RiccatiDivergence);
        }
        let change = (&h_next - &hk).amax();
        hk = (&h_next + h_next.transpose()) * 0.5;
        gk = g_next;
        ak = a_next;
        if change <= 1e-15 * hk.amax().max(1.0) {
            return Ok(hk);
        }
    }
    Err(TerminalError::RiccatiDivergence)
}

/// `K = -(R + B'PB)^-1 B'PA`, so that `u = u_r + K (x - x_r)`.
pub fn lqr_gain(a: &Matrix, b: &Matrix, p: &Matrix, r: &Matrix) -> Matrix {
    let lhs = r + b.transpose() * p * b;
    let rhs = b.transpose() * p * a;
    -lhs.lu().solve(&rhs).expect("R + B'PB is positive definite")
}

/// Frobenius norm of the Riccati residual.
pub fn riccati_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    let k = lqr_gain(a, b, p, r);
    let bpa = b.transpose() * p * a;
    (a.transpose() * p * a - p + q + bpa.transpose() * k).norm()
}

/// Ingredients at one reference.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPiece {
    pub p: Matrix,
    pub k: Matrix,
    pub alpha: f64,
}

impl QuadraticPiece {
    pub fn cost(&self, x: &Vector, r: &Reference) -> f64 {
        let e = x - &r.x;
        e.dot(&(&self.p * &e))
    }

    pub fn control(&self, x: &Vector, r: &Reference) -> Vector {
        &r.u + &self.k * (x - &r.x)
    }
}

/// LQR weights are doubled relative to the stage cost so that the terminal
/// cost decreases by `2 l` for the linearization, leaving `l` as margin for
/// the nonlinearity.
fn lqr_at(
    model: &SystemModel,
    sc: &StageCost,
    r: &Reference,
) -> Result<(Matrix, Matrix), TerminalError> {
    let (a, b) = model.jacobians(&r.x, &r.u);
    let q2 = sc.q() * 2.0;
    let r2 = sc.r() * 2.0;
    let p = dare(&a, &b, &q2, &r2)?;
    let k = lqr_gain(&a, &b, &p, &r2);
    Ok((p, k))
}

/// Largest level whose ellipsoid keeps `(x, u_r + K e)` inside `Z`.
pub fn containment_level(cs: &ConstraintSet, p: &Matrix, k: &Matrix, r: &Reference) -> f64 {
    let n = cs.n;
    let p_inv = p
        .clone()
        .try_inverse()
        .unwrap_or_else(|| Matrix::zeros(n, n));
    let z = stack(&r.x, &r.u);
    let mut alpha = f64::INFINITY;
    for i in 0..n + cs.m {
        let c: Vector = if i < n {
            let mut e = Vector::zeros(n);
            e[i] = 1.0;
            e
        } else {
            k.row(i - n).transpose()
        };
        let s = c.dot(&(&p_inv * &c));
        let margin = (cs.z.upper[i] - z[i]).min(z[i] - cs.z.lower[i]).max(0.0);
        if s > 0.0 {
            alpha = alpha.min(margin * margin / s);
        }
    }
    alpha
}

/// Unit directions, deterministic for a given count and dimension.
fn directions(n: usize, count: usize) -> Vec<Vector> {
    if n == 1 {
        return vec![Vector::from_element(1, 1.0), Vector::from_element(1, -1.0)];
    }
    if n == 2 {
        return (0..count)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / count as f64;
                Vector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    (0..count)
        .map(|_| loop {
            let v = Vector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
            let norm = v.norm();
            if norm > 1e-3 && norm <= 1.0 {
                break v / norm;
            }
        })
        .collect()
}

const LEVEL_FRACTIONS: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

/// Worst decrease margin `V(x+) - V(x) + l(x, k_f(x), r)` over sampled points
/// on level sets up to `alpha`.
fn worst_decrease(
    model: &SystemModel,
    sc: &StageCost,
    piece: &QuadraticPiece,
    r: &Reference,
    dirs: &[Vector],
    l_inv_t: &Matrix,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for frac in LEVEL_FRACTIONS {
        let radius = (piece.alpha * frac).sqrt();
        for d in dirs {
            let x = &r.x + l_inv_t * d * radius;
            let u = piece.control(&x, r);
            let next = model.step_unchecked(&x, &u);
            let v0 = piece.cost(&x, r);
            let margin = piece.cost(&next, r) - v0 + sc.eval(&x, &u, r);
            let m = if margin.is_finite() {
                margin
            } else {
                f64::INFINITY
            };
            worst = worst.max(m - 1e-13 * v0);
        }
    }
    worst
}

/// `L^-T` for `P = L L'`, mapping unit vectors onto the unit level set.
fn level_map(p: &Matrix) -> Matrix {
    let u = chol_upper(p).expect("Riccati solution is positive definite");
    u.try_inverse().expect("triangular factor is invertible")
}

/// LQR ingredients at `r` with the level chosen by bisection: the largest
/// `alpha` not above the containment level for which sampled points on the
/// level sets satisfy the decrease condition.
pub fn design_quadratic(
    model: &SystemModel,
    sc: &StageCost,
    cs: &ConstraintSet,
    r: &Reference,
    samples: usize,
) -> Result<QuadraticPiece, TerminalError> {
    let (p, k) = lqr_at(model, sc, r)?;
    let hi = containment_level(cs, &p, &k, r);
    let dirs = directions(cs.n, (samples / LEVEL_FRACTIONS.len()).max(8));
    let map = level_map(&p);
    let mut piece = QuadraticPiece { p, k, alpha: hi };
    if !(hi > 1e-12) {
        return Err(TerminalError::AlphaCollapse(hi));
    }
    if worst_decrease(model, sc, &piece, r, &dirs, &map) <= 0.0 {
        return Ok(piece);
    }
    let (mut lo, mut up) = (hi * 1e-12, hi);
    piece.alpha = lo;
    if worst_decrease(model, sc, &piece, r, &dirs, &map) > 0.0 {
        return Err(TerminalError::AlphaCollapse(lo));
    }
    while up / lo > 1.0 + 1e-6 {
        let mid = (lo * up).sqrt();
        piece.alpha = mid;
        if worst_decrease(model, sc, &piece, r, &dirs, &map) <= 0.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    piece.alpha = lo;
    if lo < 1e-12 {
        return Err(TerminalError::AlphaCollapse(lo));
    }
    Ok(piece)
}

/// Ellipsoidal terminal ingredients for every reference. The level is
/// `kappa * alpha_box(r)`, where `alpha_box` is the containment level and the
/// uniform factor `kappa` is calibrated by bisection on equilibria spread over
/// `Z_r`, which keeps `alpha` a smooth function of `r` inside the optimizer.
#[derive(Debug)]
pub struct QuadraticTerminal {
    model: SystemModel,
    sc: StageCost,
    cs: ConstraintSet,
    pub kappa: f64,
    pub calibration_points: usize,
    cache: Mutex<HashMap<Vec<u64>, Arc<QuadraticPiece>>>,
}

const CACHE_LIMIT: usize = 1 << 16;
const SAFETY: f64 = 0.9;

impl QuadraticTerminal {
    pub fn new(
        model: &SystemModel,
        sc: &StageCost,
        cs: &ConstraintSet,
        grid_points: usize,
        samples: usize,
    ) -> Result<Self, TerminalError> {
        let refs = sample_references(model, cs, grid_points);
        if refs.is_empty() {
            return Err(TerminalError::NoCalibrationPoints);
        }
        let mut ratio = 1.0f64;
        for r in &refs {
            let piece = design_quadratic(model, sc, cs, r, samples)?;
            let hi = containment_level(cs, &piece.p, &piece.k, r);
            ratio = ratio.min(piece.alpha / hi);
        }
        let kappa = if ratio < 1.0 { ratio * SAFETY } else { 1.0 };
        Ok(Self {
            model: model.clone(),
            sc: sc.clone(),
            cs: cs.clone(),
            kappa,
            calibration_points: refs.len(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Ingredients at `r`; `r` need not be an exact equilibrium.
    pub fn piece(&self, r: &Reference) -> Result<Arc<QuadraticPiece>, TerminalError> {
        let key: Vec<u64> = r.x.iter().chain(r.u.iter()).map(|v| v.to_bits()).collect();
        if let Some(p) = self.cache.lock().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let piece = Arc::new(self.compute(r)?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, piece.clone());
        Ok(piece)
    }

    fn compute(&self, r: &Reference) -> Result<QuadraticPiece, TerminalError> {
        let (p, k) = lqr_at(&self.model, &self.sc, r)?;
        let alpha = self.kappa * containment_level(&self.cs, &p, &k, r);
        Ok(QuadraticPiece { p, k, alpha })
    }

    /// Central-difference derivatives of `P` and `alpha` with respect to the
    /// stacked reference `(x_r, u_r)`.
    pub fn derivatives(&self, r: &Reference) -> Result<(Vec<Matrix>, Vec<f64>), TerminalError> {
        let n = r.x.len();
        let z = r.stacked();
        let mut dp = Vec::with_capacity(z.len());
        let mut da = Vec::with_capacity(z.len());
        for i in 0..z.len() {
            let h = 1e-6 * z[i].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let plus = self.compute(&Reference::from_stacked(&zp, n))?;
            let minus = self.compute(&Reference::from_stacked(&zm, n))?;
            dp.push((plus.p - minus.p) / (2.0 * h));
            da.push((plus.alpha - minus.alpha) / (2.0 * h));
        }
        Ok((dp, da))
    }
}

#[derive(Debug)]
pub enum TerminalIngredients {
    /// `X^f(r) = {x_r}`, `V^f = 0`.
    Equality,
    Quadratic(QuadraticTerminal),
}

impl TerminalIngredients {
    pub fn is_equality(&self) -> bool {
        matches!(self, Self::Equality)
    }

    pub fn cost(&self, x: &Vector, r: &Reference) -> Result<f64, TerminalError> {
        match self {
            Self::Equality => Ok(0.0),
            Self::Quadratic(q) => Ok(q.piece(r)?.cost(x, r)),
        }
    }

    pub fn contains(&self, x: &Vector, r: &Reference) -> Result<bool, TerminalError> {
        match self {
            Self::Equality => Ok((x - &r.x).amax() <= 1e-9),
            Self::Quadratic(q) => {
                let piece = q.piece(r)?;
                Ok(piece.cost(x, r) <= piece.alpha * (1.0 + 1e-9))
            }
        }
    }
}

/// `k_f(x, r)`: `u_r` for the equality terminal, `u_r + K(r)(x - x_r)` inside
/// the ellipsoid.
pub fn terminal_control(
    ti: &TerminalIngredients,
    x: &Vector,
    r: &Reference,
) -> Result<Vector, TerminalError> {
    if !ti.contains(x, r)? {
        return Err(TerminalError::OutsideTerminalSet);
    }
    match ti {
        TerminalIngredients::Equality => Ok(r.u.clone()),
        TerminalIngredients::Quadratic(q) => Ok(q.piece(r)?.control(x, r)),
    }
}

/// Sampled check of the terminal conditions at one reference. Violations are
/// maxima of the respective residuals; non-positive means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub samples: usize,
    pub c_b: f64,
    /// Smallest constant with `V^f <= c_f lbar` on the samples (empirical).
    pub c_f: f64,
    pub alpha: f64,
    pub invariance: f64,
    pub decrease: f64,
    pub constraints: f64,
    pub cost_bound: f64,
    pub note: Option<String>,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.invariance <= 0.0
            && self.decrease <= 0.0
            && self.constraints <= 0.0
            && self.cost_bound <= 0.0
    }
}

/// Absolute slack for rounding in the sampled decrease and invariance checks.
const CERT_TOL: f64 = 1e-12;

pub fn certify(
    ti: &TerminalIngredients,
    model: &SystemModel,
    sc: &StageCost,
    cs: &ConstraintSet,
    r: &Reference,
    samples: usize,
    seed: u64,
) -> Result<Certification, TerminalError> {
    let q = match ti {
        TerminalIngredients::Equality => {
            let next = model.step_unchecked(&r.x, &r.u);
            let invariance = (next - &r.x).amax() - 1e-9;
            return Ok(Certification {
                samples: 1,
                c_b: 0.0,
                c_f: 0.0,
                alpha: 0.0,
                invariance,
                decrease: 0.0,
                constraints: if cs.is_admissible(&r.x, &r.u) {
                    0.0
                } else {
                    1.0
                },
                cost_bound: 0.0,
                note: Some(
                    "non-degeneracy ball void for the singleton terminal set; \
                     relies on local finite-time controllability"
                        .into(),
                ),
            });
        }
        TerminalIngredients::Quadratic(q) => q,
    };
    let piece = q.piece(r)?;
    let n = cs.n;
    let p_inv = piece
        .p
        .clone()
        .try_inverse()
        .unwrap_or_else(|| Matrix::zeros(n, n));
    let half_width: Vec<f64> = (0..n)
        .map(|i| (piece.alpha * p_inv[(i, i)]).sqrt())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples);
    let mut attempts = 0;
    while points.len() < samples && attempts < samples * 1000 {
        attempts += 1;
        let e = Vector::from_iterator(n, half_width.iter().map(|w| rng.gen_range(-1.0..=1.0) * w));
        if e.dot(&(&piece.p * &e)) <= piece.alpha {
            points.push(&r.x + e);
        }
    }
    let mut invariance = f64::NEG_INFINITY;
    let mut decrease = f64::NEG_INFINITY;
    let mut constraints = f64::NEG_INFINITY;
    let mut ratio = 0.0f64;
    let mut pairs = Vec::with_capacity(points.len());
    for x in &points {
        let u = piece.control(x, r);
        let next = model.step_unchecked(x, &u);
        let v0 = piece.cost(x, r);
        let v1 = piece.cost(&next, r);
        invariance = invariance.max(v1 - piece.alpha - CERT_TOL);
        decrease = decrease.max(v1 - v0 + sc.eval(x, &u, r) - CERT_TOL);
        let z = stack(x, &u);
        for i in 0..z.len() {
            constraints = constraints
                .max(cs.z.lower[i] - z[i])
                .max(z[i] - cs.z.upper[i]);
        }
        if let Ok(lbar) = min_input_cost(sc, cs, x, r) {
            if lbar > 1e-14 {
                ratio = ratio.max(v0 / lbar);
            }
            pairs.push((v0, lbar));
        }
    }
    let c_f = ratio * 1.1;
    let cost_bound = pairs
        .iter()
        .map(|(v, l)| v - c_f * l - CERT_TOL)
        .fold(f64::NEG_INFINITY, f64::max);
    let (_, p_hi) = sym_eig_range(&piece.p);
    Ok(Certification {
        samples: points.len(),
        c_b: (piece.alpha / p_hi).sqrt(),
        c_f,
        alpha: piece.alpha,
        invariance: invariance.max(-f64::MAX),
        decrease: decrease.max(-f64::MAX),
        constraints: constraints.max(-f64::MAX),
        cost_bound: cost_bound.max(-f64::MAX),
        note: None,
    })
}
