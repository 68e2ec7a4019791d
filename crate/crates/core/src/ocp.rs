//! Finite-horizon optimal control problems: tracking with an artificial
//! reference, and the standard problem with the reference fixed.
//!
//! Both are transcribed by multiple shooting. In tracking mode every stage
//! carries its own copy of the reference, tied to its neighbours by equality
//! rows, so the KKT matrix stays banded.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::costs::{OffsetCost, ScalingFn, StageCost};
use crate::linalg::SparseMatrix;
use crate::model::{
    project_to_manifold, sample_references, ConstraintSet, Matrix, ModelError, Reference,
    SystemModel, Vector,
};
use crate::nlp::{self, Nlp, NlpEval, NlpStructure, SqpSettings, SqpStatus};
use crate::terminal::{TerminalError, TerminalIngredients};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OcpError {
    #[error("initial state {0:?} lies outside the state constraints")]
    InitialState(Vec<f64>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
    #[error("solver did not reach optimality ({0:?})")]
    NotOptimal(OcpStatus),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Tracking,
    /// Reference fixed to a certified equilibrium.
    Standard(Reference),
}

#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub model: SystemModel,
    pub cs: ConstraintSet,
    pub sc: StageCost,
    pub offset: OffsetCost,
    pub scaling: ScalingFn,
    pub terminal: Arc<TerminalIngredients>,
    pub horizon: usize,
    pub mode: Mode,
    pub settings: SqpSettings,
}

impl OcpSpec {
    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn is_tracking(&self) -> bool {
        matches!(self.mode, Mode::Tracking)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OcpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub u_seq: Vec<Vector>,
    pub x_seq: Vec<Vector>,
    /// Optimal artificial reference, or the fixed reference in standard mode.
    pub r_opt: Reference,
    /// `V_N` (tracking) or `W_N` (standard).
    pub objective: f64,
    pub status: OcpStatus,
    pub kkt_residual: f64,
    /// Largest defect, bound or terminal violation.
    pub violation: f64,
    pub sqp_iters: usize,
}

/// Initial guess: inputs and, in tracking mode, the reference. States are
/// obtained by simulation from the initial state.
#[derive(Debug, Clone)]
pub struct Guess {
    pub u_seq: Vec<Vector>,
    pub reference: Reference,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
    horizon: usize,
    tracking: bool,
}

impl Layout {
    fn nr(&self) -> usize {
        if self.tracking {
            self.n + self.m
        } else {
            0
        }
    }
    fn block(&self) -> usize {
        self.n + self.nr() + self.m
    }
    fn x(&self, k: usize) -> usize {
        k * self.block()
    }
    fn rho(&self, k: usize) -> usize {
        debug_assert!(self.tracking);
        k * self.block() + self.n
    }
    fn u(&self, k: usize) -> usize {
        debug_assert!(k < self.horizon);
        k * self.block() + self.n + self.nr()
    }
    fn nvars(&self) -> usize {
        self.horizon * self.block() + self.n + self.nr()
    }
}

/// The transcribed NLP for one initial state.
pub struct Transcription<'a> {
    spec: &'a OcpSpec,
    layout: Layout,
    structure: NlpStructure,
    lambda: f64,
}

fn slice(z: &[f64], at: usize, len: usize) -> Vector {
    Vector::from_column_slice(&z[at..at + len])
}

impl<'a> Transcription<'a> {
    pub fn new(spec: &'a OcpSpec, x0: &Vector) -> Result<Self, OcpError> {
        let n = spec.cs.n;
        let m = spec.cs.m;
        if x0.len() != n {
            return Err(ModelError::Dimension {
                what: "initial state",
                expected: n,
                got: x0.len(),
            }
            .into());
        }
        if !spec.cs.state_box().contains(x0) {
            return Err(OcpError::InitialState(x0.iter().copied().collect()));
        }
        let layout = Layout {
            n,
            m,
            horizon: spec.horizon,
            tracking: spec.is_tracking(),
        };
        let nv = layout.nvars();
        let mut lower = vec![f64::NEG_INFINITY; nv];
        let mut upper = vec![f64::INFINITY; nv];
        let mut var_keys = vec![0; nv];
        let xb = spec.cs.state_box();
        let ub = spec.cs.input_box();
        for k in 0..=layout.horizon {
            let base = layout.x(k);
            let end = if k < layout.horizon {
                base + layout.block()
            } else {
                nv
            };
            for key in &mut var_keys[base..end] {
                *key = 2 * k;
            }
            for i in 0..n {
                if k == 0 {
                    lower[base + i] = x0[i];
                    upper[base + i] = x0[i];
                } else {
                    lower[base + i] = xb.lower[i];
                    upper[base + i] = xb.upper[i];
                }
            }
            if k < layout.horizon {
                let ui = layout.u(k);
                for j in 0..m {
                    lower[ui + j] = ub.lower[j];
                    upper[ui + j] = ub.upper[j];
                }
            }
        }
        if layout.tracking {
            let r0 = layout.rho(0);
            for i in 0..n + m {
                lower[r0 + i] = spec.cs.zr.lower[i];
                upper[r0 + i] = spec.cs.zr.upper[i];
            }
        }
        let mut eq_keys = Vec::new();
        for k in 0..layout.horizon {
            eq_keys.extend(std::iter::repeat_n(2 * k + 1, n + layout.nr()));
        }
        if layout.tracking {
            eq_keys.extend(std::iter::repeat_n(0, n));
        }
        let mut ineq_keys = Vec::new();
        match spec.terminal.as_ref() {
            TerminalIngredients::Equality => {
                eq_keys.extend(std::iter::repeat_n(2 * layout.horizon, n))
            }
            TerminalIngredients::Quadratic(_) => ineq_keys.push(2 * layout.horizon),
        }
        Ok(Self {
            spec,
            layout,
            structure: NlpStructure {
                lower,
                upper,
                var_keys,
                eq_keys,
                ineq_keys,
            },
            lambda: spec.scaling.value(spec.horizon),
        })
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars()
    }

    pub fn n_eq(&self) -> usize {
        self.structure.eq_keys.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.structure.ineq_keys.len()
    }

    /// Reference used at stage `k`.
    fn reference(&self, z: &[f64], k: usize) -> Reference {
        let l = &self.layout;
        match &self.spec.mode {
            Mode::Tracking => {
                Reference::unchecked(slice(z, l.rho(k), l.n), slice(z, l.rho(k) + l.n, l.m))
            }
            Mode::Standard(r) => r.clone(),
        }
    }

    /// Primal vector from a guess, simulating the states from `x0`.
    pub fn initial_point(&self, x0: &Vector, guess: &Guess) -> Vec<f64> {
        let l = &self.layout;
        let mut z = vec![0.0; l.nvars()];
        let mut x = x0.clone();
        for k in 0..=l.horizon {
            z[l.x(k)..l.x(k) + l.n].copy_from_slice(x.as_slice());
            if l.tracking {
                let r = guess.reference.stacked();
                z[l.rho(k)..l.rho(k) + l.n + l.m].copy_from_slice(r.as_slice());
            }
            if k < l.horizon {
                let u = guess.u_seq.get(k).unwrap_or(&guess.reference.u);
                z[l.u(k)..l.u(k) + l.m].copy_from_slice(u.as_slice());
                let next = self.spec.model.step_unchecked(&x, u);
                if next.iter().all(|v| v.is_finite()) {
                    x = next;
                }
            }
        }
        z
    }

    fn terminal_piece(&self, r: &Reference) -> Option<Arc<crate::terminal::QuadraticPiece>> {
        match self.spec.terminal.as_ref() {
            TerminalIngredients::Equality => None,
            TerminalIngredients::Quadratic(q) => q.piece(r).ok(),
        }
    }

    fn unpack(&self, z: &[f64]) -> (Vec<Vector>, Vec<Vector>, Reference) {
        let l = &self.layout;
        let xs = (0..=l.horizon).map(|k| slice(z, l.x(k), l.n)).collect();
        let us = (0..l.horizon).map(|k| slice(z, l.u(k), l.m)).collect();
        (xs, us, self.reference(z, 0))
    }
}

impl Nlp for Transcription<'_> {
    fn structure(&self) -> &NlpStructure {
        &self.structure
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let l = &self.layout;
        let sc = &self.spec.sc;
        let mut total = 0.0;
        for k in 0..l.horizon {
            let r = self.reference(z, k);
            total += sc.eval(&slice(z, l.x(k), l.n), &slice(z, l.u(k), l.m), &r);
        }
        let r_n = self.reference(z, l.horizon);
        if let Some(piece) = self.terminal_piece(&r_n) {
            total += piece.cost(&slice(z, l.x(l.horizon), l.n), &r_n);
        } else if !self.spec.terminal.is_equality() {
            return f64::INFINITY;
        }
        if l.tracking {
            total += self.lambda * self.spec.offset.eval(&self.reference(z, 0));
        }
        total
    }

    fn constraints(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let model = &self.spec.model;
        let mut eq = Vec::with_capacity(self.n_eq());
        for k in 0..l.horizon {
            let next = model.step_unchecked(&slice(z, l.x(k), l.n), &slice(z, l.u(k), l.m));
            let xk1 = slice(z, l.x(k + 1), l.n);
            eq.extend((xk1 - next).iter());
            if l.tracking {
                for i in 0..l.n + l.m {
                    eq.push(z[l.rho(k + 1) + i] - z[l.rho(k) + i]);
                }
            }
        }
        if l.tracking {
            let r = self.reference(z, 0);
            eq.extend(model.equilibrium_residual(&r.x, &r.u).iter());
        }
        let r_n = self.reference(z, l.horizon);
        let x_n = slice(z, l.x(l.horizon), l.n);
        let mut ineq = Vec::new();
        match self.spec.terminal.as_ref() {
            TerminalIngredients::Equality => eq.extend((&x_n - &r_n.x).iter()),
            TerminalIngredients::Quadratic(_) => match self.terminal_piece(&r_n) {
                Some(piece) => ineq.push(piece.cost(&x_n, &r_n) - piece.alpha),
                None => ineq.push(f64::INFINITY),
            },
        }
        (eq, ineq)
    }

    fn evaluate(&self, z: &[f64]) -> NlpEval {
        let l = *self.layout_ref();
        let (n, m) = (l.n, l.m);
        let nv = l.nvars();
        let spec = self.spec;
        let q2 = spec.sc.q() * 2.0;
        let r2 = spec.sc.r() * 2.0;
        let mut gradient = vec![0.0; nv];
        let mut hessian = SparseMatrix::new(nv, nv);

        let add_tracking_term = |grad: &mut Vec<f64>,
                                 h: &mut SparseMatrix,
                                 vi: usize,
                                 ri: Option<usize>,
                                 w2: &Matrix,
                                 e: &Vector| {
            let g = w2 * e;
            for i in 0..e.len() {
                grad[vi + i] += g[i];
                if let Some(ri) = ri {
                    grad[ri + i] -= g[i];
                }
            }
            h.push_block(vi, vi, w2);
            if let Some(ri) = ri {
                let neg = -w2;
                h.push_block(ri, ri, w2);
                h.push_block(vi, ri, &neg);
                h.push_block(ri, vi, &neg);
            }
        };

        for k in 0..l.horizon {
            let r = self.reference(z, k);
            let x = slice(z, l.x(k), n);
            let u = slice(z, l.u(k), m);
            let (rx, ru) = if l.tracking {
                (Some(l.rho(k)), Some(l.rho(k) + n))
            } else {
                (None, None)
            };
            add_tracking_term(&mut gradient, &mut hessian, l.x(k), rx, &q2, &(&x - &r.x));
            add_tracking_term(&mut gradient, &mut hessian, l.u(k), ru, &r2, &(&u - &r.u));
        }
        if l.tracking {
            let r0 = self.reference(z, 0);
            let t = &spec.offset;
            let gx = t.sx() * (&r0.x - &t.x_e) * (2.0 * self.lambda);
            let gu = t.su() * (&r0.u - &t.u_e) * (2.0 * self.lambda);
            let base = l.rho(0);
            for i in 0..n {
                gradient[base + i] += gx[i];
            }
            for j in 0..m {
                gradient[base + n + j] += gu[j];
            }
            hessian.push_block(base, base, &(t.sx() * (2.0 * self.lambda)));
            hessian.push_block(base + n, base + n, &(t.su() * (2.0 * self.lambda)));
        }

        // Dynamics, reference copies, equilibrium and terminal rows.
        let mut eq = Vec::with_capacity(self.n_eq());
        let mut eq_jac = SparseMatrix::new(self.n_eq(), nv);
        let mut row = 0;
        let eye_n = Matrix::identity(n, n);
        for k in 0..l.horizon {
            let x = slice(z, l.x(k), n);
            let u = slice(z, l.u(k), m);
            let next = spec.model.step_unchecked(&x, &u);
            let (a, b) = spec.model.jacobians(&x, &u);
            eq.extend((slice(z, l.x(k + 1), n) - next).iter());
            eq_jac.push_block(row, l.x(k + 1), &eye_n);
            eq_jac.push_block(row, l.x(k), &(-a));
            eq_jac.push_block(row, l.u(k), &(-b));
            row += n;
            if l.tracking {
                for i in 0..n + m {
                    eq.push(z[l.rho(k + 1) + i] - z[l.rho(k) + i]);
                    eq_jac.push(row, l.rho(k + 1) + i, 1.0);
                    eq_jac.push(row, l.rho(k) + i, -1.0);
                    row += 1;
                }
            }
        }
        if l.tracking {
            let r = self.reference(z, 0);
            let (a, b) = spec.model.jacobians(&r.x, &r.u);
            eq.extend(spec.model.equilibrium_residual(&r.x, &r.u).iter());
            eq_jac.push_block(row, l.rho(0), &(a - &eye_n));
            eq_jac.push_block(row, l.rho(0) + n, &b);
            row += n;
        }

        let r_n = self.reference(z, l.horizon);
        let x_n = slice(z, l.x(l.horizon), n);
        let e = &x_n - &r_n.x;
        let mut ineq = Vec::new();
        let mut ineq_jac = SparseMatrix::new(self.n_ineq(), nv);
        match spec.terminal.as_ref() {
            TerminalIngredients::Equality => {
                eq.extend(e.iter());
                eq_jac.push_block(row, l.x(l.horizon), &eye_n);
                if l.tracking {
                    eq_jac.push_block(row, l.rho(l.horizon), &(-&eye_n));
                }
            }
            TerminalIngredients::Quadratic(q) => {
                let piece = self.terminal_piece(&r_n);
                let (p, alpha) = match &piece {
                    Some(p) => (p.p.clone(), p.alpha),
                    None => (Matrix::identity(n, n), 0.0),
                };
                let pe2 = &p * &e * 2.0;
                let mut dv = vec![0.0; nv];
                for i in 0..n {
                    dv[l.x(l.horizon) + i] = pe2[i];
                }
                let mut dalpha = vec![0.0; nv];
                if l.tracking {
                    let base = l.rho(l.horizon);
                    for i in 0..n {
                        dv[base + i] -= pe2[i];
                    }
                    if let Ok((dp, da)) = q.derivatives(&r_n) {
                        for i in 0..n + m {
                            dv[base + i] += e.dot(&(&dp[i] * &e));
                            dalpha[base + i] = da[i];
                        }
                    }
                }
                for (i, g) in dv.iter().enumerate() {
                    if *g != 0.0 {
                        gradient[i] += g;
                    }
                }
                let p2 = &p * 2.0;
                hessian.push_block(l.x(l.horizon), l.x(l.horizon), &p2);
                if l.tracking {
                    let base = l.rho(l.horizon);
                    hessian.push_block(base, base, &p2);
                    hessian.push_block(l.x(l.horizon), base, &(-&p2));
                    hessian.push_block(base, l.x(l.horizon), &(-&p2));
                }
                ineq.push(if piece.is_some() {
                    e.dot(&(&p * &e)) - alpha
                } else {
                    f64::INFINITY
                });
                for i in 0..nv {
                    ineq_jac.push(0, i, dv[i] - dalpha[i]);
                }
            }
        }

        NlpEval {
            objective: self.objective(z),
            gradient,
            hessian,
            eq,
            eq_jac,
            ineq,
            ineq_jac,
        }
    }

    fn constraint_curvature(&self, z: &[f64], lambda: &[f64], mu: &[f64]) -> Option<SparseMatrix> {
        let l = &self.layout;
        let n = l.n;
        let nv = l.nvars();
        let mut h = SparseMatrix::new(nv, nv);
        if !self.spec.model.is_affine() {
            // Defect rows are x+ - f(x, u); the equilibrium rows f(x, u) - x.
            let rows_per_stage = n + l.nr();
            for k in 0..l.horizon {
                let w = &lambda[k * rows_per_stage..k * rows_per_stage + n];
                let c = self.dynamics_curvature(z, l.x(k), l.u(k), w, -1.0);
                push_stage_block(&mut h, l.x(k), l.u(k), n, &c);
            }
            if l.tracking {
                let at = l.horizon * rows_per_stage;
                let c =
                    self.dynamics_curvature(z, l.rho(0), l.rho(0) + n, &lambda[at..at + n], 1.0);
                push_stage_block(&mut h, l.rho(0), l.rho(0) + n, n, &c);
            }
        }
        if let Some(&weight) = mu.first() {
            if weight > 0.0 {
                if let Some(piece) = self.terminal_piece(&self.reference(z, l.horizon)) {
                    let p2 = &piece.p * (2.0 * weight);
                    h.push_block(l.x(l.horizon), l.x(l.horizon), &p2);
                    if l.tracking {
                        let base = l.rho(l.horizon);
                        h.push_block(base, base, &p2);
                        h.push_block(l.x(l.horizon), base, &(-&p2));
                        h.push_block(base, l.x(l.horizon), &(-&p2));
                    }
                }
            }
        }
        (!h.entries.is_empty()).then_some(h)
    }
}

/// Adds a dense `(n+m)`-square block over the state at `xi` and the input at
/// `ui`.
fn push_stage_block(h: &mut SparseMatrix, xi: usize, ui: usize, n: usize, c: &Matrix) {
    let idx = |a: usize| if a < n { xi + a } else { ui + a - n };
    for a in 0..c.nrows() {
        for b in 0..c.ncols() {
            h.push(idx(a), idx(b), c[(a, b)]);
        }
    }
}

impl Transcription<'_> {
    /// Positive semidefinite part of `sign * sum_i w_i grad^2 f_i(x, u)` by
    /// central differences of the Jacobians.
    fn dynamics_curvature(&self, z: &[f64], xi: usize, ui: usize, w: &[f64], sign: f64) -> Matrix {
        let (n, m) = (self.layout.n, self.layout.m);
        let wv = Vector::from_column_slice(w);
        let mut point = slice(z, xi, n)
            .iter()
            .chain(slice(z, ui, m).iter())
            .copied()
            .collect::<Vec<_>>();
        let grad = |p: &[f64]| -> Vector {
            let (a, b) = self.spec.model.jacobians(
                &Vector::from_column_slice(&p[..n]),
                &Vector::from_column_slice(&p[n..]),
            );
            let mut g = Vector::zeros(n + m);
            g.rows_mut(0, n).copy_from(&(a.transpose() * &wv));
            g.rows_mut(n, m).copy_from(&(b.transpose() * &wv));
            g
        };
        let mut c = Matrix::zeros(n + m, n + m);
        for j in 0..n + m {
            let v = point[j];
            let step = 1e-6 * v.abs().max(1.0);
            point[j] = v + step;
            let gp = grad(&point);
            point[j] = v - step;
            let gm = grad(&point);
            point[j] = v;
            c.set_column(j, &((gp - gm) * (sign / (2.0 * step))));
        }
        let sym = (&c + c.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let clipped = eig.eigenvalues.map(|e| e.max(0.0));
        &eig.eigenvectors * Matrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
    }

    fn layout_ref(&self) -> &Layout {
        &self.layout
    }
}

/// Default initial guess: the equilibrium nearest to `x0` (by projection),
/// clamped into `Z_r`, held at its input.
pub fn default_guess(spec: &OcpSpec, x0: &Vector) -> Guess {
    let reference = match &spec.mode {
        Mode::Standard(r) => r.clone(),
        Mode::Tracking => {
            // Equilibrium closest to x0: projections from x0 at a few input
            // levels, then sampled equilibria.
            let x_in = spec.cs.reference_state_box().clamp(x0);
            let ub = spec.cs.reference_input_box();
            let mut cands: Vec<Reference> = (0..=4)
                .filter_map(|i| {
                    let u = &ub.lower + (&ub.upper - &ub.lower) * (i as f64 / 4.0);
                    project_to_manifold(&spec.model, &x_in, &u).ok()
                })
                .filter(|r| spec.cs.in_reference_box(&r.x, &r.u))
                .collect();
            if cands.is_empty() {
                cands = sample_references(&spec.model, &spec.cs, 64);
            }
            cands
                .into_iter()
                .min_by(|a, b| (&a.x - x0).norm().total_cmp(&(&b.x - x0).norm()))
                .unwrap_or_else(|| Reference::from_stacked(&spec.cs.zr.center(), spec.cs.n))
        }
    };
    Guess {
        u_seq: vec![reference.u.clone(); spec.horizon],
        reference,
    }
}

/// Solves the problem at `x0`, from `guess` or the default guess.
pub fn solve(spec: &OcpSpec, x0: &Vector, guess: Option<&Guess>) -> Result<OcpSolution, OcpError> {
    let tr = Transcription::new(spec, x0)?;
    let default;
    let guess = match guess {
        Some(g) => g,
        None => {
            default = default_guess(spec, x0);
            &default
        }
    };
    let z0 = tr.initial_point(x0, guess);
    let res = nlp::solve(&tr, &z0, &spec.settings);
    let (x_seq, u_seq, r_opt) = tr.unpack(&res.z);
    let status = match res.status {
        SqpStatus::Converged => OcpStatus::Optimal,
        SqpStatus::Infeasible => OcpStatus::Infeasible,
        SqpStatus::MaxIter | SqpStatus::Stalled => OcpStatus::MaxIter,
    };
    Ok(OcpSolution {
        u_seq,
        x_seq,
        r_opt,
        objective: res.objective,
        status,
        kkt_residual: res.kkt_residual,
        violation: res.violation,
        sqp_iters: res.iterations,
    })
}

/// Optimal values `(V_N, W_N)` of the tracking and the standard problem.
pub fn value_pair(
    tracking: &OcpSpec,
    standard: &OcpSpec,
    x0: &Vector,
) -> Result<(f64, f64), OcpError> {
    let v = solve(tracking, x0, None)?;
    if v.status != OcpStatus::Optimal {
        return Err(OcpError::NotOptimal(v.status));
    }
    let w = solve(standard, x0, None)?;
    if w.status != OcpStatus::Optimal {
        return Err(OcpError::NotOptimal(w.status));
    }
    Ok((v.objective, w.objective))
}

#[derive(Debug, Clone)]
pub struct MultistartReport {
    pub best: OcpSolution,
    /// Objectives of the optimal runs, nominal start first.
    pub objectives: Vec<f64>,
    /// Spread of optimal objectives exceeds `1e-4`.
    pub disagreement: bool,
}

/// Nominal solve plus `starts` solves from random equilibria in `Z_r`.
pub fn multistart(
    spec: &OcpSpec,
    x0: &Vector,
    starts: usize,
    seed: u64,
) -> Result<MultistartReport, OcpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = solve(spec, x0, None)?;
    let mut objectives = Vec::new();
    if best.status == OcpStatus::Optimal {
        objectives.push(best.objective);
    }
    if spec.is_tracking() {
        let n = spec.cs.n;
        for _ in 0..starts {
            let z = Vector::from_iterator(
                n + spec.cs.m,
                (0..n + spec.cs.m)
                    .map(|i| rng.gen_range(spec.cs.zr.lower[i]..=spec.cs.zr.upper[i])),
            );
            let r = Reference::from_stacked(&z, n);
            let r = project_to_manifold(&spec.model, &r.x, &r.u)
                .ok()
                .filter(|p| spec.cs.in_reference_box(&p.x, &p.u))
                .unwrap_or(r);
            let guess = Guess {
                u_seq: vec![r.u.clone(); spec.horizon],
                reference: r,
            };
            let sol = solve(spec, x0, Some(&guess))?;
            if sol.status == OcpStatus::Optimal {
                objectives.push(sol.objective);
                if best.status != OcpStatus::Optimal || sol.objective < best.objective {
                    best = sol;
                }
            }
        }
    }
    let lo = objectives.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MultistartReport {
        best,
        disagreement: objectives.len() > 1 && hi - lo > 1e-4,
        objectives,
    })
}
