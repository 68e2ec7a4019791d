//! Primal active-set solver for sparse convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A x  = b
//!                 C x <= c
//!                 l <= x <= u
//! ```
//!
//! Every working-set subproblem is an equality-constrained QP whose KKT matrix
//! is assembled in the order given by the per-variable and per-row band keys
//! and factored with [`BandLu`](crate::linalg::BandLu). Stage-wise keys from an
//! optimal-control transcription make that matrix banded.
//!
//! The solver starts from any point inside the bounds. While the equality rows
//! are still violated it moves along the segment towards the working-set
//! minimizer, which shrinks the residual linearly, so no separate feasible
//! starting point is needed. When the working set becomes inconsistent the
//! problem is re-solved in elastic form (an l1 penalty on slacks for every
//! general constraint); a slack left above [`QpSettings::infeasibility_tol`]
//! marks the QP infeasible.

use crate::linalg::{solve_refined, BandLu, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkingSet {
    pub bounds: Vec<BoundState>,
    pub ineq: Vec<bool>,
}

impl WorkingSet {
    pub fn empty(nvars: usize, nineq: usize) -> Self {
        Self {
            bounds: vec![BoundState::Free; nvars],
            ineq: vec![false; nineq],
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric, both triangles stored.
    pub hessian: SparseMatrix,
    pub gradient: Vec<f64>,
    pub eq: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq: SparseMatrix,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Ordering keys for the KKT assembly. Unknowns are sorted by
    /// `(key, variables before rows, index)`.
    pub var_keys: Vec<usize>,
    pub eq_keys: Vec<usize>,
    pub ineq_keys: Vec<usize>,
}

impl QpProblem {
    pub fn nvars(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.hessian.mul_vec(x);
        x.iter()
            .zip(&hx)
            .zip(&self.gradient)
            .map(|((xi, hi), gi)| 0.5 * xi * hi + gi * xi)
            .sum()
    }

    /// Maximum violation of equalities, inequalities and bounds at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let ax = self.eq.mul_vec(x);
        let cx = self.ineq.mul_vec(x);
        let mut v = 0.0f64;
        for (a, b) in ax.iter().zip(&self.eq_rhs) {
            v = v.max((a - b).abs());
        }
        for (c, d) in cx.iter().zip(&self.ineq_rhs) {
            v = v.max(c - d);
        }
        for i in 0..x.len() {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        v
    }

    fn check(&self) {
        let n = self.nvars();
        assert_eq!(self.hessian.nrows, n);
        assert_eq!(self.hessian.ncols, n);
        assert_eq!(self.eq.ncols, n);
        assert_eq!(self.ineq.ncols, n);
        assert_eq!(self.eq.nrows, self.eq_rhs.len());
        assert_eq!(self.ineq.nrows, self.ineq_rhs.len());
        assert_eq!(self.lower.len(), n);
        assert_eq!(self.upper.len(), n);
        assert_eq!(self.var_keys.len(), n);
        assert_eq!(self.eq_keys.len(), self.eq_rhs.len());
        assert_eq!(self.ineq_keys.len(), self.ineq_rhs.len());
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Elastic slack above this value declares the QP infeasible.
    pub infeasibility_tol: f64,
    /// Relative tolerance on negative multipliers.
    pub multiplier_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            infeasibility_tol: 1e-6,
            multiplier_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QpStatus {
    Optimal,
    /// No point satisfies the constraints; the returned iterate minimizes the
    /// l1 norm of the constraint violation.
    Infeasible {
        violation: f64,
    },
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
    /// Non-negative at an optimum.
    pub ineq_multipliers: Vec<f64>,
    /// Signed bound multipliers: positive at an active lower bound, negative
    /// at an active upper bound.
    pub bound_multipliers: Vec<f64>,
    pub working_set: WorkingSet,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("active-set iteration limit ({0}) reached")]
    MaxIter(usize),
    #[error("KKT system singular in elastic mode")]
    Singular,
}

#[derive(Debug)]
enum PhaseFailure {
    Singular,
    MaxIter,
}

/// Solves the QP, starting from `start` (clamped into the bounds) and the
/// optional working-set guess.
pub fn solve(
    qp: &QpProblem,
    start: Option<&[f64]>,
    hint: Option<&WorkingSet>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    qp.check();
    let n = qp.nvars();
    let mut x0: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => vec![0.0; n],
    };
    let mut iterations = 0;
    // A hinted working set can be linearly dependent at the new point; fall
    // back to a cold start before going elastic.
    let hints: &[Option<&WorkingSet>] = if hint.is_some() {
        &[hint, None]
    } else {
        &[None]
    };
    for h in hints {
        let mut x = x0.clone();
        let ws0 = initial_working_set(qp, &mut x, *h);
        match ActiveSet::new(qp, settings).run(x, ws0, &mut iterations) {
            Ok(sol) => return Ok(sol.with_iterations(iterations)),
            Err(PhaseFailure::MaxIter) => return Err(QpError::MaxIter(settings.max_iter)),
            Err(PhaseFailure::Singular) => {}
        }
    }
    for i in 0..n {
        x0[i] = x0[i].clamp(qp.lower[i], qp.upper[i]);
    }
    elastic_solve(qp, &x0, settings, &mut iterations)
}

fn initial_working_set(qp: &QpProblem, x: &mut [f64], hint: Option<&WorkingSet>) -> WorkingSet {
    let n = qp.nvars();
    let mut ws = WorkingSet::empty(n, qp.ineq_rhs.len());
    for i in 0..n {
        x[i] = x[i].clamp(qp.lower[i], qp.upper[i]);
        if qp.lower[i] == qp.upper[i] {
            ws.bounds[i] = BoundState::Lower;
            continue;
        }
        if let Some(h) = hint {
            match h.bounds[i] {
                BoundState::Lower if qp.lower[i].is_finite() => {
                    ws.bounds[i] = BoundState::Lower;
                    x[i] = qp.lower[i];
                }
                BoundState::Upper if qp.upper[i].is_finite() => {
                    ws.bounds[i] = BoundState::Upper;
                    x[i] = qp.upper[i];
                }
                _ => {}
            }
        }
    }
    // Rows violated at the start must be enforced by the target point, so
    // they enter the working set together with the hinted ones.
    let cx = qp.ineq.mul_vec(x);
    for j in 0..qp.ineq_rhs.len() {
        let hinted = hint.map(|h| h.ineq[j]).unwrap_or(false);
        if hinted || cx[j] > qp.ineq_rhs[j] {
            ws.ineq[j] = true;
        }
    }
    ws
}

impl QpSolution {
    fn with_iterations(mut self, it: usize) -> Self {
        self.iterations = it;
        self
    }
}

/// Solves the working-set KKT system after symmetric Ruiz equilibration; the
/// weights differ by orders of magnitude between cost and constraint rows.
fn solve_kkt(
    dim: usize,
    entries: &[(usize, usize, f64)],
    rhs: &[f64],
    order: &[(usize, u8, Unknown)],
) -> Result<Vec<f64>, PhaseFailure> {
    let mut d = vec![1.0f64; dim];
    for _ in 0..4 {
        let mut row_max = vec![0.0f64; dim];
        for &(i, j, v) in entries {
            row_max[i] = row_max[i].max((d[i] * v * d[j]).abs());
        }
        for (di, m) in d.iter_mut().zip(&row_max) {
            if *m > 0.0 {
                *di /= m.sqrt();
            }
        }
    }
    let scaled: Vec<(usize, usize, f64)> = entries
        .iter()
        .map(|&(i, j, v)| (i, j, d[i] * v * d[j]))
        .collect();
    let b: Vec<f64> = rhs.iter().zip(&d).map(|(r, di)| r * di).collect();
    let y = match solve_refined(dim, &scaled, &b) {
        Ok(y) => y,
        Err(_) => solve_dependent(dim, &scaled, &b, order)?,
    };
    Ok(y.iter().zip(&d).map(|(yi, di)| yi * di).collect())
}

/// Solves a KKT system whose working rows are linearly dependent: factor with
/// a small negative diagonal on the multiplier block, refine against the
/// original matrix and reject the result unless the system was consistent.
fn solve_dependent(
    dim: usize,
    entries: &[(usize, usize, f64)],
    rhs: &[f64],
    order: &[(usize, u8, Unknown)],
) -> Result<Vec<f64>, PhaseFailure> {
    let delta = 1e-10;
    let mut reg = entries.to_vec();
    for (p, u) in order.iter().enumerate() {
        if !matches!(u.2, Unknown::Var(_)) {
            reg.push((p, p, -delta));
        }
    }
    let lu = BandLu::factor(dim, &reg).map_err(|_| PhaseFailure::Singular)?;
    let mut x = rhs.to_vec();
    lu.solve_in_place(&mut x);
    for _ in 0..10 {
        let mut r = rhs.to_vec();
        let mut mag: Vec<f64> = rhs.iter().map(|b| b.abs()).collect();
        for &(i, j, v) in entries {
            r[i] -= v * x[j];
            mag[i] += (v * x[j]).abs();
        }
        // Rows that vanish entirely are judged against the system's scale.
        let floor = 1e-15 * mag.iter().fold(0.0f64, |a, m| a.max(*m));
        if r.iter()
            .zip(&mag)
            .all(|(ri, m)| ri.abs() <= 1e-11 * m + floor)
        {
            return Ok(x);
        }
        lu.solve_in_place(&mut r);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
    }
    Err(PhaseFailure::Singular)
}

struct ActiveSet<'a> {
    qp: &'a QpProblem,
    settings: &'a QpSettings,
    h_rows: Vec<Vec<(usize, f64)>>,
    a_rows: Vec<Vec<(usize, f64)>>,
    c_rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Unknown {
    Var(usize),
    Eq(usize),
    Ineq(usize),
}

impl<'a> ActiveSet<'a> {
    fn new(qp: &'a QpProblem, settings: &'a QpSettings) -> Self {
        Self {
            qp,
            settings,
            h_rows: qp.hessian.rows(),
            a_rows: qp.eq.rows(),
            c_rows: qp.ineq.rows(),
        }
    }

    fn bound_value(&self, i: usize, state: BoundState) -> f64 {
        match state {
            BoundState::Lower => self.qp.lower[i],
            BoundState::Upper => self.qp.upper[i],
            BoundState::Free => unreachable!(),
        }
    }

    /// Minimizer of the QP restricted to the working set, with multipliers of
    /// the equality rows and the active inequality rows.
    fn solve_subproblem(
        &self,
        ws: &WorkingSet,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), PhaseFailure> {
        let qp = self.qp;
        let n = qp.nvars();
        let mut order: Vec<(usize, u8, Unknown)> = Vec::new();
        let mut fixed = vec![None; n];
        for i in 0..n {
            match ws.bounds[i] {
                BoundState::Free => order.push((qp.var_keys[i], 0, Unknown::Var(i))),
                s => fixed[i] = Some(self.bound_value(i, s)),
            }
        }
        for r in 0..qp.eq_rhs.len() {
            order.push((qp.eq_keys[r], 1, Unknown::Eq(r)));
        }
        for j in 0..qp.ineq_rhs.len() {
            if ws.ineq[j] {
                order.push((qp.ineq_keys[j], 1, Unknown::Ineq(j)));
            }
        }
        order.sort();
        let dim = order.len();
        let mut pos_var = vec![usize::MAX; n];
        let mut pos_eq = vec![usize::MAX; qp.eq_rhs.len()];
        let mut pos_in = vec![usize::MAX; qp.ineq_rhs.len()];
        for (p, u) in order.iter().enumerate() {
            match u.2 {
                Unknown::Var(i) => pos_var[i] = p,
                Unknown::Eq(r) => pos_eq[r] = p,
                Unknown::Ineq(j) => pos_in[j] = p,
            }
        }
        let mut entries = Vec::new();
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            let pi = pos_var[i];
            if pi == usize::MAX {
                continue;
            }
            rhs[pi] -= qp.gradient[i];
            for &(j, v) in &self.h_rows[i] {
                match fixed[j] {
                    Some(xj) => rhs[pi] -= v * xj,
                    None => entries.push((pi, pos_var[j], v)),
                }
            }
        }
        for (r, row) in self.a_rows.iter().enumerate() {
            let pr = pos_eq[r];
            rhs[pr] += qp.eq_rhs[r];
            for &(j, v) in row {
                match fixed[j] {
                    Some(xj) => rhs[pr] -= v * xj,
                    None => {
                        entries.push((pr, pos_var[j], v));
                        entries.push((pos_var[j], pr, v));
                    }
                }
            }
        }
        for (k, row) in self.c_rows.iter().enumerate() {
            let pk = pos_in[k];
            if pk == usize::MAX {
                continue;
            }
            rhs[pk] += qp.ineq_rhs[k];
            for &(j, v) in row {
                match fixed[j] {
                    Some(xj) => rhs[pk] -= v * xj,
                    None => {
                        entries.push((pk, pos_var[j], v));
                        entries.push((pos_var[j], pk, v));
                    }
                }
            }
        }
        if dim == 0 {
            let x = fixed.iter().map(|f| f.unwrap()).collect();
            return Ok((x, vec![], vec![0.0; qp.ineq_rhs.len()]));
        }
        let sol = solve_kkt(dim, &entries, &rhs, &order)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(PhaseFailure::Singular);
        }
        let x: Vec<f64> = (0..n)
            .map(|i| fixed[i].unwrap_or_else(|| sol[pos_var[i]]))
            .collect();
        let lam: Vec<f64> = pos_eq.iter().map(|&p| sol[p]).collect();
        let mu: Vec<f64> = pos_in
            .iter()
            .map(|&p| if p == usize::MAX { 0.0 } else { sol[p] })
            .collect();
        Ok((x, lam, mu))
    }

    fn run(
        &self,
        mut x: Vec<f64>,
        mut ws: WorkingSet,
        iterations: &mut usize,
    ) -> Result<QpSolution, PhaseFailure> {
        let qp = self.qp;
        let n = qp.nvars();
        let mi = qp.ineq_rhs.len();
        let gscale = qp
            .gradient
            .iter()
            .fold(1.0f64, |a, g| a.max(g.abs()))
            .max(qp.hessian.max_abs());
        let mult_tol = self.settings.multiplier_tol * gscale;
        loop {
            *iterations += 1;
            if *iterations > self.settings.max_iter {
                return Err(PhaseFailure::MaxIter);
            }
            let (target, lam, mu) = self.solve_subproblem(&ws)?;
            let step: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let pscale = step.iter().fold(0.0f64, |a, p| a.max(p.abs()));
            let tiny = 1e-13 * pscale.max(1e-300);

            // Ratio test; the lowest index wins ties.
            let mut t_block = 1.0;
            let mut blocking: Option<Unknown> = None;
            for i in 0..n {
                if ws.bounds[i] != BoundState::Free {
                    continue;
                }
                let p = step[i];
                let t = if p < -tiny && qp.lower[i].is_finite() {
                    ((qp.lower[i] - x[i]) / p).max(0.0)
                } else if p > tiny && qp.upper[i].is_finite() {
                    ((qp.upper[i] - x[i]) / p).max(0.0)
                } else {
                    continue;
                };
                if t < t_block {
                    t_block = t;
                    blocking = Some(Unknown::Var(i));
                }
            }
            if mi > 0 {
                for (j, row) in self.c_rows.iter().enumerate() {
                    if ws.ineq[j] {
                        continue;
                    }
                    let cp: f64 = row.iter().map(|&(k, v)| v * step[k]).sum();
                    let cnorm = row.iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
                    if cp <= tiny * cnorm.max(1.0) {
                        continue;
                    }
                    let cx: f64 = row.iter().map(|&(k, v)| v * x[k]).sum();
                    let t = ((qp.ineq_rhs[j] - cx) / cp).max(0.0);
                    if t < t_block {
                        t_block = t;
                        blocking = Some(Unknown::Ineq(j));
                    }
                }
            }

            if let Some(b) = blocking {
                for i in 0..n {
                    x[i] += t_block * step[i];
                }
                match b {
                    Unknown::Var(i) => {
                        let s = if step[i] < 0.0 {
                            BoundState::Lower
                        } else {
                            BoundState::Upper
                        };
                        x[i] = self.bound_value(i, s);
                        ws.bounds[i] = s;
                    }
                    Unknown::Ineq(j) => ws.ineq[j] = true,
                    Unknown::Eq(_) => unreachable!(),
                }
                continue;
            }

            x = target;
            // Bound multipliers from stationarity.
            let hx = qp.hessian.mul_vec(&x);
            let at = qp.eq.tr_mul_vec(&lam);
            let ct = qp.ineq.tr_mul_vec(&mu);
            let reduced: Vec<f64> = (0..n)
                .map(|i| hx[i] + qp.gradient[i] + at[i] + ct[i])
                .collect();
            let mut worst = -mult_tol;
            let mut drop: Option<Unknown> = None;
            for i in 0..n {
                let m = match ws.bounds[i] {
                    BoundState::Free => continue,
                    _ if qp.lower[i] == qp.upper[i] => continue,
                    BoundState::Lower => reduced[i],
                    BoundState::Upper => -reduced[i],
                };
                if m < worst {
                    worst = m;
                    drop = Some(Unknown::Var(i));
                }
            }
            for j in 0..mi {
                if ws.ineq[j] && mu[j] < worst {
                    worst = mu[j];
                    drop = Some(Unknown::Ineq(j));
                }
            }
            match drop {
                Some(Unknown::Var(i)) => ws.bounds[i] = BoundState::Free,
                Some(Unknown::Ineq(j)) => ws.ineq[j] = false,
                Some(Unknown::Eq(_)) => unreachable!(),
                None => {
                    let bound_multipliers = (0..n)
                        .map(|i| match ws.bounds[i] {
                            BoundState::Free => 0.0,
                            _ => reduced[i],
                        })
                        .collect();
                    return Ok(QpSolution {
                        x,
                        eq_multipliers: lam,
                        ineq_multipliers: mu,
                        bound_multipliers,
                        working_set: ws,
                        status: QpStatus::Optimal,
                        iterations: 0,
                    });
                }
            }
        }
    }
}

/// Elastic reformulation: every equality row gets a pair of non-negative
/// slacks and every inequality row one, all penalized in l1.
fn elastic_solve(
    qp: &QpProblem,
    start: &[f64],
    settings: &QpSettings,
    iterations: &mut usize,
) -> Result<QpSolution, QpError> {
    let n = qp.nvars();
    let me = qp.eq_rhs.len();
    let mi = qp.ineq_rhs.len();
    let scale = qp
        .gradient
        .iter()
        .fold(1.0f64, |a, g| a.max(g.abs()))
        .max(qp.hessian.max_abs());
    let mut last = None;
    for penalty in [1e6 * scale, 1e10 * scale] {
        let ext = elastic_problem(qp, penalty, 1e-6 * scale);
        let mut x = start.to_vec();
        for i in 0..n {
            x[i] = x[i].clamp(qp.lower[i], qp.upper[i]);
        }
        let ax = qp.eq.mul_vec(&x);
        let cx = qp.ineq.mul_vec(&x);
        x.extend((0..me).map(|r| (qp.eq_rhs[r] - ax[r]).max(0.0)));
        x.extend((0..me).map(|r| (ax[r] - qp.eq_rhs[r]).max(0.0)));
        x.extend((0..mi).map(|j| (cx[j] - qp.ineq_rhs[j]).max(0.0)));
        let mut ws = WorkingSet::empty(ext.nvars(), mi);
        for i in 0..ext.nvars() {
            if i < n && ext.lower[i] != ext.upper[i] {
                continue;
            }
            if x[i] == ext.lower[i] {
                ws.bounds[i] = BoundState::Lower;
            } else if x[i] == ext.upper[i] {
                ws.bounds[i] = BoundState::Upper;
            }
        }
        let sol = match ActiveSet::new(&ext, settings).run(x, ws, iterations) {
            Ok(s) => s,
            Err(PhaseFailure::MaxIter) => return Err(QpError::MaxIter(settings.max_iter)),
            Err(PhaseFailure::Singular) => return Err(QpError::Singular),
        };
        let slack: f64 = sol.x[n..].iter().sum();
        let max_slack = sol.x[n..].iter().fold(0.0f64, |a, s| a.max(*s));
        let mut bounds = sol.working_set.bounds.clone();
        bounds.truncate(n);
        let out = QpSolution {
            x: sol.x[..n].to_vec(),
            eq_multipliers: sol.eq_multipliers,
            ineq_multipliers: sol.ineq_multipliers,
            bound_multipliers: sol.bound_multipliers[..n].to_vec(),
            working_set: WorkingSet {
                bounds,
                ineq: sol.working_set.ineq,
            },
            status: if max_slack <= settings.infeasibility_tol {
                QpStatus::Optimal
            } else {
                QpStatus::Infeasible { violation: slack }
            },
            iterations: *iterations,
        };
        if out.status == QpStatus::Optimal {
            // Clean up residual slack with an ordinary solve from this point.
            let mut it2 = 0;
            if let Ok(polished) =
                ActiveSet::new(qp, settings).run(out.x.clone(), out.working_set.clone(), &mut it2)
            {
                *iterations += it2;
                return Ok(polished.with_iterations(*iterations));
            }
            return Ok(out);
        }
        last = Some(out);
    }
    Ok(last.expect("at least one elastic pass"))
}

fn elastic_problem(qp: &QpProblem, penalty: f64, curvature: f64) -> QpProblem {
    let n = qp.nvars();
    let me = qp.eq_rhs.len();
    let mi = qp.ineq_rhs.len();
    let total = n + 2 * me + mi;
    let mut hessian = SparseMatrix::new(total, total);
    hessian.entries = qp.hessian.entries.clone();
    for k in n..total {
        hessian.push(k, k, curvature);
    }
    let mut gradient = qp.gradient.clone();
    gradient.extend(std::iter::repeat_n(penalty, total - n));
    let mut eq = SparseMatrix::new(me, total);
    eq.entries = qp.eq.entries.clone();
    for r in 0..me {
        eq.push(r, n + r, 1.0);
        eq.push(r, n + me + r, -1.0);
    }
    let mut ineq = SparseMatrix::new(mi, total);
    ineq.entries = qp.ineq.entries.clone();
    for j in 0..mi {
        ineq.push(j, n + 2 * me + j, -1.0);
    }
    let mut lower = qp.lower.clone();
    lower.extend(std::iter::repeat_n(0.0, total - n));
    let mut upper = qp.upper.clone();
    upper.extend(std::iter::repeat_n(f64::INFINITY, total - n));
    let mut var_keys = qp.var_keys.clone();
    var_keys.extend(&qp.eq_keys);
    var_keys.extend(&qp.eq_keys);
    var_keys.extend(&qp.ineq_keys);
    QpProblem {
        hessian,
        gradient,
        eq,
        eq_rhs: qp.eq_rhs.clone(),
        ineq,
        ineq_rhs: qp.ineq_rhs.clone(),
        lower,
        upper,
        var_keys,
        eq_keys: qp.eq_keys.clone(),
        ineq_keys: qp.ineq_keys.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense(rows: &[&[f64]]) -> SparseMatrix {
        let mut m = SparseMatrix::new(rows.len(), rows.first().map_or(0, |r| r.len()));
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m.push(i, j, *v);
            }
        }
        m
    }

    fn problem(
        h: &[&[f64]],
        g: &[f64],
        a: &[&[f64]],
        b: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> QpProblem {
        let n = g.len();
        let mut eq = dense(a);
        eq.ncols = n;
        QpProblem {
            hessian: dense(h),
            gradient: g.to_vec(),
            eq,
            eq_rhs: b.to_vec(),
            ineq: SparseMatrix::new(0, n),
            ineq_rhs: vec![],
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            var_keys: vec![0; n],
            eq_keys: vec![0; b.len()],
            ineq_keys: vec![],
        }
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = problem(
            &[&[2.0, 0.0], &[0.0, 4.0]],
            &[-2.0, -4.0],
            &[],
            &[],
            &[-10.0; 2],
            &[10.0; 2],
        );
        let sol = solve(&qp, None, None, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn active_bound_has_positive_multiplier() {
        // min (x-2)^2 s.t. x <= 1
        let qp = problem(&[&[2.0]], &[-4.0], &[], &[], &[-5.0], &[1.0]);
        let sol = solve(&qp, None, None, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-14);
        assert_eq!(sol.working_set.bounds[0], BoundState::Upper);
        // reduced gradient 2*1 - 4 = -2, i.e. upper multiplier 2
        assert_abs_diff_eq!(sol.bound_multipliers[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_and_bounds() {
        // min x^2 + y^2 s.t. x + y = 2, y <= 0.5
        let qp = problem(
            &[&[2.0, 0.0], &[0.0, 2.0]],
            &[0.0, 0.0],
            &[&[1.0, 1.0]],
            &[2.0],
            &[-5.0, -5.0],
            &[5.0, 0.5],
        );
        let sol = solve(&qp, Some(&[-5.0, -5.0]), None, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn general_inequality_row() {
        // min (x-1)^2 + (y-1)^2 s.t. x + y <= 1
        let mut qp = problem(
            &[&[2.0, 0.0], &[0.0, 2.0]],
            &[-2.0, -2.0],
            &[],
            &[],
            &[-5.0, -5.0],
            &[5.0, 5.0],
        );
        qp.ineq = dense(&[&[1.0, 1.0]]);
        qp.ineq_rhs = vec![1.0];
        qp.ineq_keys = vec![0];
        let sol = solve(&qp, None, None, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.ineq_multipliers[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        // x = 1 and x = 0
        let qp = problem(
            &[&[1.0]],
            &[0.0],
            &[&[1.0], &[1.0]],
            &[1.0, 0.0],
            &[-5.0],
            &[5.0],
        );
        let sol = solve(&qp, None, None, &QpSettings::default()).unwrap();
        match sol.status {
            QpStatus::Infeasible { violation } => {
                assert_abs_diff_eq!(violation, 1.0, epsilon = 1e-6)
            }
            s => panic!("expected infeasible, got {s:?}"),
        }
    }

    #[test]
    fn equality_outside_bounds_is_infeasible() {
        // x = 3 with x in [-1, 1]
        let qp = problem(&[&[1.0]], &[0.0], &[&[1.0]], &[3.0], &[-1.0], &[1.0]);
        let sol = solve(&qp, None, None, &QpSettings::default()).unwrap();
        match sol.status {
            QpStatus::Infeasible { violation } => {
                assert_abs_diff_eq!(violation, 2.0, epsilon = 1e-6);
                assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
            }
            s => panic!("expected infeasible, got {s:?}"),
        }
    }

    #[test]
    fn warm_start_with_correct_working_set() {
        let qp = problem(&[&[2.0]], &[-4.0], &[], &[], &[-5.0], &[1.0]);
        let hint = WorkingSet {
            bounds: vec![BoundState::Upper],
            ineq: vec![],
        };
        let sol = solve(&qp, None, Some(&hint), &QpSettings::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-14);
    }
}
