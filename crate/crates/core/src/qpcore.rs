//! Small dense convex QP solver: `min ½xᵀQx + cᵀx` subject to `A_eq x = b_eq`,
//! `A x ≤ b` and simple bounds.
//!
//! Primal active-set method. Equalities always stay in the working set and are
//! eliminated through a null-space basis; a feasible start is found with an
//! elastic phase one that relaxes every inequality by a common slack `t ≥ 0`.
//! Positive semidefinite Hessians get `1e-10·I` added; directions of
//! (numerically) zero curvature are followed as rays to the next blocking
//! constraint.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR, SVD};
use thiserror::Error;

const REGULARIZATION: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const PHASE_ONE_WEIGHT: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
    #[error("hessian is not symmetric")]
    NotSymmetric,
    #[error("hessian is not positive semidefinite (min eigenvalue {0:e})")]
    NotConvex(f64),
    #[error("variable {0} has lower bound above upper bound")]
    EmptyBounds(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Rows `a·x ≤ b`.
    pub ineq: Vec<LinearRow>,
    /// Rows `a·x = b`.
    pub eq: Vec<LinearRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadProgram {
    /// Unconstrained zero program in `dim` variables.
    pub fn new(dim: usize) -> Self {
        QuadProgram {
            hessian: DMatrix::zeros(dim, dim),
            linear: DVector::zeros(dim),
            ineq: Vec::new(),
            eq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn add_ineq(&mut self, coeffs: Vec<f64>, rhs: f64) -> usize {
        self.ineq.push(LinearRow { coeffs, rhs });
        self.ineq.len() - 1
    }

    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) -> usize {
        self.eq.push(LinearRow { coeffs, rhs });
        self.eq.len() - 1
    }

    /// Sparse helper: `Σ coeff·x[idx] ≤ rhs`.
    pub fn add_ineq_sparse(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let coeffs = self.dense(terms);
        self.add_ineq(coeffs, rhs)
    }

    pub fn add_eq_sparse(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let coeffs = self.dense(terms);
        self.add_eq(coeffs, rhs)
    }

    fn dense(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.dim()];
        for &(j, v) in terms {
            coeffs[j] += v;
        }
        coeffs
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * (xv.transpose() * &self.hessian * &xv)[(0, 0)] + self.linear.dot(&xv)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::Dimension(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.hessian.nrows(),
                self.hessian.ncols()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension("bound vectors".into()));
        }
        for (name, rows) in [("inequality", &self.ineq), ("equality", &self.eq)] {
            for (k, row) in rows.iter().enumerate() {
                if row.coeffs.len() != n {
                    return Err(QpError::Dimension(format!("{name} row {k} has {} coefficients", row.coeffs.len())));
                }
                if !row.rhs.is_finite() || row.coeffs.iter().any(|v| !v.is_finite()) {
                    return Err(QpError::NonFinite("constraint rows"));
                }
            }
        }
        if self.hessian.iter().chain(self.linear.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("objective"));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(QpError::NonFinite("bounds"));
            }
            if self.lower[j] > self.upper[j] {
                return Err(QpError::EmptyBounds(j));
            }
        }
        let scale = self.hessian.amax().max(1.0);
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-9 * scale {
            return Err(QpError::NotSymmetric);
        }
        Ok(())
    }

    /// Plain-text dump for replaying a program outside the solver.
    pub fn debug_dump(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = format!("dim {}\n", self.dim());
        for i in 0..self.dim() {
            s += &format!("Q {}\n", join(&mut self.hessian.row(i).iter().copied()));
        }
        s += &format!("c {}\n", join(&mut self.linear.iter().copied()));
        for r in &self.eq {
            s += &format!("eq {} = {}\n", join(&mut r.coeffs.iter().copied()), r.rhs);
        }
        for r in &self.ineq {
            s += &format!("le {} <= {}\n", join(&mut r.coeffs.iter().copied()), r.rhs);
        }
        s += &format!("lo {}\n", join(&mut self.lower.iter().copied()));
        s += &format!("hi {}\n", join(&mut self.upper.iter().copied()));
        s
    }
}

/// Identifies one constraint of a [`QuadProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RowRef {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

impl fmt::Display for RowRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowRef::Eq(k) => write!(f, "eq[{k}]"),
            RowRef::Ineq(k) => write!(f, "ineq[{k}]"),
            RowRef::Lower(k) => write!(f, "lower[{k}]"),
            RowRef::Upper(k) => write!(f, "upper[{k}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub duals_ineq: Vec<f64>,
    pub duals_eq: Vec<f64>,
    /// Multipliers of `x ≥ lo` (nonnegative).
    pub duals_lower: Vec<f64>,
    /// Multipliers of `x ≤ hi` (nonnegative).
    pub duals_upper: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    /// Final working set, usable as a warm start.
    pub active: Vec<RowRef>,
    /// For infeasible programs: the relaxed rows that stayed binding in phase one.
    pub violated_rows: Vec<RowRef>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart { x: self.x.clone(), active: self.active.clone() }
    }
}

/// Feasible point plus guessed active set from an earlier solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub active: Vec<RowRef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Magnitude of the most negative inequality/bound multiplier.
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual_sign)
    }
}

/// KKT residuals of `sol` measured against the unregularized program.
pub fn kkt_residuals(prog: &QuadProgram, sol: &QpSolution) -> KktResiduals {
    let n = prog.dim();
    let x = DVector::from_column_slice(&sol.x);
    let mut grad = &prog.hessian * &x + &prog.linear;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut dual_sign: f64 = 0.0;
    for (row, &lam) in prog.eq.iter().zip(&sol.duals_eq) {
        let a = DVector::from_column_slice(&row.coeffs);
        grad += &a * lam;
        primal = primal.max((a.dot(&x) - row.rhs).abs());
    }
    for (row, &lam) in prog.ineq.iter().zip(&sol.duals_ineq) {
        let a = DVector::from_column_slice(&row.coeffs);
        grad += &a * lam;
        let slack = row.rhs - a.dot(&x);
        primal = primal.max(-slack);
        comp = comp.max((lam * slack).abs());
        dual_sign = dual_sign.max(-lam);
    }
    for j in 0..n {
        grad[j] += sol.duals_upper[j] - sol.duals_lower[j];
        for (bound, lam, sign) in [(prog.lower[j], sol.duals_lower[j], -1.0), (prog.upper[j], sol.duals_upper[j], 1.0)] {
            if bound.is_finite() {
                let slack = sign * (bound - x[j]);
                primal = primal.max(-slack);
                comp = comp.max((lam * slack).abs());
            }
            dual_sign = dual_sign.max(-lam);
        }
    }
    KktResiduals { stationarity: grad.amax(), primal: primal.max(0.0), complementarity: comp, dual_sign }
}

pub fn solve_qp(prog: &QuadProgram) -> Result<QpSolution, QpError> {
    solve_qp_warm(prog, None)
}

/// Solves `prog`, optionally starting from an earlier solution of a program
/// with the same constraints.
pub fn solve_qp_warm(prog: &QuadProgram, warm: Option<&WarmStart>) -> Result<QpSolution, QpError> {
    prog.validate()?;
    let n = prog.dim();
    let rows = RowSet::from_program(prog);

    let mut g = prog.hessian.clone();
    g = (&g + g.transpose()) * 0.5;
    if n > 0 {
        let min_eig = SymmetricEigen::new(g.clone()).eigenvalues.min();
        let scale = g.amax().max(1.0);
        if min_eig < -REGULARIZATION * scale {
            return Err(QpError::NotConvex(min_eig));
        }
        if min_eig < REGULARIZATION {
            for i in 0..n {
                g[(i, i)] += REGULARIZATION;
            }
        }
    }
    let max_iter = 50 * n.max(1) + rows.len();

    // Equalities: independent subset and a least-norm point satisfying them.
    let eq_rows: Vec<usize> = (0..rows.len()).filter(|&i| rows.is_eq[i]).collect();
    let eq_basis = independent_subset(&rows, &eq_rows, &[]);
    let x0 = least_norm_point(&rows, &eq_rows, n);
    let eq_viol: Vec<usize> = eq_rows
        .iter()
        .copied()
        .filter(|&i| (rows.a.row(i).dot(&x0.transpose()) - rows.b[i]).abs() > FEAS_TOL * (1.0 + rows.b[i].abs()))
        .collect();
    if !eq_viol.is_empty() {
        return Ok(rows.infeasible(prog, x0, eq_viol.iter().map(|&i| rows.refs[i]).collect(), 0));
    }

    let mut iterations = 0;
    let (start, mut working) = match warm.filter(|w| w.x.len() == n) {
        Some(w) if rows.max_violation(&DVector::from_column_slice(&w.x)) <= FEAS_TOL => {
            let x = DVector::from_column_slice(&w.x);
            let hinted: Vec<usize> = w
                .active
                .iter()
                .filter_map(|r| rows.refs.iter().position(|q| q == r))
                .filter(|&i| !rows.is_eq[i] && rows.slack(i, &x).abs() <= FEAS_TOL)
                .collect();
            let ws = independent_subset(&rows, &hinted, &eq_basis);
            (x, [eq_basis.clone(), ws].concat())
        }
        _ => {
            let x_start = if eq_rows.is_empty() { rows.clamp_to_bounds(prog, x0) } else { x0 };
            match phase_one(&rows, x_start, &eq_basis, &mut iterations, max_iter) {
                PhaseOne::Feasible(x) => {
                    let active: Vec<usize> = (0..rows.len())
                        .filter(|&i| !rows.is_eq[i] && rows.slack(i, &x) <= FEAS_TOL * (1.0 + rows.b[i].abs()))
                        .collect();
                    let ws = independent_subset(&rows, &active, &eq_basis);
                    (x, [eq_basis.clone(), ws].concat())
                }
                PhaseOne::Infeasible(x, violated) => {
                    return Ok(rows.infeasible(prog, x, violated, iterations));
                }
                PhaseOne::Stalled(x) => {
                    let mut sol = rows.infeasible(prog, x, Vec::new(), iterations);
                    sol.status = QpStatus::IterationLimit;
                    return Ok(sol);
                }
            }
        }
    };

    let core = Core { g: &g, c: &prog.linear, rows: &rows };
    let outcome = core.run(start, &mut working, max_iter, &mut iterations);
    Ok(rows.assemble(prog, outcome, working, iterations))
}

/// All constraints as rows `a·x (≤|=) b`.
struct RowSet {
    a: DMatrix<f64>,
    b: Vec<f64>,
    is_eq: Vec<bool>,
    refs: Vec<RowRef>,
    norms: Vec<f64>,
}

impl RowSet {
    fn from_program(prog: &QuadProgram) -> Self {
        let n = prog.dim();
        let mut data: Vec<(Vec<f64>, f64, bool, RowRef)> = Vec::new();
        for (k, r) in prog.eq.iter().enumerate() {
            data.push((r.coeffs.clone(), r.rhs, true, RowRef::Eq(k)));
        }
        for (k, r) in prog.ineq.iter().enumerate() {
            data.push((r.coeffs.clone(), r.rhs, false, RowRef::Ineq(k)));
        }
        for j in 0..n {
            if prog.lower[j].is_finite() {
                let mut a = vec![0.0; n];
                a[j] = -1.0;
                data.push((a, -prog.lower[j], false, RowRef::Lower(j)));
            }
            if prog.upper[j].is_finite() {
                let mut a = vec![0.0; n];
                a[j] = 1.0;
                data.push((a, prog.upper[j], false, RowRef::Upper(j)));
            }
        }
        let a = DMatrix::from_fn(data.len(), n, |i, j| data[i].0[j]);
        let norms = (0..data.len()).map(|i| a.row(i).norm()).collect();
        RowSet {
            a,
            b: data.iter().map(|d| d.1).collect(),
            is_eq: data.iter().map(|d| d.2).collect(),
            refs: data.iter().map(|d| d.3).collect(),
            norms,
        }
    }

    fn len(&self) -> usize {
        self.b.len()
    }

    fn slack(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.b[i] - self.a.row(i).dot(&x.transpose())
    }

    fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.len())
            .map(|i| {
                let s = self.slack(i, x);
                let v = if self.is_eq[i] { s.abs() } else { -s };
                v / (1.0 + self.b[i].abs())
            })
            .fold(0.0, f64::max)
    }

    fn clamp_to_bounds(&self, prog: &QuadProgram, mut x: DVector<f64>) -> DVector<f64> {
        for j in 0..x.len() {
            x[j] = x[j].clamp(prog.lower[j], prog.upper[j]);
        }
        x
    }

    fn infeasible(&self, prog: &QuadProgram, x: DVector<f64>, violated: Vec<RowRef>, iterations: usize) -> QpSolution {
        let n = prog.dim();
        QpSolution {
            objective: prog.objective(x.as_slice()),
            x: x.as_slice().to_vec(),
            duals_ineq: vec![0.0; prog.ineq.len()],
            duals_eq: vec![0.0; prog.eq.len()],
            duals_lower: vec![0.0; n],
            duals_upper: vec![0.0; n],
            status: QpStatus::Infeasible,
            iterations,
            active: Vec::new(),
            violated_rows: violated,
        }
    }

    fn assemble(&self, prog: &QuadProgram, outcome: Outcome, working: Vec<usize>, iterations: usize) -> QpSolution {
        let n = prog.dim();
        let mut sol = QpSolution {
            objective: prog.objective(outcome.x.as_slice()),
            x: outcome.x.as_slice().to_vec(),
            duals_ineq: vec![0.0; prog.ineq.len()],
            duals_eq: vec![0.0; prog.eq.len()],
            duals_lower: vec![0.0; n],
            duals_upper: vec![0.0; n],
            status: outcome.status,
            iterations,
            active: working.iter().map(|&i| self.refs[i]).collect(),
            violated_rows: Vec::new(),
        };
        for (&i, &lam) in working.iter().zip(&outcome.lambda) {
            match self.refs[i] {
                RowRef::Eq(k) => sol.duals_eq[k] = lam,
                RowRef::Ineq(k) => sol.duals_ineq[k] = lam,
                RowRef::Lower(k) => sol.duals_lower[k] = lam,
                RowRef::Upper(k) => sol.duals_upper[k] = lam,
            }
        }
        sol
    }
}

/// Greedy Gram-Schmidt selection of rows independent of `base` and of each other.
fn independent_subset(rows: &RowSet, candidates: &[usize], base: &[usize]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let push = |v: DVector<f64>, basis: &mut Vec<DVector<f64>>| -> bool {
        let norm0 = v.norm();
        if norm0 == 0.0 {
            return false;
        }
        let mut r = v;
        for _ in 0..2 {
            for q in basis.iter() {
                let proj = q.dot(&r);
                r -= q * proj;
            }
        }
        let nr = r.norm();
        if nr > 1e-9 * norm0 {
            basis.push(r / nr);
            true
        } else {
            false
        }
    };
    for &i in base {
        push(rows.a.row(i).transpose(), &mut basis);
    }
    candidates
        .iter()
        .copied()
        .filter(|&i| push(rows.a.row(i).transpose(), &mut basis))
        .collect()
}

fn least_norm_point(rows: &RowSet, eq_rows: &[usize], n: usize) -> DVector<f64> {
    if eq_rows.is_empty() || n == 0 {
        return DVector::zeros(n);
    }
    let a = DMatrix::from_fn(eq_rows.len(), n, |i, j| rows.a[(eq_rows[i], j)]);
    let b = DVector::from_iterator(eq_rows.len(), eq_rows.iter().map(|&i| rows.b[i]));
    let svd = SVD::new(a, true, true);
    svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(n))
}

enum PhaseOne {
    Feasible(DVector<f64>),
    Infeasible(DVector<f64>, Vec<RowRef>),
    Stalled(DVector<f64>),
}

/// Elastic phase one over `(x, t)`: every inequality becomes `a·x − t ≤ b`.
fn phase_one(rows: &RowSet, x0: DVector<f64>, eq_basis: &[usize], iterations: &mut usize, max_iter: usize) -> PhaseOne {
    let n = x0.len();
    let viol = (0..rows.len())
        .filter(|&i| !rows.is_eq[i])
        .map(|i| (i, -rows.slack(i, &x0)))
        .fold((usize::MAX, 0.0), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    if viol.0 == usize::MAX || viol.1 <= 0.0 {
        return PhaseOne::Feasible(x0);
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m + 1, n + 1);
    let mut b = Vec::with_capacity(m + 1);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = rows.a[(i, j)];
        }
        if !rows.is_eq[i] {
            a[(i, n)] = -1.0;
        }
        b.push(rows.b[i]);
    }
    a[(m, n)] = -1.0;
    b.push(0.0);
    let mut is_eq = rows.is_eq.clone();
    is_eq.push(false);
    let mut refs = rows.refs.clone();
    refs.push(RowRef::Lower(usize::MAX));
    let norms = (0..=m).map(|i| a.row(i).norm()).collect();
    let relaxed = RowSet { a, b, is_eq, refs, norms };

    let g = DMatrix::identity(n + 1, n + 1) * PHASE_ONE_WEIGHT;
    let mut c = DVector::zeros(n + 1);
    for j in 0..n {
        c[j] = -PHASE_ONE_WEIGHT * x0[j];
    }
    c[n] = 1.0;
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(&x0);
    y[n] = viol.1;
    let mut working: Vec<usize> = eq_basis.to_vec();
    working.push(viol.0);

    let core = Core { g: &g, c: &c, rows: &relaxed };
    let outcome = core.run(y, &mut working, max_iter, iterations);
    let x = outcome.x.rows(0, n).into_owned();
    let t = outcome.x[n];
    match outcome.status {
        QpStatus::Optimal if t <= FEAS_TOL => PhaseOne::Feasible(x),
        QpStatus::Optimal => {
            let violated = working
                .iter()
                .zip(&outcome.lambda)
                .filter(|&(&i, &lam)| i < m && !rows.is_eq[i] && lam > 0.0)
                .map(|(&i, _)| rows.refs[i])
                .collect();
            PhaseOne::Infeasible(x, violated)
        }
        _ if t <= FEAS_TOL => PhaseOne::Feasible(x),
        _ => PhaseOne::Stalled(x),
    }
}

struct Outcome {
    x: DVector<f64>,
    lambda: Vec<f64>,
    status: QpStatus,
}

struct Core<'a> {
    g: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    rows: &'a RowSet,
}

enum Step {
    Newton(DVector<f64>),
    Ray(DVector<f64>),
}

impl Core<'_> {
    fn run(&self, mut x: DVector<f64>, working: &mut Vec<usize>, max_iter: usize, iterations: &mut usize) -> Outcome {
        let n = x.len();
        let curvature_floor = 1e-9 * self.g.amax().max(1.0);
        let mut budget = max_iter;
        loop {
            if budget == 0 {
                let lambda = self.multipliers(&x, working).unwrap_or_else(|| vec![0.0; working.len()]);
                return Outcome { x, lambda, status: QpStatus::IterationLimit };
            }
            budget -= 1;
            *iterations += 1;

            let grad = self.g * &x + self.c;
            let m = working.len();
            let (q, _r) = self.factor(working, n);
            let z = q.columns(m, n - m).into_owned();
            let step = if n == m {
                Step::Newton(DVector::zeros(n))
            } else {
                let h = z.transpose() * self.g * &z;
                let gz = z.transpose() * &grad;
                let eig = SymmetricEigen::new(h);
                let gscale = 1e-12 * (1.0 + grad.amax());
                let mut newton = DVector::zeros(n - m);
                let mut ray = DVector::zeros(n - m);
                let mut has_ray = false;
                for k in 0..(n - m) {
                    let v = eig.eigenvectors.column(k);
                    let mu = eig.eigenvalues[k];
                    let proj = v.dot(&gz);
                    if mu > curvature_floor {
                        newton -= v * (proj / mu);
                    } else if proj.abs() > gscale {
                        ray -= v * proj;
                        has_ray = true;
                    }
                }
                if has_ray {
                    Step::Ray(&z * ray)
                } else {
                    Step::Newton(&z * newton)
                }
            };

            let (p, max_alpha) = match step {
                Step::Newton(p) => {
                    if p.amax() <= 1e-12 * (1.0 + x.amax()) {
                        let Some(lambda) = self.multipliers(&x, working) else {
                            return Outcome { x, lambda: vec![0.0; m], status: QpStatus::IterationLimit };
                        };
                        // Most negative inequality multiplier leaves; lowest row on ties.
                        let mut leave: Option<(usize, f64)> = None;
                        for (pos, (&i, &lam)) in working.iter().zip(&lambda).enumerate() {
                            if self.rows.is_eq[i] {
                                continue;
                            }
                            let tol = 1e-11 * (1.0 + grad.amax());
                            if lam < -tol {
                                match leave {
                                    Some((bp, bl)) if lam > bl || (lam == bl && i > working[bp]) => {}
                                    _ => leave = Some((pos, lam)),
                                }
                            }
                        }
                        match leave {
                            None => return Outcome { x, lambda, status: QpStatus::Optimal },
                            Some((pos, _)) => {
                                working.remove(pos);
                                continue;
                            }
                        }
                    }
                    (p, 1.0)
                }
                Step::Ray(p) => (p, f64::INFINITY),
            };

            // Ratio test; lowest row index wins ties.
            let pnorm = p.norm();
            let mut alpha = max_alpha;
            let mut blocking = None;
            for i in 0..self.rows.len() {
                if self.rows.is_eq[i] || working.contains(&i) {
                    continue;
                }
                let ap = self.rows.a.row(i).dot(&p.transpose());
                if ap <= 1e-13 * self.rows.norms[i] * pnorm {
                    continue;
                }
                let a_i = (self.rows.slack(i, &x).max(0.0)) / ap;
                if a_i < alpha {
                    alpha = a_i;
                    blocking = Some(i);
                }
            }
            if !alpha.is_finite() {
                let lambda = vec![0.0; working.len()];
                return Outcome { x, lambda, status: QpStatus::Unbounded };
            }
            x += &p * alpha;
            if let Some(i) = blocking {
                working.push(i);
            }
        }
    }

    /// Householder QR of `[A_Wᵀ | I]`: the first `m` columns of `Q` span the
    /// working-set normals, the rest form a null-space basis.
    fn factor(&self, working: &[usize], n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = working.len();
        let mut aug = DMatrix::zeros(n, m + n);
        for (col, &i) in working.iter().enumerate() {
            for j in 0..n {
                aug[(j, col)] = self.rows.a[(i, j)];
            }
        }
        for j in 0..n {
            aug[(j, m + j)] = 1.0;
        }
        let qr = QR::new(aug);
        (qr.q(), qr.r())
    }

    /// Least-squares solve of `A_Wᵀ λ = −∇f`.
    fn multipliers(&self, x: &DVector<f64>, working: &[usize]) -> Option<Vec<f64>> {
        let m = working.len();
        if m == 0 {
            return Some(Vec::new());
        }
        let n = x.len();
        let grad = self.g * x + self.c;
        let (q, r) = self.factor(working, n);
        let q1 = q.columns(0, m);
        let rhs = -(q1.transpose() * grad);
        let r1 = r.view((0, 0), (m, m)).into_owned();
        r1.solve_upper_triangular(&rhs).map(|v| v.as_slice().to_vec())
    }
}
