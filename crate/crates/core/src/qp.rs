//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize     1/2 x' H x + f' x
//!     subject to   A x <= b
//!                  lb <= x <= ub
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method: start from the
//! unconstrained minimizer and add violated constraints one at a time,
//! dropping ones whose multiplier would turn negative. The primal objective
//! is non-decreasing along the iterates. `J` (with `H^-1 = J J'`) and the
//! triangular factor `R` of the active normals are maintained with Givens
//! rotations.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky_lower, dot, mat_vec, norm_inf};

/// Diagonal shift applied once when `H` fails to factor.
pub const REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub n: usize,
    /// `n x n`, row-major, symmetric positive definite.
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    /// `m x n`, row-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Use `-inf` for a free lower bound.
    pub lb: Vec<f64>,
    /// Use `+inf` for a free upper bound.
    pub ub: Vec<f64>,
}

impl QpProblem {
    /// Problem with no inequality rows and free bounds.
    pub fn unconstrained(h: Vec<f64>, f: Vec<f64>) -> Self {
        let n = f.len();
        QpProblem {
            n,
            h,
            f,
            a: Vec::new(),
            b: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn push_row(&mut self, row: &[f64], rhs: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.a.extend_from_slice(row);
        self.b.push(rhs);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; self.n];
        mat_vec(&self.h, self.n, self.n, x, &mut hx);
        0.5 * dot(x, &hx) + dot(&self.f, x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let m = self.b.len();
        let check = |what, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                })
            }
        };
        check("H", n * n, self.h.len())?;
        check("f", n, self.f.len())?;
        check("A", m * n, self.a.len())?;
        check("lb", n, self.lb.len())?;
        check("ub", n, self.ub.len())?;
        if self.h.iter().chain(&self.f).chain(&self.a).chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP data"));
        }
        if self.lb.iter().chain(&self.ub).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("QP bounds"));
        }
        let scale = norm_inf(&self.h).max(1.0);
        for i in 0..n {
            for j in i + 1..n {
                if (self.h[i * n + j] - self.h[j * n + i]).abs() > 1e-10 * scale {
                    return Err(Error::Domain("H must be symmetric"));
                }
            }
        }
        if self.lb.iter().zip(&self.ub).any(|(l, u)| l > u) {
            return Err(Error::Domain("lb must not exceed ub"));
        }
        Ok(())
    }

    /// Plain-text dump of all problem data for offline inspection.
    pub fn write_text<W: fmt::Write>(&self, out: &mut W) -> fmt::Result {
        fn block<W: fmt::Write>(out: &mut W, name: &str, data: &[f64], rows: usize, cols: usize) -> fmt::Result {
            writeln!(out, "{name} {rows} {cols}")?;
            for r in 0..rows {
                for c in 0..cols {
                    if c > 0 {
                        out.write_char(' ')?;
                    }
                    write!(out, "{:.17e}", data[r * cols + c])?;
                }
                out.write_char('\n')?;
            }
            Ok(())
        }
        writeln!(out, "# qp n={} m={}", self.n, self.m())?;
        block(out, "H", &self.h, self.n, self.n)?;
        block(out, "f", &self.f, 1, self.n)?;
        block(out, "A", &self.a, self.m(), self.n)?;
        block(out, "b", &self.b, 1, self.m())?;
        block(out, "lb", &self.lb, 1, self.n)?;
        block(out, "ub", &self.ub, 1, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    /// The active-set iteration ended but the KKT check missed `tol`.
    Inaccurate,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIter => "max_iter",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Inaccurate => "inaccurate",
        }
    }
}

/// Lagrange multipliers, all non-negative at a KKT point.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Multipliers {
            ineq: vec![0.0; m],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }
}

/// Max-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    /// Complementary slackness, folded together with any negative
    /// multiplier.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    /// Cap on active-set changes.
    pub max_iter: usize,
    /// Keep the objective after every primal step in
    /// [`QpSolution::history`].
    pub record_history: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-6,
            max_iter: 4000,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub multipliers: Multipliers,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// `H` was shifted by [`REGULARIZATION`] to factor.
    pub regularized: bool,
    /// Smallest worst-case constraint violation seen; the infeasibility
    /// diagnostic.
    pub min_violation: f64,
    pub history: Vec<f64>,
}

pub fn kkt_residuals(problem: &QpProblem, x: &[f64], mult: &Multipliers) -> KktResiduals {
    let n = problem.n;
    let m = problem.m();
    let mut grad = vec![0.0; n];
    mat_vec(&problem.h, n, n, x, &mut grad);
    for (g, f) in grad.iter_mut().zip(&problem.f) {
        *g += f;
    }
    for i in 0..m {
        if mult.ineq[i] != 0.0 {
            axpy(mult.ineq[i], problem.row(i), &mut grad);
        }
    }
    for k in 0..n {
        grad[k] += mult.upper[k] - mult.lower[k];
    }

    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..m {
        let slack = problem.b[i] - dot(problem.row(i), x);
        primal = primal.max(-slack);
        comp = comp.max((mult.ineq[i] * slack).abs()).max(-mult.ineq[i]);
    }
    for k in 0..n {
        if problem.lb[k].is_finite() {
            let slack = x[k] - problem.lb[k];
            primal = primal.max(-slack);
            comp = comp.max((mult.lower[k] * slack).abs());
        }
        if problem.ub[k].is_finite() {
            let slack = problem.ub[k] - x[k];
            primal = primal.max(-slack);
            comp = comp.max((mult.upper[k] * slack).abs());
        }
        comp = comp.max(-mult.lower[k]).max(-mult.upper[k]);
    }
    KktResiduals {
        stationarity: norm_inf(&grad),
        primal,
        complementarity: comp,
    }
}

pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    solve_qp_warm(problem, settings, None)
}

/// Like [`solve_qp`], with a hint (typically the previous receding-horizon
/// solution shifted by one step). Constraints active at the hint are tried
/// first; the optimum itself does not depend on the hint.
/// Factorization of a Hessian, reusable across problems that share it.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianFactor {
    n: usize,
    h: Vec<f64>,
    /// Column-major `n x n` with `H^-1 = J J'`.
    j: Vec<f64>,
    regularized: bool,
}

impl HessianFactor {
    /// Factor the row-major `n x n` matrix `h`, shifting its diagonal by
    /// [`REGULARIZATION`] if needed.
    pub fn new(h: &[f64], n: usize) -> Result<Self> {
        if h.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "H",
                expected: n * n,
                found: h.len(),
            });
        }
        let mut chol = h.to_vec();
        let mut regularized = false;
        if cholesky_lower(&mut chol, n).is_err() {
            log::warn!("QP Hessian failed to factor; adding {REGULARIZATION:e} to the diagonal");
            chol.copy_from_slice(h);
            for k in 0..n {
                chol[k * n + k] += REGULARIZATION;
            }
            cholesky_lower(&mut chol, n).map_err(|_| Error::NotPositiveDefinite)?;
            regularized = true;
        }

        // Rows of L^-1 are the columns of J = L^-T.
        let mut j = vec![0.0; n * n];
        for c in 0..n {
            for i in c..n {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in c..i {
                    s -= chol[i * n + k] * j[k * n + c];
                }
                j[i * n + c] = s / chol[i * n + i];
            }
        }
        // j now holds L^-1 row-major, which is J column-major.
        Ok(HessianFactor {
            n,
            h: h.to_vec(),
            j,
            regularized,
        })
    }

    /// `problem` has exactly the Hessian this was built from.
    pub fn matches(&self, problem: &QpProblem) -> bool {
        self.n == problem.n && self.h == problem.h
    }
}

pub fn solve_qp_warm(problem: &QpProblem, settings: &QpSettings, warm: Option<&[f64]>) -> Result<QpSolution> {
    problem.validate()?;
    let factor = HessianFactor::new(&problem.h, problem.n)?;
    solve_prepared(problem, &factor, settings, warm)
}

/// [`solve_qp_warm`] with a precomputed factorization of `problem.h`.
pub fn solve_qp_factored(
    problem: &QpProblem,
    factor: &HessianFactor,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Result<QpSolution> {
    problem.validate()?;
    if !factor.matches(problem) {
        return Err(Error::Domain("factorization does not belong to this Hessian"));
    }
    solve_prepared(problem, factor, settings, warm)
}

fn solve_prepared(problem: &QpProblem, factor: &HessianFactor, settings: &QpSettings, warm: Option<&[f64]>) -> Result<QpSolution> {
    if let Some(w) = warm {
        if w.len() != problem.n {
            return Err(Error::DimensionMismatch {
                what: "warm start",
                expected: problem.n,
                found: w.len(),
            });
        }
    }
    let mut solver = DualActiveSet::new(problem, factor, settings);
    if let Some(w) = warm {
        solver.set_preference(w);
    }
    Ok(solver.run())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Constraint {
    /// `a_i' x <= b_i`
    Row(usize),
    /// `x_k >= lb_k`
    Lower(usize),
    /// `x_k <= ub_k`
    Upper(usize),
}

struct DualActiveSet<'a> {
    problem: &'a QpProblem,
    settings: QpSettings,
    n: usize,
    constraints: Vec<Constraint>,
    /// Rows of `A` in compressed sparse form.
    row_start: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<f64>,
    norms: Vec<f64>,
    preferred: Vec<bool>,
    /// Column-major `n x n`; `H^-1 = J J'`.
    j: Vec<f64>,
    /// Column-major `n x n`; upper triangular in the leading `q x q` block.
    r: Vec<f64>,
    active: Vec<usize>,
    /// Multipliers of `active`.
    u: Vec<f64>,
    x: Vec<f64>,
    regularized: bool,
    history: Vec<f64>,
}

impl<'a> DualActiveSet<'a> {
    fn new(problem: &'a QpProblem, factor: &HessianFactor, settings: &QpSettings) -> Self {
        let n = problem.n;
        let j = factor.j.clone();
        let regularized = factor.regularized;

        let mut constraints = Vec::with_capacity(problem.m() + 2 * n);
        let mut norms = Vec::with_capacity(problem.m() + 2 * n);
        let mut row_start = Vec::with_capacity(problem.m() + 1);
        let (mut row_cols, mut row_vals) = (Vec::new(), Vec::new());
        row_start.push(0);
        for i in 0..problem.m() {
            constraints.push(Constraint::Row(i));
            norms.push(libm::sqrt(dot(problem.row(i), problem.row(i))));
            for (c, &a) in problem.row(i).iter().enumerate() {
                if a != 0.0 {
                    row_cols.push(c);
                    row_vals.push(a);
                }
            }
            row_start.push(row_cols.len());
        }
        for k in 0..n {
            if problem.lb[k].is_finite() {
                constraints.push(Constraint::Lower(k));
                norms.push(1.0);
            }
        }
        for k in 0..n {
            if problem.ub[k].is_finite() {
                constraints.push(Constraint::Upper(k));
                norms.push(1.0);
            }
        }

        let mut solver = DualActiveSet {
            problem,
            settings: *settings,
            n,
            preferred: vec![false; constraints.len()],
            constraints,
            row_start,
            row_cols,
            row_vals,
            norms,
            j,
            r: vec![0.0; n * n],
            active: Vec::new(),
            u: Vec::new(),
            x: vec![0.0; n],
            regularized,
            history: Vec::new(),
        };

        // unconstrained minimizer x = -J J' f
        for c in 0..n {
            let w = dot(solver.col(c), &problem.f);
            let (jc, x) = (&solver.j[c * n..(c + 1) * n], &mut solver.x);
            axpy(-w, jc, x);
        }
        solver.record();
        solver
    }

    #[inline]
    fn col(&self, c: usize) -> &[f64] {
        &self.j[c * self.n..(c + 1) * self.n]
    }

    #[inline]
    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let range = self.row_start[i]..self.row_start[i + 1];
        self.row_cols[range.clone()]
            .iter()
            .zip(&self.row_vals[range])
            .map(|(&c, &a)| a * v[c])
            .sum()
    }

    fn record(&mut self) {
        if self.settings.record_history {
            let obj = self.problem.objective(&self.x);
            self.history.push(obj);
        }
    }

    fn set_preference(&mut self, warm: &[f64]) {
        for idx in 0..self.constraints.len() {
            let s = self.slack_at(idx, warm);
            self.preferred[idx] = s <= 1e-6 * self.norms[idx].max(1.0);
        }
    }

    /// `s_j(x) >= 0` is feasibility.
    fn slack_at(&self, idx: usize, x: &[f64]) -> f64 {
        match self.constraints[idx] {
            Constraint::Row(i) => self.problem.b[i] - self.row_dot(i, x),
            Constraint::Lower(k) => x[k] - self.problem.lb[k],
            Constraint::Upper(k) => self.problem.ub[k] - x[k],
        }
    }

    /// `<v, n_j>` with the constraint written as `n_j' x >= c_j`.
    fn normal_dot(&self, idx: usize, v: &[f64]) -> f64 {
        match self.constraints[idx] {
            Constraint::Row(i) => -self.row_dot(i, v),
            Constraint::Lower(k) => v[k],
            Constraint::Upper(k) => -v[k],
        }
    }

    /// Most violated constraint, preferring warm-start actives.
    fn pick_violated(&self, worst_violation: &mut f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_pref: Option<(usize, f64)> = None;
        let mut worst = 0.0f64;
        for idx in 0..self.constraints.len() {
            let s = self.slack_at(idx, &self.x);
            worst = worst.max(-s);
            let scaled = s / self.norms[idx].max(1e-300);
            if scaled >= -1e-3 * self.settings.tol || self.active.contains(&idx) {
                continue;
            }
            if best.is_none_or(|(_, v)| scaled < v) {
                best = Some((idx, scaled));
            }
            if self.preferred[idx] && best_pref.is_none_or(|(_, v)| scaled < v) {
                best_pref = Some((idx, scaled));
            }
        }
        *worst_violation = worst;
        best_pref.or(best).map(|(idx, _)| idx)
    }

    fn run(mut self) -> QpSolution {
        let n = self.n;
        let mut iterations = 0usize;
        let mut min_violation = f64::INFINITY;
        let mut d = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut rvec: Vec<f64> = Vec::with_capacity(n);

        let status = 'outer: loop {
            let mut worst = 0.0;
            let picked = self.pick_violated(&mut worst);
            min_violation = min_violation.min(worst);
            let Some(p) = picked else {
                break QpStatus::Optimal;
            };
            let mut u_plus = self.u.clone();
            u_plus.push(0.0);

            loop {
                if iterations >= self.settings.max_iter {
                    break 'outer QpStatus::MaxIter;
                }
                let q = self.active.len();
                // d = J' n_p
                for c in 0..n {
                    d[c] = self.normal_dot(p, self.col(c));
                }
                // primal direction z = J2 d2
                z.iter_mut().for_each(|v| *v = 0.0);
                for c in q..n {
                    axpy(d[c], &self.j[c * n..(c + 1) * n], &mut z);
                }
                // negative dual direction r = R^-1 d1
                rvec.clear();
                rvec.resize(q, 0.0);
                for i in (0..q).rev() {
                    let mut s = d[i];
                    for k in i + 1..q {
                        s -= self.r[k * n + i] * rvec[k];
                    }
                    rvec[i] = s / self.r[i * n + i];
                }

                // partial step: first active multiplier to hit zero
                let rmax = norm_inf(&rvec);
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, &rk) in rvec.iter().enumerate() {
                    if rk > 1e-15 * rmax {
                        let ratio = u_plus[k] / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(k);
                        }
                    }
                }
                // full step: make constraint p tight
                let d2_sq: f64 = d[q..].iter().map(|v| v * v).sum();
                let d_sq: f64 = d.iter().map(|v| v * v).sum();
                let t2 = if d2_sq > 1e-22 * d_sq {
                    -self.slack_at(p, &self.x) / self.normal_dot(p, &z)
                } else {
                    f64::INFINITY
                };

                if t1.is_infinite() && t2.is_infinite() {
                    break 'outer QpStatus::Infeasible;
                }
                iterations += 1;
                if t2.is_infinite() {
                    // dual step only
                    for (uk, rk) in u_plus.iter_mut().zip(&rvec) {
                        *uk -= t1 * rk;
                    }
                    u_plus[q] += t1;
                    let l = drop_at.expect("finite partial step has a blocking index");
                    self.drop_constraint(l);
                    u_plus.remove(l);
                    continue;
                }
                let t = t1.min(t2);
                axpy(t, &z, &mut self.x);
                for (uk, rk) in u_plus.iter_mut().zip(&rvec) {
                    *uk -= t * rk;
                }
                u_plus[q] += t;
                self.record();
                if t2 <= t1 {
                    self.add_constraint(&mut d);
                    self.active.push(p);
                    self.u = u_plus;
                    continue 'outer;
                }
                let l = drop_at.expect("finite partial step has a blocking index");
                self.drop_constraint(l);
                u_plus.remove(l);
            }
        };

        let mut mult = Multipliers::zeros(n, self.problem.m());
        for (&idx, &ui) in self.active.iter().zip(&self.u) {
            match self.constraints[idx] {
                Constraint::Row(i) => mult.ineq[i] = ui,
                Constraint::Lower(k) => mult.lower[k] = ui,
                Constraint::Upper(k) => mult.upper[k] = ui,
            }
        }
        let kkt = kkt_residuals(self.problem, &self.x, &mult);
        let status = match status {
            QpStatus::Optimal if kkt.max() > self.settings.tol => QpStatus::Inaccurate,
            s => s,
        };
        if status == QpStatus::Infeasible {
            log::warn!("QP infeasible; smallest worst-case violation {min_violation:e}");
        }
        QpSolution {
            objective: self.problem.objective(&self.x),
            x: self.x,
            status,
            multipliers: mult,
            kkt,
            iterations,
            regularized: self.regularized,
            min_violation: if min_violation.is_finite() { min_violation } else { 0.0 },
            history: self.history,
        }
    }

    /// Rotate columns `q..n` of J so that `d = J' n_p` has zeros below
    /// position `q`, then append `d[..=q]` as the new column of R.
    fn add_constraint(&mut self, d: &mut [f64]) {
        let n = self.n;
        let q = self.active.len();
        for k in (q + 1..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = libm::hypot(a, b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, c, s);
        }
        for i in 0..=q {
            self.r[q * n + i] = d[i];
        }
    }

    /// Remove active constraint `l`, restoring R to upper triangular form.
    fn drop_constraint(&mut self, l: usize) {
        let n = self.n;
        let q = self.active.len();
        for c in l..q - 1 {
            for i in 0..q {
                self.r[c * n + i] = self.r[(c + 1) * n + i];
            }
        }
        for i in 0..q {
            self.r[(q - 1) * n + i] = 0.0;
        }
        for jj in l..q - 1 {
            let a = self.r[jj * n + jj];
            let b = self.r[jj * n + jj + 1];
            if b == 0.0 {
                continue;
            }
            let h = libm::hypot(a, b);
            let (c, s) = (a / h, b / h);
            for k in jj..q - 1 {
                let top = self.r[k * n + jj];
                let bot = self.r[k * n + jj + 1];
                self.r[k * n + jj] = c * top + s * bot;
                self.r[k * n + jj + 1] = -s * top + c * bot;
            }
            self.r[jj * n + jj + 1] = 0.0;
            self.rotate_j(jj, c, s);
        }
        self.active.remove(l);
    }

    /// `(J_k, J_k+1) <- (c J_k + s J_k+1, -s J_k + c J_k+1)`
    fn rotate_j(&mut self, k: usize, c: f64, s: f64) {
        let n = self.n;
        let (left, right) = self.j.split_at_mut((k + 1) * n);
        let first = &mut left[k * n..];
        let second = &mut right[..n];
        for (a, b) in first.iter_mut().zip(second.iter_mut()) {
            let (x, y) = (*a, *b);
            *a = c * x + s * y;
            *b = -s * x + c * y;
        }
    }
}
