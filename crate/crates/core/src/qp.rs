//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize     1/2 x' P x + q' x
//!     subject to   A x  = b
//!                  lo <= C x <= hi
//! ```
//!
//! Equality-only problems are solved directly through the KKT system. Problems
//! with inequalities use a dual active-set iteration (Goldfarb-Idnani): start
//! at the equality-constrained minimizer, then repeatedly add the most violated
//! inequality, dropping active constraints whose multipliers would change sign.
//! `P` only has to be positive definite on the null space of `A`, which is the
//! case for both the recovery and the trajectory problems.
//!
//! Sign convention for the returned multipliers: at the optimum
//! `P x + q + A' eq_duals + C' ineq_duals = 0`, with `ineq_duals[i] <= 0` when
//! the lower bound of row `i` is active and `>= 0` when the upper bound is.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Residual tolerance of the equality-constrained core.
pub const EQ_TOL: f64 = 1e-8;
/// Feasibility and complementarity tolerance of the inequality loop.
pub const INEQ_TOL: f64 = 1e-6;
/// Smallest eigenvalue of `P` accepted as positive semidefinite.
pub const PSD_FLOOR: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not symmetric")]
    NotSymmetric,
    #[error("cost matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("inequality row {0} has lo > hi")]
    InvalidBounds(usize),
    #[error("KKT matrix is singular (redundant or inconsistent constraints)")]
    SingularKkt,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached after {} iterations", .0.iterations)]
    MaxIter(Box<QpSolution>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        QpProblem {
            p,
            q,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            c: DMatrix::zeros(0, n),
            lo: DVector::zeros(0),
            hi: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_inequalities(mut self, c: DMatrix<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.c = c;
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let dim = |what: &str| Err(QpError::Dimension(what.to_string()));
        if self.p.nrows() != n || self.p.ncols() != n {
            return dim("P must be n x n");
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return dim("A must be m_e x n with b of length m_e");
        }
        if self.c.ncols() != n || self.c.nrows() != self.lo.len() || self.lo.len() != self.hi.len() {
            return dim("C must be m_i x n with lo/hi of length m_i");
        }
        if let Some(i) = (0..self.lo.len()).find(|&i| self.lo[i] > self.hi[i] || self.lo[i].is_nan() || self.hi[i].is_nan()) {
            return Err(QpError::InvalidBounds(i));
        }
        check_psd(&self.p)
    }

    /// Largest violation of the equality and bound constraints.
    pub fn primal_residual(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a * x - &self.b).amax();
        let cx = &self.c * x;
        let ineq = (0..cx.len())
            .map(|i| (self.lo[i] - cx[i]).max(cx[i] - self.hi[i]).max(0.0))
            .fold(0.0, f64::max);
        if self.a.nrows() == 0 {
            ineq
        } else {
            eq.max(ineq)
        }
    }

    /// Infinity norm of `P x + q + A' eq_duals + C' ineq_duals`.
    pub fn stationarity_residual(&self, sol: &QpSolution) -> f64 {
        let g = &self.p * &sol.x + &self.q + self.a.transpose() * &sol.eq_duals + self.c.transpose() * &sol.ineq_duals;
        if g.is_empty() {
            0.0
        } else {
            g.amax()
        }
    }
}

fn check_psd(p: &DMatrix<f64>) -> Result<(), QpError> {
    let n = p.nrows();
    if n == 0 {
        return Ok(());
    }
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-9 * scale {
        return Err(QpError::NotSymmetric);
    }
    let sym = (p + p.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig < PSD_FLOOR * scale {
        return Err(QpError::NotPsd(min_eig));
    }
    Ok(())
}

/// Solves `[P M'; M 0] [z; w] = [r1; r2]`, returning `(z, w)`.
fn solve_kkt(
    p: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let n = p.nrows();
    let k = m.nrows();
    if k > 0 && !full_row_rank(m) {
        return Err(QpError::SingularKkt);
    }
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    if k > 0 {
        kkt.view_mut((0, n), (n, k)).copy_from(&m.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(m);
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(r1);
    rhs.rows_mut(n, k).copy_from(r2);

    let lu = kkt.clone().full_piv_lu();
    let mut sol = lu.solve(&rhs).ok_or(QpError::SingularKkt)?;
    let scale = kkt.amax().max(1.0) * (1.0 + rhs.amax());
    // a couple of refinement sweeps tighten the residual on badly scaled systems
    for _ in 0..3 {
        let resid = &rhs - &kkt * &sol;
        if resid.amax() <= 1e-13 * scale {
            break;
        }
        match lu.solve(&resid) {
            Some(d) => sol += d,
            None => return Err(QpError::SingularKkt),
        }
    }
    if !sol.iter().all(|v| v.is_finite()) || (&rhs - &kkt * &sol).amax() > 1e-9 * scale {
        return Err(QpError::SingularKkt);
    }
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn full_row_rank(m: &DMatrix<f64>) -> bool {
    let mut scaled = m.clone();
    for mut row in scaled.row_iter_mut() {
        let norm = row.norm();
        if norm == 0.0 {
            return false;
        }
        row /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > 1e-10 * max.max(1.0)).count() == m.nrows()
}

/// Minimizes `1/2 x'Px + q'x` subject to `Ax = b`.
pub fn solve_equality_qp(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = q.len();
    if p.nrows() != n || p.ncols() != n || a.ncols() != n || a.nrows() != b.len() {
        return Err(QpError::Dimension("equality QP dimensions".into()));
    }
    let (x, lambda) = solve_kkt(p, a, &(-q), b)?;
    Ok(QpSolution {
        x,
        eq_duals: lambda,
        ineq_duals: DVector::zeros(0),
        status: QpStatus::Optimal,
        iterations: 0,
    })
}

#[derive(Debug, Clone, Copy)]
enum Side {
    Lower,
    Upper,
}

/// One-sided inequality `normal' x >= offset` derived from row `row` of `C`.
struct HalfSpace {
    row: usize,
    side: Side,
    normal: DVector<f64>,
    offset: f64,
}

/// Solves a general convex QP with equality and two-sided inequality rows.
pub fn solve_qp(prob: &QpProblem) -> Result<QpSolution, QpError> {
    prob.validate()?;
    let n = prob.num_vars();
    let m_e = prob.a.nrows();
    let m_i = prob.c.nrows();

    // rows with lo == hi behave as equalities
    let mut eq_rows: Vec<DVector<f64>> = (0..m_e).map(|i| prob.a.row(i).transpose()).collect();
    let mut eq_rhs: Vec<f64> = prob.b.iter().copied().collect();
    let mut pinned = Vec::new();
    let mut halfspaces = Vec::new();
    for i in 0..m_i {
        let row = prob.c.row(i).transpose();
        let (lo, hi) = (prob.lo[i], prob.hi[i]);
        if lo == hi {
            pinned.push(i);
            eq_rows.push(row);
            eq_rhs.push(lo);
            continue;
        }
        if lo.is_finite() {
            halfspaces.push(HalfSpace { row: i, side: Side::Lower, normal: row.clone(), offset: lo });
        }
        if hi.is_finite() {
            halfspaces.push(HalfSpace { row: i, side: Side::Upper, normal: -row, offset: -hi });
        }
    }
    let n_eq = eq_rows.len();

    let build_rows = |active: &[usize]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n_eq + active.len(), n);
        for (r, v) in eq_rows.iter().enumerate() {
            m.set_row(r, &v.transpose());
        }
        for (r, &h) in active.iter().enumerate() {
            m.set_row(n_eq + r, &halfspaces[h].normal.transpose());
        }
        m
    };

    let eq_m = build_rows(&[]);
    let eq_b = DVector::from_vec(eq_rhs.clone());
    let (mut x, lambda) = solve_kkt(&prob.p, &eq_m, &(-&prob.q), &eq_b)?;
    // multipliers in the form P x + q = M' mu
    let mut mu_eq = -lambda;
    let mut active: Vec<usize> = Vec::new();
    let mut u_active: Vec<f64> = Vec::new();

    let p_scale = prob.p.amax().max(1e-12);
    let max_iter = (50 * n).max(50);
    let mut iterations = 0;

    let finish = |x: DVector<f64>, mu_eq: &DVector<f64>, active: &[usize], u: &[f64], status, iterations| {
        let eq_duals = DVector::from_iterator(m_e, (0..m_e).map(|i| -mu_eq[i]));
        let mut ineq_duals = DVector::zeros(m_i);
        for (k, &row) in pinned.iter().enumerate() {
            ineq_duals[row] = -mu_eq[m_e + k];
        }
        for (&h, &uh) in active.iter().zip(u) {
            let hs = &halfspaces[h];
            match hs.side {
                Side::Lower => ineq_duals[hs.row] -= uh,
                Side::Upper => ineq_duals[hs.row] += uh,
            }
        }
        QpSolution { x, eq_duals, ineq_duals, status, iterations }
    };

    loop {
        // most violated inactive half-space; lowest index wins ties
        let mut entering: Option<(usize, f64)> = None;
        for (h, hs) in halfspaces.iter().enumerate() {
            if active.contains(&h) {
                continue;
            }
            let norm = hs.normal.norm().max(1e-300);
            let viol = (hs.normal.dot(&x) - hs.offset) / norm;
            if viol < -1e-10 * (1.0 + hs.offset.abs() / norm) && entering.is_none_or(|(_, v)| viol < v) {
                entering = Some((h, viol));
            }
        }
        let Some((p_idx, _)) = entering else {
            return Ok(finish(x, &mu_eq, &active, &u_active, QpStatus::Optimal, iterations));
        };
        let n_p = halfspaces[p_idx].normal.clone();
        let b_p = halfspaces[p_idx].offset;
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                let sol = finish(x, &mu_eq, &active, &u_active, QpStatus::MaxIter, iterations);
                return Err(QpError::MaxIter(Box::new(sol)));
            }
            let m = build_rows(&active);
            let (z, r) = solve_kkt(&prob.p, &m, &n_p, &DVector::zeros(m.nrows()))?;

            // largest step keeping active inequality multipliers nonnegative
            let mut partial: Option<(usize, f64)> = None;
            for (k, &uk) in u_active.iter().enumerate() {
                let rk = r[n_eq + k];
                if rk > 1e-12 {
                    let t = uk / rk;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((k, t));
                    }
                }
            }

            let z_null = z.amax() <= 1e-10 * n_p.amax() / p_scale;
            if z_null {
                let Some((k, t1)) = partial else {
                    return Err(QpError::Infeasible);
                };
                step_multipliers(&mut mu_eq, &mut u_active, &r, n_eq, t1);
                u_p += t1;
                active.remove(k);
                u_active.remove(k);
                continue;
            }

            let slack = n_p.dot(&x) - b_p;
            let full = -slack / n_p.dot(&z);
            let t = partial.map_or(full, |(_, t1)| t1.min(full));
            x += &z * t;
            step_multipliers(&mut mu_eq, &mut u_active, &r, n_eq, t);
            u_p += t;
            match partial {
                Some((k, t1)) if t1 < full => {
                    active.remove(k);
                    u_active.remove(k);
                }
                _ => {
                    active.push(p_idx);
                    u_active.push(u_p);
                    break;
                }
            }
        }
    }
}

fn step_multipliers(mu_eq: &mut DVector<f64>, u_active: &mut [f64], r: &DVector<f64>, n_eq: usize, t: f64) {
    for i in 0..n_eq {
        mu_eq[i] -= t * r[i];
    }
    for (k, u) in u_active.iter_mut().enumerate() {
        *u = (*u - t * r[n_eq + k]).max(0.0);
    }
}
