//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use drr_core::qp::QpProblem;

/// Dense Gaussian elimination with partial pivoting. Returns `None` when a
/// pivot falls below `1e-12` relative to the largest entry.
pub fn gauss_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut b = rhs.clone();
    let scale = a.amax().max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))?;
        if a[(piv, col)].abs() < 1e-12 * scale {
            return None;
        }
        a.swap_rows(col, piv);
        b.swap_rows(col, piv);
        for r in col + 1..n {
            let f = a[(r, col)] / a[(col, col)];
            if f != 0.0 {
                for c in col..n {
                    a[(r, c)] -= f * a[(col, c)];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = DVector::zeros(n);
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[(r, c)] * x[c]).sum();
        x[r] = (b[r] - s) / a[(r, r)];
    }
    Some(x)
}

/// Minimizes `1/2 x'Px + q'x` under `rows x = rhs` through the KKT system.
pub fn kkt_solve(p: &DMatrix<f64>, q: &DVector<f64>, rows: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let k = rows.nrows();
    let mut m = DMatrix::zeros(n + k, n + k);
    m.view_mut((0, 0), (n, n)).copy_from(p);
    m.view_mut((0, n), (n, k)).copy_from(&rows.transpose());
    m.view_mut((n, 0), (k, n)).copy_from(rows);
    let mut r = DVector::zeros(n + k);
    r.rows_mut(0, n).copy_from(&(-q));
    r.rows_mut(n, k).copy_from(rhs);
    gauss_solve(&m, &r).map(|z| z.rows(0, n).into_owned())
}

/// Exhaustive active-set enumeration: every inequality row is inactive, at
/// its lower bound or at its upper bound. The feasible candidate with the
/// lowest objective is the optimum of a convex QP.
pub fn enumerate_qp(prob: &QpProblem) -> Option<DVector<f64>> {
    let m = prob.c.nrows();
    let n = prob.num_vars();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for pattern in 0..3usize.pow(m as u32) {
        let mut code = pattern;
        let mut rows: Vec<(DVector<f64>, f64)> = (0..prob.a.nrows())
            .map(|i| (prob.a.row(i).transpose(), prob.b[i]))
            .collect();
        for i in 0..m {
            match code % 3 {
                1 => rows.push((prob.c.row(i).transpose(), prob.lo[i])),
                2 => rows.push((prob.c.row(i).transpose(), prob.hi[i])),
                _ => {}
            }
            code /= 3;
        }
        let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let Some(x) = kkt_solve(&prob.p, &prob.q, &a, &b) else { continue };
        let cx = &prob.c * &x;
        let feasible = (0..m).all(|i| cx[i] >= prob.lo[i] - 1e-9 && cx[i] <= prob.hi[i] + 1e-9)
            && (&prob.a * &x - &prob.b).amax() <= 1e-8;
        if !feasible {
            continue;
        }
        let f = prob.objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf - 1e-12) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}
