//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min ½ xᵀHx + gᵀx  s.t.  C x ≥ d` for positive definite `H`. The
//! method starts from the unconstrained minimizer and adds violated rows one
//! at a time while keeping the dual iterate feasible, so every intermediate
//! point is optimal for the subset of rows seen so far.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `C`, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

/// Relative tolerance on row violation `c_i x − d_i`.
const FEAS_TOL: f64 = 1e-12;

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(j: &mut DMatrix<f64>, c1: usize, c2: usize, c: f64, s: f64) {
    for row in 0..j.nrows() {
        let (a, b) = (j[(row, c1)], j[(row, c2)]);
        j[(row, c1)] = c * a + s * b;
        j[(row, c2)] = -s * a + c * b;
    }
}

pub fn solve_qp(h: &DMatrix<f64>, g: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> Result<QpSolution> {
    let n = h.nrows();
    let m = c.nrows();
    assert_eq!(h.ncols(), n);
    assert_eq!(g.len(), n);
    assert!(m == 0 || c.ncols() == n);
    assert_eq!(d.len(), m);

    let chol = h.clone().cholesky().ok_or(Error::QpNotConvex)?;
    // J = L⁻ᵀ, so that Jᵀ H J = I.
    let lt = chol.l().transpose();
    let mut jm = lt.solve_upper_triangular(&DMatrix::identity(n, n)).ok_or(Error::QpNotConvex)?;
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut x = -chol.solve(g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let row_norm: Vec<f64> = (0..m).map(|i| c.row(i).norm()).collect();
    let max_iterations = 10 * (m + n) + 100;
    let mut iterations = 0;

    loop {
        // Pick the most violated inactive row, scaled by its norm.
        let mut chosen = None;
        let mut worst = 0.0;
        for i in 0..m {
            if active.contains(&i) || row_norm[i] == 0.0 {
                if row_norm[i] == 0.0 && d[i] > FEAS_TOL {
                    return Err(Error::QpInfeasible);
                }
                continue;
            }
            let s = (c.row(i) * &x)[0] - d[i];
            let scale = row_norm[i] * (1.0 + x.amax()) + d[i].abs();
            let v = s / row_norm[i];
            if s < -FEAS_TOL * scale && v < worst {
                worst = v;
                chosen = Some(i);
            }
        }
        let Some(p) = chosen else { break };
        let np: DVector<f64> = c.row(p).transpose();
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::QpIterationLimit(max_iterations));
            }
            let q = active.len();
            let dv = jm.transpose() * &np;
            let z = jm.columns(q, n - q) * dv.rows(q, n - q);
            let rv = if q > 0 {
                r.view((0, 0), (q, q))
                    .solve_upper_triangular(&dv.rows(0, q).into_owned())
                    .ok_or(Error::QpInfeasible)?
            } else {
                DVector::zeros(0)
            };

            // Partial step: largest t keeping active multipliers non-negative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..q {
                if rv[k] > 0.0 {
                    let t = u[k] / rv[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            // Full step: makes row p active. zᵀn = ‖d₂‖²; zero when n is in
            // the span of the active rows.
            let d2 = dv.rows(q, n - q).norm_squared();
            let t2 = if d2 > 1e-20 * dv.norm_squared() {
                let s_p = (c.row(p) * &x)[0] - d[p];
                -s_p / z.dot(&np)
            } else {
                f64::INFINITY
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::QpInfeasible);
            }
            for k in 0..q {
                u[k] -= t * rv[k];
            }
            u_p += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                // Add row p: rotate d so that only its first q+1 entries survive.
                let mut dv = dv;
                for j in (q + 1..n).rev() {
                    let (cg, sg, hh) = givens(dv[j - 1], dv[j]);
                    if sg == 0.0 {
                        continue;
                    }
                    dv[j - 1] = hh;
                    dv[j] = 0.0;
                    rotate_columns(&mut jm, j - 1, j, cg, sg);
                }
                for k in 0..=q {
                    r[(k, q)] = dv[k];
                }
                active.push(p);
                u.push(u_p);
                break;
            }
            // Drop the blocking row and restore R to upper triangular form.
            let k = drop.expect("finite partial step has a blocking row");
            active.remove(k);
            u.remove(k);
            for col in k..q - 1 {
                for row in 0..=col + 1 {
                    r[(row, col)] = r[(row, col + 1)];
                }
            }
            for row in 0..n {
                r[(row, q - 1)] = 0.0;
            }
            for j in k..q - 1 {
                let (cg, sg, hh) = givens(r[(j, j)], r[(j + 1, j)]);
                if sg == 0.0 {
                    continue;
                }
                r[(j, j)] = hh;
                r[(j + 1, j)] = 0.0;
                for col in j + 1..q - 1 {
                    let (a, b) = (r[(j, col)], r[(j + 1, col)]);
                    r[(j, col)] = cg * a + sg * b;
                    r[(j + 1, col)] = -sg * a + cg * b;
                }
                rotate_columns(&mut jm, j, j + 1, cg, sg);
            }
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = u[k];
    }
    let objective = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
    Ok(QpSolution { x, multipliers, active, objective, iterations })
}
