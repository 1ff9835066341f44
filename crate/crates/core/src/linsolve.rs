//! Jacobi-preconditioned conjugate gradients, plus a dense elimination
//! oracle for small systems.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::SparseMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest system the dense fallback accepts.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b − Ax‖₂ / ‖b‖₂` at exit.
    pub final_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn default_max_iter(n: usize) -> usize {
    10 * n.max(1)
}

/// Solves `Ax = b` from a zero initial guess.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    cg_solve_from(a, b, None, tol, max_iter, |_, _| {})
}

/// Preconditioned CG with optional initial guess. `monitor` sees every
/// iterate `(k, x_k)`, starting with `k = 0`.
pub fn cg_solve_from<F>(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    mut monitor: F,
) -> Result<(Vec<f64>, SolveReport)>
where
    F: FnMut(usize, &[f64]),
{
    let n = a.dim();
    if b.len() != n {
        return Err(Error::InvalidParameter(format!(
            "rhs of length {} for {n}x{n} system",
            b.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite right-hand side".into()));
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        let x = vec![0.0; n];
        monitor(0, &x);
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
            },
        ));
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.matvec(&x);
        for (ri, axi) in r.iter_mut().zip(ax) {
            *ri -= axi;
        }
    }
    monitor(0, &x);
    let mut res = dot(&r, &r).sqrt() / b_norm;
    if res <= tol {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                final_residual: res,
                converged: true,
            },
        ));
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for k in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || !rz.is_finite() {
            return Err(Error::NumericalBreakdown(format!("non-finite value at iteration {k}")));
        }
        if pap <= 0.0 {
            return Err(Error::NumericalBreakdown(format!(
                "matrix not positive definite (pᵀAp = {pap:.3e}) at iteration {k}"
            )));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        monitor(k, &x);
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= tol {
            return Ok((
                x,
                SolveReport {
                    iterations: k,
                    final_residual: res,
                    converged: true,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((
        x,
        SolveReport {
            iterations: max_iter,
            final_residual: res,
            converged: false,
        },
    ))
}

/// CG that turns a missed tolerance into an error.
pub fn cg_solve_strict(a: &SparseMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    let (x, rep) = cg_solve_from(a, b, x0, tol, default_max_iter(a.dim()), |_, _| {})?;
    if !rep.converged {
        return Err(Error::SolverNotConverged {
            iterations: rep.iterations,
            residual: rep.final_residual,
        });
    }
    Ok((x, rep))
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if n > DENSE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "dense solve limited to {DENSE_LIMIT} unknowns, got {n}"
        )));
    }
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col] == 0.0 {
            return Err(Error::NumericalBreakdown("singular matrix in dense solve".into()));
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    Ok(x)
}

/// Ritz values of `steps` Lanczos iterations from a seeded random start.
pub fn lanczos_ritz_values(a: &SparseMatrix, steps: usize, seed: u64) -> Vec<f64> {
    let n = a.dim();
    let steps = steps.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= norm);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for j in 0..steps {
        let mut w = a.matvec(&basis[j]);
        let alpha = dot(&w, &basis[j]);
        alphas.push(alpha);
        // full reorthogonalization, the bases here are tiny
        for v in &basis {
            let c = dot(&w, v);
            w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
        }
        let beta = dot(&w, &w).sqrt();
        if j + 1 == steps || beta < 1e-14 * alpha.abs().max(1e-300) {
            break;
        }
        betas.push(beta);
        basis.push(w.into_iter().map(|v| v / beta).collect());
    }
    symmetric_tridiagonal_eigenvalues(&alphas, &betas)
}

/// Eigenvalues of a small symmetric tridiagonal matrix by Jacobi rotations.
fn symmetric_tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = diag[i];
        if i + 1 < n && i < off.len() {
            m[i][i + 1] = off[i];
            m[i + 1][i] = off[i];
        }
    }
    for _ in 0..100 {
        let mut off_norm = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off_norm += m[p][q] * m[p][q];
            }
        }
        if off_norm < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_in_one_iteration() {
        let a = SparseMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let (x, rep) = cg_solve(&a, &b, 1e-12, 50).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn diagonal_solve() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 4.0]]);
        let (x, _) = cg_solve(&a, &[1.0, 2.0, 4.0], 1e-14, 10).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rhs_takes_no_iterations() {
        let a = SparseMatrix::identity(3);
        let (x, rep) = cg_solve(&a, &[0.0; 3], 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn reports_non_convergence_and_breakdown() {
        let mut rows = vec![vec![0.0; 20]; 20];
        for i in 0..20 {
            rows[i][i] = 2.0;
            if i > 0 {
                rows[i][i - 1] = -1.0;
                rows[i - 1][i] = -1.0;
            }
        }
        let a = SparseMatrix::from_dense(&rows);
        let (_, rep) = cg_solve(&a, &[1.0; 20], 1e-14, 2).unwrap();
        assert!(!rep.converged);
        assert!(cg_solve(&a, &[f64::NAN; 20], 1e-10, 10).is_err());
        let neg = SparseMatrix::from_dense(&[vec![-1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(
            cg_solve(&neg, &[1.0, 1.0], 1e-10, 10),
            Err(Error::NumericalBreakdown(_))
        ));
    }

    #[test]
    fn dense_solver_pivots() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(dense_solve(&a, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
        assert!(dense_solve(&[vec![0.0]], &[1.0]).is_err());
    }

    #[test]
    fn ritz_values_bracket_spectrum() {
        let a = SparseMatrix::from_dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let ev = lanczos_ritz_values(&a, 3, 1);
        assert_eq!(ev.len(), 3);
        assert!((ev[0] - 1.0).abs() < 1e-10);
        let top = 3.5 + 0.5 * 5f64.sqrt();
        assert!((ev[2] - top).abs() < 1e-10);
    }
}
