//! Jacobi-preconditioned Krylov solvers: conjugate gradients for symmetric
//! positive-definite systems, BiCGStab otherwise.

use thiserror::Error;

use super::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: matrix is {matrix}×{matrix}, right-hand side has {rhs} entries")]
    Dimension { matrix: usize, rhs: usize },
    #[error("{method:?} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        method: SolverKind,
        iterations: usize,
        residual: f64,
    },
    #[error("{method:?} broke down after {iterations} iterations (relative residual {residual:e})")]
    Breakdown {
        method: SolverKind,
        iterations: usize,
        residual: f64,
    },
    #[error("matrix is not positive definite (curvature {curvature:e} at iteration {iterations})")]
    NotPositiveDefinite { iterations: usize, curvature: f64 },
}

impl SolverError {
    /// Final relative residual, when the error carries one.
    pub fn residual(&self) -> Option<f64> {
        match self {
            SolverError::NotConverged { residual, .. } | SolverError::Breakdown { residual, .. } => {
                Some(*residual)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolverKind {
    /// Conjugate gradients if the matrix is numerically symmetric, else BiCGStab.
    Auto,
    ConjugateGradient,
    BiCgStab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: SolverKind,
    pub rel_tol: f64,
    /// Defaults to 10 × dimension.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: SolverKind::Auto,
            rel_tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolveOptions {
    pub fn with_method(method: SolverKind) -> Self {
        SolveOptions {
            method,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub method: SolverKind,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn jacobi(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
        .collect()
}

/// Solves `A x = b` to `opts.rel_tol` relative residual.
pub fn solve_sparse(a: &CsrMatrix, b: &[f64], opts: &SolveOptions) -> Result<Solution, SolverError> {
    solve_sparse_from(a, b, None, opts)
}

/// As [`solve_sparse`], starting from `x0` when given.
pub fn solve_sparse_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    let n = a.dim();
    if b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(SolverError::Dimension { matrix: n, rhs: b.len() });
    }
    let method = match opts.method {
        SolverKind::Auto if a.is_symmetric(1e-13) => SolverKind::ConjugateGradient,
        SolverKind::Auto => SolverKind::BiCgStab,
        m => m,
    };
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(Solution {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            method,
        });
    }
    let x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    match method {
        SolverKind::ConjugateGradient => pcg(a, b, x, bnorm, opts.rel_tol, max_iter),
        _ => bicgstab(a, b, x, bnorm, opts.rel_tol, max_iter),
    }
}

fn residual(a: &CsrMatrix, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Solution, SolverError> {
    let n = b.len();
    let minv = jacobi(a);
    let mut r = vec![0.0; n];
    residual(a, b, &x, &mut r);
    let mut rel = norm(&r) / bnorm;
    if rel <= tol {
        return Ok(Solution { x, iterations: 0, rel_residual: rel, method: SolverKind::ConjugateGradient });
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::NotPositiveDefinite { iterations: it, curvature: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= tol {
            // confirm against the true residual
            residual(a, b, &x, &mut r);
            rel = norm(&r) / bnorm;
            if rel <= tol {
                return Ok(Solution { x, iterations: it, rel_residual: rel, method: SolverKind::ConjugateGradient });
            }
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::NotConverged { method: SolverKind::ConjugateGradient, iterations: max_iter, residual: rel })
}

fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Solution, SolverError> {
    let n = b.len();
    let minv = jacobi(a);
    let mut r = vec![0.0; n];
    residual(a, b, &x, &mut r);
    let mut rel = norm(&r) / bnorm;
    if rel <= tol {
        return Ok(Solution { x, iterations: 0, rel_residual: rel, method: SolverKind::BiCgStab });
    }
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zv = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut restarts = 0;
    let breakdown = |it: usize, rel: f64| SolverError::Breakdown { method: SolverKind::BiCgStab, iterations: it, residual: rel };
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            if restarts > 3 || !rho_new.is_finite() {
                return Err(breakdown(it, rel));
            }
            restarts += 1;
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = minv[i] * p[i];
        }
        a.mul_vec_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(breakdown(it, rel));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm(&s) / bnorm;
        if snorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            residual(a, b, &x, &mut r);
            rel = norm(&r) / bnorm;
            if rel <= tol {
                return Ok(Solution { x, iterations: it, rel_residual: rel, method: SolverKind::BiCgStab });
            }
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        for i in 0..n {
            zv[i] = minv[i] * s[i];
        }
        a.mul_vec_into(&zv, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            return Err(breakdown(it, rel));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zv[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bnorm;
        if !rel.is_finite() {
            return Err(breakdown(it, rel));
        }
        if rel <= tol {
            residual(a, b, &x, &mut r);
            rel = norm(&r) / bnorm;
            if rel <= tol {
                return Ok(Solution { x, iterations: it, rel_residual: rel, method: SolverKind::BiCgStab });
            }
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
        }
        if omega == 0.0 {
            return Err(breakdown(it, rel));
        }
    }
    Err(SolverError::NotConverged { method: SolverKind::BiCgStab, iterations: max_iter, residual: rel })
}
