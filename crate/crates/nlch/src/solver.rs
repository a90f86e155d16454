//! Preconditioned Krylov solvers over raw coefficient slices.
//!
//! Reductions are plain sequential sums, so repeated runs produce
//! bit-identical iterates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn nrm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients for symmetric positive definite
/// operators. `x` holds the initial guess and receives the solution.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let b_norm = nrm2(b);
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];

    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = nrm2(&r);
    if res <= rel_tol * b_norm {
        return Ok(SolveStats { iterations: 0, residual: res / b_norm });
    }
    precond(&r, &mut z);
    p.copy_from_slice(&z);
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let p_ap = dot(&p, &ap);
        if p_ap <= 0.0 {
            return Err(Error::SolverDiverged { iterations: it, residual: res / b_norm });
        }
        let alpha = rz / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = nrm2(&r);
        if res <= rel_tol * b_norm {
            return Ok(SolveStats { iterations: it, residual: res / b_norm });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged { iterations: max_iter, residual: res / b_norm })
}

/// Preconditioned BiCGStab for general (nonsymmetric) operators.
pub fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let b_norm = nrm2(b);
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = nrm2(&r);
    if res <= rel_tol * b_norm {
        return Ok(SolveStats { iterations: 0, residual: res / b_norm });
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            return Err(Error::SolverDiverged { iterations: it, residual: res / b_norm });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut p_hat);
        apply(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv.abs() < 1e-300 {
            return Err(Error::SolverDiverged { iterations: it, residual: res / b_norm });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if nrm2(&s) <= rel_tol * b_norm {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(SolveStats { iterations: it, residual: nrm2(&s) / b_norm });
        }
        precond(&s, &mut s_hat);
        apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::SolverDiverged { iterations: it, residual: res / b_norm });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = nrm2(&r);
        if res <= rel_tol * b_norm {
            return Ok(SolveStats { iterations: it, residual: res / b_norm });
        }
        if omega.abs() < 1e-300 {
            return Err(Error::SolverDiverged { iterations: it, residual: res / b_norm });
        }
    }
    Err(Error::SolverDiverged { iterations: max_iter, residual: res / b_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense_apply(mat: &[Vec<f64>]) -> impl Fn(&[f64], &mut [f64]) + '_ {
        move |x, out| {
            for (i, row) in mat.iter().enumerate() {
                out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }

    fn identity(x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    #[test]
    fn pcg_solves_spd_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        // A = B^T B + I is SPD
        let b_mat: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b_mat[k][i] * b_mat[k][j]).sum::<f64>()
                    + if i == j { 1.0 } else { 0.0 };
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; n];
        let stats = pcg(dense_apply(&a), identity, &rhs, &mut x, 1e-12, 500).unwrap();
        let mut ax = vec![0.0; n];
        dense_apply(&a)(&x, &mut ax);
        let err: f64 = ax.iter().zip(&rhs).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!(err <= 1e-10, "residual {err}, {stats:?}");
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| rng.gen_range(-0.2..0.2) + if i == j { 3.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; n];
        bicgstab(dense_apply(&a), identity, &rhs, &mut x, 1e-12, 500).unwrap();
        let mut ax = vec![0.0; n];
        dense_apply(&a)(&x, &mut ax);
        let err: f64 = ax.iter().zip(&rhs).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!(err <= 1e-10, "residual {err}");
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let rhs = vec![0.0; 8];
        let mut x = vec![1.0; 8];
        pcg(identity, identity, &rhs, &mut x, 1e-12, 10).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
