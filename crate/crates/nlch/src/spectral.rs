//! Cosine-transform diagonalization of the cell-centered Neumann Laplacian.
//!
//! On the reflection-ghost grid the modes `cos(pi k (i+1/2)/n)` are exact
//! eigenvectors of `-laplacian_neumann` with eigenvalues
//! `lambda_k = (2/h^2)(1 - cos(pi k / n))` per axis, so any operator of the
//! form `c0 I + c1 (-lap) + c2 (-lap)^2` is solved exactly by one DCT-II /
//! DCT-III round trip. This is used both as a direct solver for the
//! constant-coefficient steps and as a preconditioner for the
//! variable-coefficient Krylov solves.

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::grid::{Field, GridSpec};

pub struct NeumannSpectral {
    grid: GridSpec,
    dct: Arc<dyn TransformType2And3<f64>>,
    /// Eigenvalues of the one-dimensional `-lap` per mode index.
    lambda: Vec<f64>,
}

impl NeumannSpectral {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n;
        let dct = DctPlanner::new().plan_dct2(n);
        let h = grid.h();
        let lambda = (0..n)
            .map(|k| 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos()))
            .collect();
        NeumannSpectral { grid, dct, lambda }
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Largest eigenvalue of the discrete `-lap` on this grid.
    pub fn lambda_max(&self) -> f64 {
        2.0 * self.lambda[self.grid.n - 1]
    }

    fn transform_rows(&self, data: &mut [f64], inverse: bool) {
        let n = self.grid.n;
        for row in data.chunks_exact_mut(n) {
            if inverse {
                self.dct.process_dct3(row);
            } else {
                self.dct.process_dct2(row);
            }
        }
    }

    fn transform_cols(&self, data: &mut [f64], inverse: bool) {
        let n = self.grid.n;
        let mut col = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                col[j] = data[j * n + i];
            }
            if inverse {
                self.dct.process_dct3(&mut col);
            } else {
                self.dct.process_dct2(&mut col);
            }
            for j in 0..n {
                data[j * n + i] = col[j];
            }
        }
    }

    /// Solve `(c0 I + c1 (-lap) + c2 (-lap)^2) x = rhs` exactly in the
    /// cosine basis. Requires the symbol to be nonzero for every mode.
    pub fn solve_shifted(&self, c0: f64, c1: f64, c2: f64, rhs: &Field) -> Field {
        assert_eq!(rhs.grid(), self.grid, "rhs grid does not match spectral plan");
        let mut buf = rhs.values().to_vec();
        self.solve_shifted_slice(c0, c1, c2, &mut buf);
        Field::from_values(self.grid, buf).expect("size preserved")
    }

    /// Slice variant of [`solve_shifted`](Self::solve_shifted) for solver
    /// inner loops.
    pub fn solve_shifted_slice(&self, c0: f64, c1: f64, c2: f64, buf: &mut [f64]) {
        let n = self.grid.n;
        self.transform_rows(buf, false);
        self.transform_cols(buf, false);
        let norm = 4.0 / (n * n) as f64; // DCT-III(DCT-II(x)) = (n/2) x per axis
        for kj in 0..n {
            for ki in 0..n {
                let m = self.lambda[ki] + self.lambda[kj];
                let symbol = c0 + c1 * m + c2 * m * m;
                buf[kj * n + ki] *= norm / symbol;
            }
        }
        self.transform_rows(buf, true);
        self.transform_cols(buf, true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, laplacian_neumann, norm_l2, Field};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn cosine_mode_is_exact_eigenvector() {
        let g = GridSpec::square(32, 2.0).unwrap();
        let spec = NeumannSpectral::new(g);
        let k = 5usize;
        let v = Field::from_fn(g, |x, _| (PI * k as f64 * x / g.length).cos());
        let lap = laplacian_neumann(&v);
        let lam = spec.lambda[k];
        for idx in 0..g.cells() {
            assert_relative_eq!(lap.values()[idx], -lam * v.values()[idx], epsilon = 1e-9 * lam);
        }
    }

    #[test]
    fn shifted_solve_has_tiny_residual() {
        let g = GridSpec::square(24, 1.0).unwrap();
        let spec = NeumannSpectral::new(g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let b = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let (c0, c1, c2) = (1.0, 3e-3, 2e-6);
        let x = spec.solve_shifted(c0, c1, c2, &b);
        // residual of c0 x + c1 (-lap x) + c2 (lap lap x) - b
        let lap_x = laplacian_neumann(&x);
        let lap2_x = laplacian_neumann(&lap_x);
        let mut res = b.clone();
        res.axpy(-c0, &x);
        res.axpy(c1, &lap_x);
        res.axpy(-c2, &lap2_x);
        assert!(norm_l2(&res) <= 1e-11 * norm_l2(&b), "residual {}", norm_l2(&res));
        // sanity: solve is symmetric, inner(x, b2) == inner(b, x2)
        let b2 = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let x2 = spec.solve_shifted(c0, c1, c2, &b2);
        assert_relative_eq!(inner(&x, &b2), inner(&b, &x2), max_relative = 1e-11);
    }
}
