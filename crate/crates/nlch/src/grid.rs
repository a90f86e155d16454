//! Uniform cell-centered grid on the square `(0, L)^2` with
//! homogeneous-Neumann difference operators, inner products, and norms.
//!
//! Cell centers sit at `((i + 1/2) h, (j + 1/2) h)` with `h = L / n`.
//! Boundary conditions are realized by ghost-cell reflection, which makes
//! constants exact kernel elements of [`laplacian_neumann`] and keeps every
//! flux-form operator exactly conservative.

use crate::error::{Error, Result};

/// Geometry of a uniform cell-centered square grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Spatial dimension. Only `d = 2` is supported by the operators here.
    pub d: usize,
    /// Cells per axis.
    pub n: usize,
    /// Physical side length of the domain.
    pub length: f64,
}

impl GridSpec {
    /// Two-dimensional grid with `n` cells per axis on `(0, length)^2`.
    pub fn square(n: usize, length: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 4 cells per axis, got {n}"
            )));
        }
        if length <= 0.0 || !length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid side length must be positive and finite, got {length}"
            )));
        }
        Ok(GridSpec { d: 2, n, length })
    }

    /// Cell width `h = L / n`.
    #[inline]
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Total number of cells.
    #[inline]
    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    /// Cell volume `h^d`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let h = self.h();
        h * h
    }

    /// Flat index of cell `(i, j)`, row-major in `j`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        j * self.n + i
    }

    /// Physical coordinates of the center of cell `(i, j)`.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if t_final <= 0.0 || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("need at least one time step".into()));
        }
        Ok(TimeGrid { t_final, steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    #[inline]
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }
}

/// A scalar function sampled at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    /// Constant field.
    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Field { grid, values: vec![value; grid.cells()] }
    }

    /// Zero field.
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Field from raw values (must match the cell count).
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::InvalidParameter(format!(
                "value count {} does not match cell count {}",
                values.len(),
                grid.cells()
            )));
        }
        Ok(Field { grid, values })
    }

    /// Field sampled from `f(x, y)` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cells());
        for j in 0..grid.n {
            for i in 0..grid.n {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Field { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_same_grid(self, other);
        let values =
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid, values }
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Field) {
        assert_same_grid(self, other);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// In-place scaling.
    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

#[inline]
fn assert_same_grid(a: &Field, b: &Field) {
    assert_eq!(a.grid, b.grid, "fields live on different grids");
}

/// Five-point Laplacian with ghost-cell reflection (zero normal derivative).
///
/// Exact on constants; the cell sum of the output vanishes (discrete
/// divergence theorem with zero boundary flux).
pub fn laplacian_neumann(v: &Field) -> Field {
    let g = v.grid;
    let n = g.n;
    let inv_h2 = 1.0 / (g.h() * g.h());
    let src = &v.values;
    let mut out = vec![0.0; src.len()];
    for j in 0..n {
        for i in 0..n {
            let c = src[g.idx(i, j)];
            let mut acc = 0.0;
            if i > 0 {
                acc += src[g.idx(i - 1, j)] - c;
            }
            if i + 1 < n {
                acc += src[g.idx(i + 1, j)] - c;
            }
            if j > 0 {
                acc += src[g.idx(i, j - 1)] - c;
            }
            if j + 1 < n {
                acc += src[g.idx(i, j + 1)] - c;
            }
            out[g.idx(i, j)] = acc * inv_h2;
        }
    }
    Field { grid: g, values: out }
}

/// Conservative variable-coefficient operator `div(c grad v)` with zero
/// normal flux. Face coefficients are the arithmetic mean of the adjacent
/// cells; with `c = 1` this reduces to [`laplacian_neumann`] exactly.
pub fn div_coeff_grad(c: &Field, v: &Field) -> Result<Field> {
    assert_same_grid(c, v);
    if c.values.iter().any(|&x| x <= 0.0 || x.is_nan()) {
        return Err(Error::InvalidParameter(
            "div_coeff_grad requires a strictly positive coefficient field".into(),
        ));
    }
    let g = v.grid;
    let n = g.n;
    let inv_h2 = 1.0 / (g.h() * g.h());
    let cv = &c.values;
    let vv = &v.values;
    let mut out = vec![0.0; vv.len()];
    for j in 0..n {
        for i in 0..n {
            let p = g.idx(i, j);
            let mut acc = 0.0;
            if i > 0 {
                let q = g.idx(i - 1, j);
                acc += 0.5 * (cv[p] + cv[q]) * (vv[q] - vv[p]);
            }
            if i + 1 < n {
                let q = g.idx(i + 1, j);
                acc += 0.5 * (cv[p] + cv[q]) * (vv[q] - vv[p]);
            }
            if j > 0 {
                let q = g.idx(i, j - 1);
                acc += 0.5 * (cv[p] + cv[q]) * (vv[q] - vv[p]);
            }
            if j + 1 < n {
                let q = g.idx(i, j + 1);
                acc += 0.5 * (cv[p] + cv[q]) * (vv[q] - vv[p]);
            }
            out[p] = acc * inv_h2;
        }
    }
    Ok(Field { grid: g, values: out })
}

/// Discrete `L^2` inner product `h^d sum(u v)`.
pub fn inner(u: &Field, v: &Field) -> f64 {
    assert_same_grid(u, v);
    let mut acc = 0.0;
    for (a, b) in u.values.iter().zip(&v.values) {
        acc += a * b;
    }
    acc * u.grid.cell_volume()
}

/// Discrete `L^2` norm.
pub fn norm_l2(v: &Field) -> f64 {
    inner(v, v).sqrt()
}

/// Discrete `L^p` norm `(h^d sum |v|^p)^(1/p)`.
pub fn norm_lp(v: &Field, p: f64) -> f64 {
    let mut acc = 0.0;
    for &x in &v.values {
        acc += x.abs().powf(p);
    }
    (acc * v.grid.cell_volume()).powf(1.0 / p)
}

/// Maximum absolute cell value.
pub fn norm_max(v: &Field) -> f64 {
    v.values.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// Squared `H^1` seminorm from face-difference quotients,
/// `sum_faces (v_a - v_b)^2` in two dimensions.
pub fn seminorm_h1_sq(v: &Field) -> f64 {
    let g = v.grid;
    let n = g.n;
    let vv = &v.values;
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let p = g.idx(i, j);
            if i + 1 < n {
                let d = vv[g.idx(i + 1, j)] - vv[p];
                acc += d * d;
            }
            if j + 1 < n {
                let d = vv[g.idx(i, j + 1)] - vv[p];
                acc += d * d;
            }
        }
    }
    acc
}

/// Discrete `H^1` norm `(||v||^2 + |v|_{H^1}^2)^(1/2)`.
pub fn norm_h1(v: &Field) -> f64 {
    (inner(v, v) + seminorm_h1_sq(v)).sqrt()
}

/// Cell average.
pub fn mean(v: &Field) -> f64 {
    v.values.iter().sum::<f64>() / v.values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, 1.0).unwrap()
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let v = Field::constant(grid(16), 3.7);
        let lap = laplacian_neumann(&v);
        assert!(lap.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_second_order_on_neumann_mode() {
        // v = cos(pi x / L) has zero normal derivative on both x-faces.
        let mut errors = Vec::new();
        for &n in &[16usize, 32, 64] {
            let g = grid(n);
            let v = Field::from_fn(g, |x, _| (PI * x).cos());
            let lap = laplacian_neumann(&v);
            let exact = Field::from_fn(g, |x, _| -(PI * PI) * (PI * x).cos());
            let err = lap
                .values()
                .iter()
                .zip(exact.values())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            errors.push(err);
        }
        // observed order from successive refinements
        let order01 = (errors[0] / errors[1]).log2();
        let order12 = (errors[1] / errors[2]).log2();
        assert!(order01 > 1.8, "order {order01} too low ({errors:?})");
        assert!(order12 > 1.8, "order {order12} too low ({errors:?})");
    }

    #[test]
    fn div_coeff_grad_reduces_to_laplacian() {
        let g = grid(12);
        let v = Field::from_fn(g, |x, y| (3.0 * x).sin() + y * y);
        let ones = Field::constant(g, 1.0);
        let twos = Field::constant(g, 2.0);
        let lap = laplacian_neumann(&v);
        let dcg1 = div_coeff_grad(&ones, &v).unwrap();
        let dcg2 = div_coeff_grad(&twos, &v).unwrap();
        for k in 0..g.cells() {
            assert_relative_eq!(dcg1.values()[k], lap.values()[k], max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(dcg2.values()[k], 2.0 * lap.values()[k], max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn div_coeff_grad_rejects_nonpositive_coefficient() {
        let g = grid(8);
        let v = Field::constant(g, 1.0);
        let mut c = Field::constant(g, 1.0);
        c.values_mut()[5] = 0.0;
        assert!(div_coeff_grad(&c, &v).is_err());
    }

    #[test]
    fn inner_matches_norm_and_mean_of_constant() {
        let g = grid(10);
        let v = Field::from_fn(g, |x, y| x - y * y);
        assert_relative_eq!(inner(&v, &v), norm_l2(&v).powi(2), max_relative = 1e-14);
        assert_relative_eq!(mean(&Field::constant(g, 2.5)), 2.5, max_relative = 1e-15);
    }

    #[test]
    fn h1_norm_of_cosine_mode() {
        // On the unit square, int cos^2(pi x) = 1/2 and int |grad|^2 = pi^2/2.
        let g = grid(128);
        let v = Field::from_fn(g, |x, _| (PI * x).cos());
        let expected = (0.5 + PI * PI / 2.0).sqrt();
        assert_relative_eq!(norm_h1(&v), expected, max_relative = 0.01);
    }

    #[test]
    fn seminorm_matches_laplacian_quadratic_form() {
        let g = grid(24);
        let v = Field::from_fn(g, |x, y| (2.0 * x).cos() * (1.0 + y));
        let lhs = inner(&laplacian_neumann(&v), &v);
        assert_relative_eq!(-lhs, seminorm_h1_sq(&v) , max_relative = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn laplacian_output_sums_to_zero(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid(16);
            let v = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let lap = laplacian_neumann(&v);
            let total: f64 = lap.values().iter().sum();
            prop_assert!(total.abs() <= 1e-12 * norm_max(&lap) * g.cells() as f64 + 1e-13);
        }

        #[test]
        fn div_coeff_grad_output_sums_to_zero(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid(16);
            let v = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let c = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
            let out = div_coeff_grad(&c, &v).unwrap();
            let total: f64 = out.values().iter().sum();
            prop_assert!(total.abs() <= 1e-12 * norm_max(&out) * g.cells() as f64 + 1e-13);
        }

        #[test]
        fn laplacian_is_self_adjoint(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid(12);
            let u = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let v = Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let a = inner(&laplacian_neumann(&u), &v);
            let b = inner(&u, &laplacian_neumann(&v));
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-30));
        }
    }
}
