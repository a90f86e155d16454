//! Interaction kernel family, truncated-domain convolution, the nonlocal
//! operator `B_eps`, and the nonlocal interaction energy `E_eps`.
//!
//! The kernel is `J_eps(z) = rho_eps(|z|) / (eps^(2-alpha) |z|^alpha)` with
//! `rho_eps(r) = eps^-d rho(r/eps)` and a `C^2` compact-support bump
//! `rho(r) = c (1 - r^2)^3` on `[0, 1]`. The coefficient `c` is fixed by the
//! second-moment normalization
//!
//! ```text
//! int_0^inf r^(d+1-alpha) rho(r) dr = 2 / C_dim ,
//! C_dim = int_(S^(d-1)) |sigma . e1|^2
//! ```
//!
//! which is exactly what makes `B_eps(v) = (J_eps * 1) v - J_eps * v`
//! consistent with `-laplacian` as `eps -> 0`. Convolutions integrate over
//! the domain only; the precomputed `J_eps * 1` field carries the resulting
//! boundary truncation.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{inner, Field, GridSpec};

/// Surface integral `int_(S^(d-1)) |sigma . e1|^2`.
pub fn c_dim(d: usize) -> f64 {
    match d {
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => panic!("unsupported dimension {d}"),
    }
}

/// Normalized radial profile of the kernel family.
#[derive(Debug, Clone, Copy)]
pub struct KernelProfile {
    d: usize,
    alpha: f64,
    /// Bump coefficient in `rho(r) = coeff (1 - r^2)^3`.
    coeff: f64,
    /// The constant `int_0^inf r^(d-1-alpha) |rho'(r)| dr`.
    c_alpha_d: f64,
}

impl KernelProfile {
    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn coefficient(&self) -> f64 {
        self.coeff
    }

    /// First-moment constant of the profile derivative (finite by construction).
    #[inline]
    pub fn c_alpha_d(&self) -> f64 {
        self.c_alpha_d
    }

    /// `rho(r) = c (1 - r^2)^3` for `r < 1`, zero beyond.
    pub fn rho(&self, r: f64) -> f64 {
        if r >= 1.0 {
            0.0
        } else {
            let w = 1.0 - r * r;
            self.coeff * w * w * w
        }
    }

    pub fn rho_prime(&self, r: f64) -> f64 {
        if r >= 1.0 {
            0.0
        } else {
            let w = 1.0 - r * r;
            -6.0 * self.coeff * r * w * w
        }
    }

    /// Kernel value `J_eps(z)` for an offset of length `dist`.
    pub fn kernel_value(&self, eps: f64, dist: f64) -> f64 {
        let rho_eps = self.rho(dist / eps) / eps.powi(self.d as i32);
        rho_eps / (eps.powf(2.0 - self.alpha) * dist.powf(self.alpha))
    }
}

/// Build the normalized profile for singularity exponent `alpha` in
/// dimension `d`. Admissible range: `0 <= alpha < max(d - 2, 1)`.
pub fn build_profile(alpha: f64, d: usize) -> Result<KernelProfile> {
    if d != 2 && d != 3 {
        return Err(Error::InvalidParameter(format!("kernel dimension must be 2 or 3, got {d}")));
    }
    let alpha_max = ((d as f64) - 2.0).max(1.0);
    if !(0.0..alpha_max).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "kernel exponent alpha = {alpha} outside [0, {alpha_max})"
        )));
    }
    // int_0^1 r^(d+1-alpha) (1-r^2)^3 dr = 3 / ((s+1)(s+2)(s+3)(s+4)), s = (d-alpha)/2
    let s = (d as f64 - alpha) / 2.0;
    let moment = 3.0 / ((s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0));
    let coeff = 2.0 / c_dim(d) / moment;
    // c_(alpha,d) = 6 c int_0^1 r^(d-alpha) (1-r^2)^2 dr = 6 c / (t(t+1)(t+2)),
    // t = (d-alpha+1)/2
    let t = (d as f64 - alpha + 1.0) / 2.0;
    let c_alpha_d = 6.0 * coeff / (t * (t + 1.0) * (t + 2.0));

    let profile = KernelProfile { d, alpha, coeff, c_alpha_d };

    // Cross-check the closed forms against quadrature before accepting.
    let q_moment = simpson(|r| r.powf(d as f64 + 1.0 - alpha) * profile.rho(r), 0.0, 1.0, 1 << 14);
    if (q_moment - 2.0 / c_dim(d)).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "profile normalization failed quadrature check: {q_moment} vs {}",
            2.0 / c_dim(d)
        )));
    }
    let q_c1 = simpson(
        |r| r.powf(d as f64 - 1.0 - alpha) * profile.rho_prime(r).abs(),
        0.0,
        1.0,
        1 << 14,
    );
    if (q_c1 - c_alpha_d).abs() > 1e-8 * c_alpha_d.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "profile derivative moment failed quadrature check: {q_c1} vs {c_alpha_d}"
        )));
    }
    Ok(profile)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) & !1; // even
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Sampled kernel on grid offsets together with the fast-convolution plan
/// and the precomputed truncated integral `J_eps * 1`.
pub struct DiscreteKernel {
    grid: GridSpec,
    profile: KernelProfile,
    eps: f64,
    /// Stencil half width in cells.
    rs: usize,
    /// Quadrature weights `h^d J_eps(z)` indexed `(dj + rs) (2rs+1) + (di + rs)`.
    stencil: Vec<f64>,
    /// Padded transform size (factors 2, 3, 5 only).
    m: usize,
    kernel_hat: Vec<Complex64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    conv_one: Field,
}

fn next_fast_size(mut min: usize) -> usize {
    loop {
        let mut v = min;
        for p in [2usize, 3, 5] {
            while v.is_multiple_of(p) {
                v /= p;
            }
        }
        if v == 1 {
            return min;
        }
        min += 1;
    }
}

/// Sample the kernel `J_eps` on grid offsets `|z| < eps` with midpoint-rule
/// weights `h^d`. For `alpha > 0` the singular origin cell is weighted by a
/// radial integral of `J_eps` over an equal-area disc instead.
pub fn sample_kernel(profile: &KernelProfile, eps: f64, grid: GridSpec) -> Result<DiscreteKernel> {
    let h = grid.h();
    if eps < 2.0 * h {
        return Err(Error::InvalidParameter(format!(
            "kernel range eps = {eps} is unresolved on h = {h} (need eps >= 2h)"
        )));
    }
    if profile.d != grid.d {
        return Err(Error::InvalidParameter(format!(
            "profile dimension {} does not match grid dimension {}",
            profile.d, grid.d
        )));
    }
    let rs = (eps / h).ceil() as usize;
    let width = 2 * rs + 1;
    let cell = grid.cell_volume();
    let mut stencil = vec![0.0; width * width];
    for dj in -(rs as isize)..=(rs as isize) {
        for di in -(rs as isize)..=(rs as isize) {
            let dist = ((di * di + dj * dj) as f64).sqrt() * h;
            if dist >= eps {
                continue;
            }
            let idx = (dj + rs as isize) as usize * width + (di + rs as isize) as usize;
            if di == 0 && dj == 0 {
                stencil[idx] = if profile.alpha == 0.0 {
                    cell * profile.kernel_value(eps, 0.0_f64.max(f64::MIN_POSITIVE))
                } else {
                    // integrate 2 pi r J_eps(r) over the equal-area disc r < h/sqrt(pi)
                    let r_eq = h / std::f64::consts::PI.sqrt();
                    simpson(
                        |r| {
                            2.0 * std::f64::consts::PI
                                * r.powf(1.0 - profile.alpha)
                                * profile.rho(r / eps)
                                / (eps.powi(profile.d as i32) * eps.powf(2.0 - profile.alpha))
                        },
                        0.0,
                        r_eq,
                        1 << 10,
                    )
                };
            } else {
                stencil[idx] = cell * profile.kernel_value(eps, dist);
            }
        }
    }

    let m = next_fast_size(grid.n + 2 * rs + 1);
    let mut planner = FftPlanner::new();
    let fft_fwd = planner.plan_fft_forward(m);
    let fft_inv = planner.plan_fft_inverse(m);

    // Kernel laid out with the origin offset at index (0, 0), negative
    // offsets wrapped; zero padding realizes the domain-restricted integral.
    let mut kernel_hat = vec![Complex64::new(0.0, 0.0); m * m];
    for dj in -(rs as isize)..=(rs as isize) {
        for di in -(rs as isize)..=(rs as isize) {
            let w = stencil[(dj + rs as isize) as usize * width + (di + rs as isize) as usize];
            if w != 0.0 {
                let wi = di.rem_euclid(m as isize) as usize;
                let wj = dj.rem_euclid(m as isize) as usize;
                kernel_hat[wj * m + wi] = Complex64::new(w, 0.0);
            }
        }
    }
    fft_2d(&mut kernel_hat, m, &*fft_fwd);

    let mut kernel = DiscreteKernel {
        grid,
        profile: *profile,
        eps,
        rs,
        stencil,
        m,
        kernel_hat,
        fft_fwd,
        fft_inv,
        conv_one: Field::zeros(grid),
    };
    kernel.conv_one = kernel.convolve(&Field::constant(grid, 1.0));
    if kernel.conv_one.values().iter().any(|&v| v <= 0.0 || v.is_nan()) {
        return Err(Error::InvalidParameter(
            "kernel truncation produced a nonpositive J_eps * 1 value".into(),
        ));
    }
    Ok(kernel)
}

fn fft_2d(data: &mut [Complex64], m: usize, fft: &dyn Fft<f64>) {
    for row in data.chunks_exact_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..m {
        for j in 0..m {
            col[j] = data[j * m + i];
        }
        fft.process(&mut col);
        for j in 0..m {
            data[j * m + i] = col[j];
        }
    }
}

impl DiscreteKernel {
    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    #[inline]
    pub fn stencil_radius(&self) -> usize {
        self.rs
    }

    /// Quadrature weight `h^d J_eps(z)` for offset `(di, dj)`.
    pub fn weight(&self, di: isize, dj: isize) -> f64 {
        let rs = self.rs as isize;
        if di.abs() > rs || dj.abs() > rs {
            return 0.0;
        }
        let width = 2 * self.rs + 1;
        self.stencil[(dj + rs) as usize * width + (di + rs) as usize]
    }

    /// Precomputed `(J_eps * 1)(x)`; strictly positive, smaller near the
    /// boundary where the integration domain is truncated.
    #[inline]
    pub fn conv_one(&self) -> &Field {
        &self.conv_one
    }

    /// Truncated convolution `(J_eps * v)(x) = h^d sum_y J_eps(x - y) v(y)`
    /// over the domain, evaluated by zero-padded FFT.
    pub fn convolve(&self, v: &Field) -> Field {
        assert_eq!(v.grid(), self.grid, "field grid does not match kernel grid");
        let n = self.grid.n;
        let m = self.m;
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
        for j in 0..n {
            for i in 0..n {
                buf[j * m + i] = Complex64::new(v.values()[j * n + i], 0.0);
            }
        }
        fft_2d(&mut buf, m, &*self.fft_fwd);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        fft_2d(&mut buf, m, &*self.fft_inv);
        let scale = 1.0 / (m * m) as f64;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                out[j * n + i] = buf[j * m + i].re * scale;
            }
        }
        Field::from_values(self.grid, out).expect("size preserved")
    }

    /// Nonlocal operator `B_eps(v) = (J_eps * 1) v - J_eps * v`.
    pub fn b_eps(&self, v: &Field) -> Field {
        let conv = self.convolve(v);
        let mut out = self.conv_one.zip_with(v, |k, x| k * x);
        out.axpy(-1.0, &conv);
        out
    }

    /// Nonlocal interaction energy
    /// `E_eps(v) = 1/4 int int J_eps(x-y) |v(x)-v(y)|^2 = 1/2 <B_eps v, v>`.
    pub fn energy_eps(&self, v: &Field) -> f64 {
        0.5 * inner(&self.b_eps(v), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian_neumann, norm_max};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    /// Independent quadrature oracle (composite Simpson).
    fn oracle_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n & !1;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
        }
        acc * h / 3.0
    }

    fn random_field(g: GridSpec, seed: u64) -> Field {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Field::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn profile_normalization_matches_quadrature_oracle() {
        for (alpha, d) in [(0.0, 2), (0.5, 2), (0.0, 3), (0.7, 3)] {
            let p = build_profile(alpha, d).unwrap();
            let q = oracle_simpson(
                |r| r.powf(d as f64 + 1.0 - alpha) * p.rho(r),
                0.0,
                1.0,
                1 << 15,
            );
            assert!(
                (q - 2.0 / c_dim(d)).abs() <= 1e-10,
                "normalization off for alpha={alpha}, d={d}: {q}"
            );
        }
    }

    #[test]
    fn profile_is_c2_at_support_edge() {
        let p = build_profile(0.0, 2).unwrap();
        assert_eq!(p.rho(1.0), 0.0);
        assert_eq!(p.rho_prime(1.0), 0.0);
        // rho grows cubically off the edge, so the one-sided second
        // difference shrinks linearly in the probe width
        let d = 1e-6;
        let d2 = (p.rho(1.0 - d) - 2.0 * p.rho(1.0) + p.rho(1.0 + d)) / (d * d);
        assert!(d2.abs() < 1e-3, "rho'' at edge = {d2}");
    }

    #[test]
    fn derivative_moment_is_finite_and_positive() {
        let p = build_profile(0.0, 2).unwrap();
        let q = oracle_simpson(|r| r * p.rho_prime(r).abs(), 0.0, 1.0, 1 << 15);
        assert!(p.c_alpha_d() > 0.0 && p.c_alpha_d().is_finite());
        assert_relative_eq!(q, p.c_alpha_d(), max_relative = 1e-9);
    }

    #[test]
    fn rejects_out_of_range_alpha() {
        assert!(build_profile(-0.1, 2).is_err());
        assert!(build_profile(1.0, 2).is_err());
        assert!(build_profile(1.0, 3).is_err());
        assert!(build_profile(0.99, 3).is_ok());
    }

    #[test]
    fn rejects_unresolved_range() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        assert!(sample_kernel(&p, 1.0 / 16.0, g).is_err()); // eps = h
        assert!(sample_kernel(&p, 3.0 / 16.0, g).is_ok());
    }

    #[test]
    fn stencil_is_symmetric() {
        let g = GridSpec::square(32, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 0.25, g).unwrap();
        let rs = k.stencil_radius() as isize;
        for dj in -rs..=rs {
            for di in -rs..=rs {
                assert_eq!(k.weight(di, dj), k.weight(-di, -dj));
                assert!(k.weight(di, dj) >= 0.0);
            }
        }
    }

    #[test]
    fn conv_one_center_matches_radial_quadrature() {
        // eps = 16 h, center far from the boundary truncation
        let g = GridSpec::square(128, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let eps = 16.0 / 128.0;
        let k = sample_kernel(&p, eps, g).unwrap();
        let total = oracle_simpson(
            |r| 2.0 * PI * r * p.kernel_value(eps, r.max(1e-300)),
            0.0,
            eps,
            1 << 14,
        );
        let center = k.conv_one().at(64, 64);
        assert_relative_eq!(center, total, max_relative = 1e-3);
        // boundary truncation reduces the integral
        assert!(k.conv_one().at(0, 0) < center);
        assert!(k.conv_one().at(0, 64) < center);
    }

    #[test]
    fn fast_convolution_matches_direct_summation() {
        let g = GridSpec::square(32, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 8.0 / 32.0, g).unwrap();
        let v = random_field(g, 3);
        let fast = k.convolve(&v);
        // brute-force direct summation oracle
        let rs = k.stencil_radius() as isize;
        let n = g.n as isize;
        let mut direct = Field::zeros(g);
        for j in 0..n {
            for i in 0..n {
                let mut acc = 0.0;
                for dj in -rs..=rs {
                    for di in -rs..=rs {
                        let (si, sj) = (i - di, j - dj);
                        if si >= 0 && si < n && sj >= 0 && sj < n {
                            acc += k.weight(di, dj) * v.at(si as usize, sj as usize);
                        }
                    }
                }
                direct.values_mut()[(j * n + i) as usize] = acc;
            }
        }
        let scale = norm_max(&direct);
        for (a, b) in fast.values().iter().zip(direct.values()) {
            assert!((a - b).abs() <= 1e-12 * scale, "fast {a} vs direct {b}");
        }
    }

    #[test]
    fn convolution_is_linear() {
        let g = GridSpec::square(24, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 0.25, g).unwrap();
        let u = random_field(g, 5);
        let v = random_field(g, 6);
        let mut combo = u.clone();
        combo.scale(1.7);
        combo.axpy(-0.4, &v);
        let lhs = k.convolve(&combo);
        let mut rhs = k.convolve(&u);
        rhs.scale(1.7);
        rhs.axpy(-0.4, &k.convolve(&v));
        let scale = norm_max(&lhs).max(1.0);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn b_eps_annihilates_constants() {
        let g = GridSpec::square(32, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 0.25, g).unwrap();
        let v = Field::constant(g, 0.75);
        let out = k.b_eps(&v);
        let kappa = norm_max(k.conv_one());
        assert!(norm_max(&out) <= 1e-13 * kappa, "residue {}", norm_max(&out));
        assert!(k.energy_eps(&v).abs() <= 1e-12 * kappa);
    }

    #[test]
    fn b_eps_is_self_adjoint_and_nonnegative() {
        let g = GridSpec::square(24, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 0.25, g).unwrap();
        let u = random_field(g, 8);
        let v = random_field(g, 9);
        let a = inner(&k.b_eps(&u), &v);
        let b = inner(&u, &k.b_eps(&v));
        assert_relative_eq!(a, b, max_relative = 1e-10);
        assert!(k.energy_eps(&u) >= 0.0);
        assert_relative_eq!(inner(&k.b_eps(&u), &u), 2.0 * k.energy_eps(&u), max_relative = 1e-12);
    }

    #[test]
    fn energy_matches_double_integral_form() {
        let g = GridSpec::square(24, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 0.25, g).unwrap();
        let v = random_field(g, 11);
        // E = 1/4 h^(2d) sum_x sum_y J(x-y) (v(x)-v(y))^2, brute force
        let n = g.n as isize;
        let rs = k.stencil_radius() as isize;
        let cell = g.cell_volume();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                for dj in -rs..=rs {
                    for di in -rs..=rs {
                        let (si, sj) = (i - di, j - dj);
                        if si >= 0 && si < n && sj >= 0 && sj < n {
                            let dv = v.at(i as usize, j as usize)
                                - v.at(si as usize, sj as usize);
                            acc += k.weight(di, dj) * dv * dv;
                        }
                    }
                }
            }
        }
        let direct = 0.25 * acc * cell; // one h^d in the weights, one here
        assert_relative_eq!(k.energy_eps(&v), direct, max_relative = 1e-10);
    }

    #[test]
    fn b_eps_consistent_with_laplacian_on_cosine() {
        // interior relative error of B_eps v vs -lap v for v = cos(pi x/L),
        // strictly decreasing over eps in {L/4, L/8, L/16} at n = 128
        let g = GridSpec::square(128, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let v = Field::from_fn(g, |x, _| (PI * x).cos());
        let exact = Field::from_fn(g, |x, _| PI * PI * (PI * x).cos()); // -lap v
        let mut errors = Vec::new();
        for eps in [0.25, 0.125, 0.0625] {
            let k = sample_kernel(&p, eps, g).unwrap();
            let b = k.b_eps(&v);
            let margin = (eps / g.h()).ceil() as usize;
            let mut err: f64 = 0.0;
            for j in margin..(g.n - margin) {
                for i in margin..(g.n - margin) {
                    err = err.max((b.at(i, j) - exact.at(i, j)).abs());
                }
            }
            errors.push(err / (PI * PI));
        }
        assert!(errors[1] <= 0.05, "relative error at eps=L/8: {}", errors[1]);
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "not monotone: {errors:?}");
        // discrete-Laplacian comparison from the same run
        let k = sample_kernel(&p, 0.125, g).unwrap();
        let b = k.b_eps(&v);
        let lap = laplacian_neumann(&v);
        let margin = (0.125 / g.h()).ceil() as usize;
        let mut err: f64 = 0.0;
        let mut lap_max: f64 = 0.0;
        for j in margin..(g.n - margin) {
            for i in margin..(g.n - margin) {
                err = err.max((b.at(i, j) + lap.at(i, j)).abs());
                lap_max = lap_max.max(lap.at(i, j).abs());
            }
        }
        assert!(err / lap_max <= 0.05);
    }

    #[test]
    fn energy_consistent_with_dirichlet_energy() {
        // E_eps(cos(pi x)) -> 1/2 int |grad|^2 = pi^2 / 4 on the unit square
        let g = GridSpec::square(128, 1.0).unwrap();
        let p = build_profile(0.0, 2).unwrap();
        let k = sample_kernel(&p, 0.125, g).unwrap();
        let v = Field::from_fn(g, |x, _| (PI * x).cos());
        let e = k.energy_eps(&v);
        assert_relative_eq!(e, PI * PI / 4.0, max_relative = 0.05);
    }

    #[test]
    fn singular_alpha_kernel_still_consistent() {
        // alpha > 0 exercises the origin-cell quadrature; the rho2
        // normalization keeps B_eps consistent with -lap
        let g = GridSpec::square(96, 1.0).unwrap();
        let p = build_profile(0.5, 2).unwrap();
        let k = sample_kernel(&p, 0.125, g).unwrap();
        let v = Field::from_fn(g, |x, _| (PI * x).cos());
        let margin = k.stencil_radius();
        let b = k.b_eps(&v);
        let mut err: f64 = 0.0;
        for j in margin..(g.n - margin) {
            for i in margin..(g.n - margin) {
                err = err.max((b.at(i, j) - PI * PI * (PI * v.grid().center(i, j).0).cos()).abs());
            }
        }
        assert!(err / (PI * PI) <= 0.08, "relative error {}", err / (PI * PI));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn direct_convolve(k: &DiscreteKernel, v: &Field) -> Field {
            let g = v.grid();
            let (n, rs) = (g.n as isize, k.stencil_radius() as isize);
            let mut out = Field::zeros(g);
            for j in 0..n {
                for i in 0..n {
                    let mut acc = 0.0;
                    for dj in -rs..=rs {
                        for di in -rs..=rs {
                            let (si, sj) = (i - di, j - dj);
                            if si >= 0 && si < n && sj >= 0 && sj < n {
                                acc += k.weight(di, dj) * v.at(si as usize, sj as usize);
                            }
                        }
                    }
                    out.values_mut()[(j * n + i) as usize] = acc;
                }
            }
            out
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]

            #[test]
            fn fast_path_matches_direct_everywhere(
                seed in any::<u64>(),
                n in prop::sample::select(vec![16usize, 24, 32]),
                eps_cells in 4usize..9,
            ) {
                use rand::{Rng, SeedableRng};
                let g = GridSpec::square(n, 1.0).unwrap();
                let p = build_profile(0.0, 2).unwrap();
                let eps = eps_cells as f64 * g.h();
                prop_assume!(eps >= 2.0 * g.h());
                let k = sample_kernel(&p, eps, g).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let v = Field::from_values(
                    g,
                    (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let fast = k.convolve(&v);
                let direct = direct_convolve(&k, &v);
                let scale = norm_max(&direct).max(1e-30);
                for (a, b) in fast.values().iter().zip(direct.values()) {
                    prop_assert!((a - b).abs() <= 1e-12 * scale);
                }
            }

            #[test]
            fn b_eps_quadratic_form_is_nonnegative(seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let g = GridSpec::square(20, 1.0).unwrap();
                let p = build_profile(0.0, 2).unwrap();
                let k = sample_kernel(&p, 0.25, g).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let v = Field::from_values(
                    g,
                    (0..g.cells()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
                .unwrap();
                prop_assert!(k.energy_eps(&v) >= 0.0);
                prop_assert!(
                    (inner(&k.b_eps(&v), &v) - 2.0 * k.energy_eps(&v)).abs()
                        <= 1e-12 * k.energy_eps(&v).max(1.0)
                );
            }
        }
    }
}
