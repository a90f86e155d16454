//! Constitutive functions of the model: the double-well potential, the
//! proliferation function, the therapy interpolation function, the chemical
//! reaction term, and validation of the standing parameter assumptions.

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::kernel::DiscreteKernel;

/// Double-well potential. Only the quartic well is implemented; singular
/// (logarithmic) potentials are out of scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Potential {
    #[default]
    Quartic,
}

impl Potential {
    /// `psi(r) = 1/4 (1 - r^2)^2`
    #[inline]
    pub fn psi(&self, r: f64) -> f64 {
        let w = 1.0 - r * r;
        0.25 * w * w
    }

    /// `psi'(r) = r^3 - r`
    #[inline]
    pub fn psi_prime(&self, r: f64) -> f64 {
        r * r * r - r
    }

    /// `psi''(r) = 3 r^2 - 1`
    #[inline]
    pub fn psi_second(&self, r: f64) -> f64 {
        3.0 * r * r - 1.0
    }

    /// Coercivity constant: `psi'(r) r >= c_psi r^2 - 1/c_psi`.
    #[inline]
    pub fn c_psi(&self) -> f64 {
        1.0
    }

    /// Semiconvexity constant: `psi''(r) >= -big_c_psi` (minimum at r = 0).
    #[inline]
    pub fn big_c_psi(&self) -> f64 {
        1.0
    }
}

/// Half width of the Hermite blend that smooths the proliferation kinks.
const PROLIF_BLEND: f64 = 0.1;

/// Proliferation rates at the pure phases. The piecewise-linear ramp from
/// `p0` at the healthy phase to `p1` at the tumor phase is blended to `C^1`
/// over `|s -+ 1| < 0.1` so its derivative is usable in the dual system;
/// outside the blend zones it matches the ramp exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProliferationParams {
    pub p0: f64,
    pub p1: f64,
}

impl ProliferationParams {
    pub fn new(p0: f64, p1: f64) -> Self {
        ProliferationParams { p0, p1 }
    }

    #[inline]
    fn slope(&self) -> f64 {
        (self.p1 - self.p0) / 2.0
    }

    /// Cubic Hermite on `[a, a + 2 delta]` matching `(value, slope)` pairs of
    /// the two adjacent linear pieces.
    fn blend(&self, s: f64, a: f64, y0: f64, m0: f64, y1: f64, m1: f64) -> (f64, f64) {
        let w = 2.0 * PROLIF_BLEND;
        let t = (s - a) / w;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let value = h00 * y0 + h10 * w * m0 + h01 * y1 + h11 * w * m1;
        let d_h00 = (6.0 * t2 - 6.0 * t) / w;
        let d_h10 = (3.0 * t2 - 4.0 * t + 1.0) / w;
        let d_h01 = (-6.0 * t2 + 6.0 * t) / w;
        let d_h11 = (3.0 * t2 - 2.0 * t) / w;
        let deriv = d_h00 * y0 + d_h10 * w * m0 + d_h01 * y1 + d_h11 * w * m1;
        (value, deriv)
    }

    fn eval(&self, s: f64) -> (f64, f64) {
        let d = PROLIF_BLEND;
        let k = self.slope();
        let ramp = |s: f64| k * (s + 1.0) + self.p0;
        if s <= -1.0 - d {
            (self.p0, 0.0)
        } else if s < -1.0 + d {
            self.blend(s, -1.0 - d, self.p0, 0.0, ramp(-1.0 + d), k)
        } else if s <= 1.0 - d {
            (ramp(s), k)
        } else if s < 1.0 + d {
            self.blend(s, 1.0 - d, ramp(1.0 - d), k, self.p1, 0.0)
        } else {
            (self.p1, 0.0)
        }
    }

    /// Smoothed proliferation rate `P(s)`.
    #[inline]
    pub fn prolif(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    /// Derivative `P'(s)`.
    #[inline]
    pub fn prolif_prime(&self, s: f64) -> f64 {
        self.eval(s).1
    }
}

/// Smoothstep interpolation `h(s)` distributing the radiotherapy control
/// over the tumor phase: zero at the healthy phase, `h_scale` at the tumor
/// phase, monotone and `C^1` in between.
#[inline]
pub fn interp_h(h_scale: f64, s: f64) -> f64 {
    let t = ((s + 1.0) / 2.0).clamp(0.0, 1.0);
    h_scale * t * t * (3.0 - 2.0 * t)
}

/// Derivative of [`interp_h`] in `s`.
#[inline]
pub fn interp_h_prime(h_scale: f64, s: f64) -> f64 {
    let t = (s + 1.0) / 2.0;
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else {
        h_scale * (6.0 * t - 6.0 * t * t) * 0.5
    }
}

/// Full parameter set of the coupled model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Viscosity coefficient of the phase equation (> 0).
    pub tau: f64,
    /// Chemotaxis coupling (>= 0, below `sqrt(c_psi)`).
    pub chi: f64,
    /// Constant mobility of the phase equation.
    pub mobility_m: f64,
    /// Constant mobility of the nutrient equation.
    pub mobility_n: f64,
    pub potential: Potential,
    pub prolif: ProliferationParams,
    /// Amplitude of the therapy interpolation function.
    pub h_scale: f64,
    /// Stabilization shift of the time stepper (>= big_c_psi).
    pub stabilization: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            tau: 1.0,
            chi: 0.25,
            mobility_m: 1.0,
            mobility_n: 1.0,
            potential: Potential::Quartic,
            prolif: ProliferationParams::new(0.5, 1.5),
            h_scale: 1.0,
            stabilization: 2.0,
        }
    }
}

impl ModelParams {
    /// Reaction term `R = P(phi) (sigma + chi (1 - phi) - mu)` pointwise.
    pub fn reaction(&self, phi: &Field, sigma: &Field, mu: &Field) -> Field {
        assert_eq!(phi.grid(), sigma.grid(), "fields live on different grids");
        assert_eq!(phi.grid(), mu.grid(), "fields live on different grids");
        let mut out = phi.clone();
        let (pv, sv, mv) = (phi.values(), sigma.values(), mu.values());
        for (k, o) in out.values_mut().iter_mut().enumerate() {
            *o = self.prolif.prolif(pv[k]) * (sv[k] + self.chi * (1.0 - pv[k]) - mv[k]);
        }
        out
    }
}

/// Outcome of a single assumption check.
#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    /// Assumption label (A2, A3, A4, B2, B4, ...).
    pub name: &'static str,
    pub passed: bool,
    /// Distance to the admissibility boundary (positive when satisfied).
    pub margin: f64,
    pub detail: String,
}

/// Report of [`validate_assumptions`].
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl std::fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:4} {}  margin {:+.4e}  {}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.margin,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Check the standing assumptions for a parameter set, including the
/// discrete positivity surrogate `min_x (J_eps * 1)(x) + min_r psi''(r) > chi^2`
/// when a kernel is supplied.
pub fn validate_assumptions(params: &ModelParams, kernel: Option<&DiscreteKernel>) -> AssumptionReport {
    let mut checks = Vec::new();
    let pot = params.potential;

    checks.push(AssumptionCheck {
        name: "A2",
        passed: pot.c_psi() > 0.0 && pot.big_c_psi() >= 0.0,
        margin: pot.c_psi(),
        detail: format!("potential constants c_psi = {}, C_psi = {}", pot.c_psi(), pot.big_c_psi()),
    });

    let chi_bound = pot.c_psi().sqrt();
    checks.push(AssumptionCheck {
        name: "A3",
        passed: params.tau > 0.0 && (0.0..chi_bound).contains(&params.chi),
        margin: chi_bound - params.chi,
        detail: format!(
            "tau = {} > 0 and chi = {} in [0, sqrt(c_psi) = {chi_bound})",
            params.tau, params.chi
        ),
    });

    let (m_lo, m_hi) = (params.mobility_m.min(params.mobility_n), params.mobility_m.max(params.mobility_n));
    checks.push(AssumptionCheck {
        name: "A4",
        passed: m_lo > 0.0 && m_hi.is_finite(),
        margin: m_lo,
        detail: format!("mobilities in [{m_lo}, {m_hi}]"),
    });

    let p_min = params.prolif.p0.min(params.prolif.p1);
    checks.push(AssumptionCheck {
        name: "B4",
        passed: p_min > 0.0,
        margin: p_min,
        detail: format!("proliferation lower bound {p_min}"),
    });

    if let Some(k) = kernel {
        let min_conv_one =
            k.conv_one().values().iter().cloned().fold(f64::INFINITY, f64::min);
        let margin = min_conv_one - pot.big_c_psi() - params.chi * params.chi;
        checks.push(AssumptionCheck {
            name: "B2",
            passed: margin > 0.0,
            margin,
            detail: format!(
                "min (J_eps * 1) = {min_conv_one:.4} vs C_psi + chi^2 = {}",
                pot.big_c_psi() + params.chi * params.chi
            ),
        });
    }

    let s_margin = params.stabilization - pot.big_c_psi();
    checks.push(AssumptionCheck {
        name: "S",
        passed: s_margin >= 0.0,
        margin: s_margin,
        detail: format!(
            "stabilization {} vs semiconvexity constant {}",
            params.stabilization,
            pot.big_c_psi()
        ),
    });

    AssumptionReport { checks }
}

/// Convenience: error out when any assumption fails.
pub fn require_assumptions(params: &ModelParams, kernel: Option<&DiscreteKernel>) -> Result<()> {
    let report = validate_assumptions(params, kernel);
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        let details: Vec<String> =
            report.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        Err(Error::InvalidParameter(format!(
            "assumption check failed for {}: {}",
            names.join(", "),
            details.join("; ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::kernel::{build_profile, sample_kernel};
    use approx::assert_relative_eq;

    #[test]
    fn quartic_potential_values() {
        let p = Potential::Quartic;
        assert_eq!(p.psi(1.0), 0.0);
        assert_eq!(p.psi(-1.0), 0.0);
        assert_eq!(p.psi(0.0), 0.25);
        assert_eq!(p.psi_prime(0.0), 0.0);
        assert_eq!(p.psi_second(0.0), -1.0);
    }

    #[test]
    fn potential_derivatives_match_finite_differences() {
        let p = Potential::Quartic;
        let d = 1e-5;
        for k in -20..=20 {
            let r = k as f64 / 10.0;
            let fd1 = (p.psi(r + d) - p.psi(r - d)) / (2.0 * d);
            let fd2 = (p.psi_prime(r + d) - p.psi_prime(r - d)) / (2.0 * d);
            assert_relative_eq!(fd1, p.psi_prime(r), max_relative = 1e-6, epsilon = 1e-8);
            assert_relative_eq!(fd2, p.psi_second(r), max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn prolif_matches_ramp_outside_blend() {
        let p = ProliferationParams::new(0.5, 1.5);
        assert_eq!(p.prolif(-2.0), 0.5);
        assert_eq!(p.prolif(2.0), 1.5);
        assert_eq!(p.prolif(0.0), 1.0); // midpoint of the linear branch
        assert_eq!(p.prolif_prime(0.0), 0.5);
    }

    #[test]
    fn prolif_stays_within_bounds() {
        let p = ProliferationParams::new(0.5, 1.5);
        for k in -1000..=1000 {
            let s = k as f64 / 100.0;
            let v = p.prolif(s);
            assert!((0.5..=1.5).contains(&v), "P({s}) = {v} escapes [P0, P1]");
        }
        // decreasing variant
        let q = ProliferationParams::new(1.5, 0.5);
        for k in -1000..=1000 {
            let s = k as f64 / 100.0;
            let v = q.prolif(s);
            assert!((0.5..=1.5).contains(&v));
        }
    }

    #[test]
    fn prolif_derivative_matches_finite_differences() {
        let p = ProliferationParams::new(0.5, 1.5);
        let d = 1e-6;
        for k in 0..20 {
            let s = -2.0 + 4.0 * k as f64 / 19.0;
            let fd = (p.prolif(s + d) - p.prolif(s - d)) / (2.0 * d);
            assert_relative_eq!(fd, p.prolif_prime(s), max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn prolif_is_continuous_at_blend_edges() {
        let p = ProliferationParams::new(0.5, 1.5);
        for edge in [-1.1, -0.9, 0.9, 1.1] {
            let below = p.prolif(edge - 1e-9);
            let above = p.prolif(edge + 1e-9);
            assert!((below - above).abs() < 1e-7);
            let dbelow = p.prolif_prime(edge - 1e-9);
            let dabove = p.prolif_prime(edge + 1e-9);
            assert!((dbelow - dabove).abs() < 1e-5);
        }
    }

    #[test]
    fn interp_h_endpoints_and_sign() {
        assert_eq!(interp_h(1.0, -1.0), 0.0);
        assert_eq!(interp_h(1.0, 1.0), 1.0);
        assert_eq!(interp_h(2.5, 1.0), 2.5);
        for k in -300..=300 {
            let s = k as f64 / 100.0;
            assert!(interp_h(1.0, s) >= 0.0);
        }
    }

    #[test]
    fn interp_h_derivative_matches_finite_differences() {
        let d = 1e-6;
        for k in 0..20 {
            let s = -0.95 + 1.9 * k as f64 / 19.0;
            let fd = (interp_h(1.5, s + d) - interp_h(1.5, s - d)) / (2.0 * d);
            assert_relative_eq!(fd, interp_h_prime(1.5, s), max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn reaction_spot_values() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let params = ModelParams {
            chi: 0.25,
            prolif: ProliferationParams::new(0.5, 1.5),
            ..Default::default()
        };
        let phi = Field::zeros(g);
        let sigma = Field::constant(g, 1.0);
        let mu = Field::zeros(g);
        let r = params.reaction(&phi, &sigma, &mu);
        // P(0) = 1, R = 1 * (1 + 0.25 - 0) = 1.25
        for &v in r.values() {
            assert_relative_eq!(v, 1.25, max_relative = 1e-14);
        }
        // chi = 0, sigma = mu gives zero
        let params0 = ModelParams { chi: 0.0, ..params };
        let r0 = params0.reaction(&phi, &sigma, &sigma.clone());
        assert!(r0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn validation_flags_bad_parameters() {
        let good = ModelParams::default();
        assert!(validate_assumptions(&good, None).all_passed());

        let bad_chi = ModelParams { chi: 1.5, ..Default::default() };
        let report = validate_assumptions(&bad_chi, None);
        assert!(!report.all_passed());
        assert!(report.failures().any(|c| c.name == "A3"));

        let bad_p = ModelParams {
            prolif: ProliferationParams::new(0.0, 1.0),
            ..Default::default()
        };
        let report = validate_assumptions(&bad_p, None);
        assert!(report.failures().any(|c| c.name == "B4"));
    }

    #[test]
    fn discrete_positivity_check_uses_kernel() {
        let g = GridSpec::square(64, 1.0).unwrap();
        let profile = build_profile(0.0, 2).unwrap();
        let kernel = sample_kernel(&profile, 0.125, g).unwrap();
        let params = ModelParams { chi: 0.25, ..Default::default() };
        let report = validate_assumptions(&params, Some(&kernel));
        let b2 = report.checks.iter().find(|c| c.name == "B2").unwrap();
        assert!(b2.passed, "{}", b2.detail);
        assert!(b2.margin > 0.0);
    }
}
