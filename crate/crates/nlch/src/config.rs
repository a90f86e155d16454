//! Plain-text run configuration: `section.key = value` lines, `#` comments,
//! unknown keys rejected. A run is reproducible from (config, seed) alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::control::{ControlBounds, CostSpec, OptimizeOpts, Target};
use crate::error::{Error, Result};
use crate::forward::ControlPair;
use crate::grid::{Field, GridSpec, TimeGrid};
use crate::io;
use crate::kernel::{build_profile, sample_kernel, DiscreteKernel};
use crate::physics::{ModelParams, Potential, ProliferationParams};

/// A spatial profile specifier for initial data, targets, and bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Constant(f64),
    /// `base + amp exp(-((x-cx)^2+(y-cy)^2) / (2 width^2))`
    GaussianBump { base: f64, amp: f64, cx: f64, cy: f64, width: f64 },
    /// Two Gaussian bumps of equal width on a common base.
    TwoBump { base: f64, amp: f64, c1: (f64, f64), c2: (f64, f64), width: f64 },
    /// First record of a CHF1 snapshot file.
    File(String),
}

impl Shape {
    pub fn parse(text: &str) -> Result<Shape> {
        let mut parts = text.split_whitespace();
        let kind = parts
            .next()
            .ok_or_else(|| Error::Parse("empty shape specifier".into()))?;
        let nums: Vec<f64> = parts
            .clone()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("non-numeric shape parameter in '{text}'")))
            .unwrap_or_default();
        let expect = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!(
                    "shape '{kind}' expects {n} parameters, got {} in '{text}'",
                    nums.len()
                )))
            }
        };
        match kind {
            "constant" => {
                expect(1)?;
                Ok(Shape::Constant(nums[0]))
            }
            "gaussian-bump" => {
                expect(5)?;
                Ok(Shape::GaussianBump {
                    base: nums[0],
                    amp: nums[1],
                    cx: nums[2],
                    cy: nums[3],
                    width: nums[4],
                })
            }
            "two-bump" => {
                expect(7)?;
                Ok(Shape::TwoBump {
                    base: nums[0],
                    amp: nums[1],
                    c1: (nums[2], nums[3]),
                    c2: (nums[4], nums[5]),
                    width: nums[6],
                })
            }
            "file" => {
                let path: Vec<&str> = parts.collect();
                if path.len() != 1 {
                    return Err(Error::Parse(format!("shape 'file' expects one path in '{text}'")));
                }
                Ok(Shape::File(path[0].to_string()))
            }
            other => Err(Error::Parse(format!("unknown shape '{other}'"))),
        }
    }

    pub fn build(&self, grid: GridSpec) -> Result<Field> {
        match self {
            Shape::Constant(c) => Ok(Field::constant(grid, *c)),
            Shape::GaussianBump { base, amp, cx, cy, width } => Ok(Field::from_fn(grid, |x, y| {
                base + amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * width * width)).exp()
            })),
            Shape::TwoBump { base, amp, c1, c2, width } => Ok(Field::from_fn(grid, |x, y| {
                let b1 = (-((x - c1.0).powi(2) + (y - c1.1).powi(2)) / (2.0 * width * width)).exp();
                let b2 = (-((x - c2.0).powi(2) + (y - c2.1).powi(2)) / (2.0 * width * width)).exp();
                base + amp * (b1 + b2)
            })),
            Shape::File(path) => {
                let f = io::load_field(path)?;
                if f.grid() != grid {
                    return Err(Error::Parse(format!(
                        "snapshot '{path}' grid does not match the configured grid"
                    )));
                }
                Ok(f)
            }
        }
    }

    fn render(&self) -> String {
        match self {
            Shape::Constant(c) => format!("constant {c}"),
            Shape::GaussianBump { base, amp, cx, cy, width } => {
                format!("gaussian-bump {base} {amp} {cx} {cy} {width}")
            }
            Shape::TwoBump { base, amp, c1, c2, width } => {
                format!("two-bump {base} {amp} {} {} {} {} {width}", c1.0, c1.1, c2.0, c2.1)
            }
            Shape::File(p) => format!("file {p}"),
        }
    }
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid_n: usize,
    pub grid_length: f64,
    pub t_final: f64,
    pub steps: usize,
    pub mode: String,
    pub tau: f64,
    pub chi: f64,
    pub p0: f64,
    pub p1: f64,
    pub h_scale: f64,
    pub stabilization: f64,
    pub mobility_m: f64,
    pub mobility_n: f64,
    pub potential: String,
    pub kernel_alpha: f64,
    pub kernel_epsilon: Option<f64>,
    pub kernel_epsilons: Vec<f64>,
    pub init_phi: Shape,
    pub init_sigma: Shape,
    pub alpha_omega: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub alpha_u: f64,
    pub beta_w: f64,
    pub phi_omega: Shape,
    pub phi_q: Shape,
    pub sigma_q: Shape,
    pub u_min: f64,
    pub u_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub init_step: f64,
    pub max_backtracks: usize,
    pub init_u: Shape,
    pub init_w: Shape,
    pub gradcheck_sigma0: f64,
    pub gradcheck_levels: usize,
    pub gradcheck_slope_min: f64,
    pub gradcheck_slope_max: f64,
    pub gradcheck_fo_err_max: f64,
    pub snapshot_stride: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_n: 64,
            grid_length: 1.0,
            t_final: 0.02,
            steps: 200,
            mode: "local".into(),
            tau: 1.0,
            chi: 0.25,
            p0: 0.5,
            p1: 1.5,
            h_scale: 1.0,
            stabilization: 2.0,
            mobility_m: 1.0,
            mobility_n: 1.0,
            potential: "quartic".into(),
            kernel_alpha: 0.0,
            kernel_epsilon: None,
            kernel_epsilons: Vec::new(),
            init_phi: Shape::GaussianBump { base: -0.9, amp: 1.8, cx: 0.5, cy: 0.5, width: 0.1 },
            init_sigma: Shape::Constant(0.5),
            alpha_omega: 0.0,
            alpha_q: 0.0,
            beta_q: 0.0,
            alpha_u: 0.0,
            beta_w: 0.0,
            phi_omega: Shape::Constant(0.0),
            phi_q: Shape::Constant(0.0),
            sigma_q: Shape::Constant(0.0),
            u_min: 0.0,
            u_max: 2.0,
            w_min: -1.0,
            w_max: 1.0,
            max_iters: 100,
            tol: 1e-3,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            init_step: 1.0,
            max_backtracks: 40,
            init_u: Shape::Constant(0.0),
            init_w: Shape::Constant(0.0),
            gradcheck_sigma0: 0.25,
            gradcheck_levels: 6,
            gradcheck_slope_min: 1.7,
            gradcheck_slope_max: f64::INFINITY,
            gradcheck_fo_err_max: 0.02,
            snapshot_stride: 0,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(k) => &raw[..k],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Parse(format!("duplicate key '{key}'")));
            }
        }
        Self::from_map(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut take = |key: &str| map.remove(key);
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse::<T>().map_err(|_| Error::Parse(format!("invalid value '{v}' for '{key}'")))
        }

        macro_rules! set {
            ($key:literal, $field:ident, $ty:ty) => {
                if let Some(v) = take($key) {
                    cfg.$field = num::<$ty>($key, v)?;
                }
            };
        }
        macro_rules! set_shape {
            ($key:literal, $field:ident) => {
                if let Some(v) = take($key) {
                    cfg.$field = Shape::parse(&v)?;
                }
            };
        }

        set!("grid.n", grid_n, usize);
        set!("grid.length", grid_length, f64);
        set!("time.t_final", t_final, f64);
        set!("time.steps", steps, usize);
        if let Some(v) = take("mode") {
            if v != "local" && v != "nonlocal" {
                return Err(Error::Parse(format!("mode must be 'local' or 'nonlocal', got '{v}'")));
            }
            cfg.mode = v;
        }
        set!("model.tau", tau, f64);
        set!("model.chi", chi, f64);
        set!("model.p0", p0, f64);
        set!("model.p1", p1, f64);
        set!("model.h_scale", h_scale, f64);
        set!("model.stabilization", stabilization, f64);
        set!("model.mobility_m", mobility_m, f64);
        set!("model.mobility_n", mobility_n, f64);
        if let Some(v) = take("model.potential") {
            if v != "quartic" {
                return Err(Error::Parse(format!("unsupported potential '{v}'")));
            }
            cfg.potential = v;
        }
        set!("kernel.alpha", kernel_alpha, f64);
        if let Some(v) = take("kernel.epsilon") {
            cfg.kernel_epsilon = Some(num::<f64>("kernel.epsilon", v)?);
        }
        if let Some(v) = take("kernel.epsilons") {
            cfg.kernel_epsilons = v
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("invalid kernel.epsilons list '{v}'")))?;
        }
        set_shape!("init.phi", init_phi);
        set_shape!("init.sigma", init_sigma);
        set!("cost.alpha_omega", alpha_omega, f64);
        set!("cost.alpha_q", alpha_q, f64);
        set!("cost.beta_q", beta_q, f64);
        set!("cost.alpha_u", alpha_u, f64);
        set!("cost.beta_w", beta_w, f64);
        set_shape!("cost.phi_omega", phi_omega);
        set_shape!("cost.phi_q", phi_q);
        set_shape!("cost.sigma_q", sigma_q);
        set!("bounds.u_min", u_min, f64);
        set!("bounds.u_max", u_max, f64);
        set!("bounds.w_min", w_min, f64);
        set!("bounds.w_max", w_max, f64);
        set!("optimizer.max_iters", max_iters, usize);
        set!("optimizer.tol", tol, f64);
        set!("optimizer.armijo_c1", armijo_c1, f64);
        set!("optimizer.backtrack", backtrack, f64);
        set!("optimizer.init_step", init_step, f64);
        set!("optimizer.max_backtracks", max_backtracks, usize);
        set_shape!("init_controls.u", init_u);
        set_shape!("init_controls.w", init_w);
        set!("gradcheck.sigma0", gradcheck_sigma0, f64);
        set!("gradcheck.levels", gradcheck_levels, usize);
        set!("gradcheck.slope_min", gradcheck_slope_min, f64);
        set!("gradcheck.slope_max", gradcheck_slope_max, f64);
        set!("gradcheck.fo_err_max", gradcheck_fo_err_max, f64);
        set!("output.snapshot_stride", snapshot_stride, usize);
        set!("seed", seed, u64);

        if let Some(unknown) = map.keys().next() {
            return Err(Error::Parse(format!("unknown configuration key '{unknown}'")));
        }
        Ok(cfg)
    }

    /// Canonical echo of the resolved configuration.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid.n = {}", self.grid_n);
        let _ = writeln!(s, "grid.length = {}", self.grid_length);
        let _ = writeln!(s, "time.t_final = {}", self.t_final);
        let _ = writeln!(s, "time.steps = {}", self.steps);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "model.tau = {}", self.tau);
        let _ = writeln!(s, "model.chi = {}", self.chi);
        let _ = writeln!(s, "model.p0 = {}", self.p0);
        let _ = writeln!(s, "model.p1 = {}", self.p1);
        let _ = writeln!(s, "model.h_scale = {}", self.h_scale);
        let _ = writeln!(s, "model.stabilization = {}", self.stabilization);
        let _ = writeln!(s, "model.mobility_m = {}", self.mobility_m);
        let _ = writeln!(s, "model.mobility_n = {}", self.mobility_n);
        let _ = writeln!(s, "model.potential = {}", self.potential);
        let _ = writeln!(s, "kernel.alpha = {}", self.kernel_alpha);
        if let Some(e) = self.kernel_epsilon {
            let _ = writeln!(s, "kernel.epsilon = {e}");
        }
        if !self.kernel_epsilons.is_empty() {
            let list: Vec<String> = self.kernel_epsilons.iter().map(|e| e.to_string()).collect();
            let _ = writeln!(s, "kernel.epsilons = {}", list.join(", "));
        }
        let _ = writeln!(s, "init.phi = {}", self.init_phi.render());
        let _ = writeln!(s, "init.sigma = {}", self.init_sigma.render());
        let _ = writeln!(s, "cost.alpha_omega = {}", self.alpha_omega);
        let _ = writeln!(s, "cost.alpha_q = {}", self.alpha_q);
        let _ = writeln!(s, "cost.beta_q = {}", self.beta_q);
        let _ = writeln!(s, "cost.alpha_u = {}", self.alpha_u);
        let _ = writeln!(s, "cost.beta_w = {}", self.beta_w);
        let _ = writeln!(s, "cost.phi_omega = {}", self.phi_omega.render());
        let _ = writeln!(s, "cost.phi_q = {}", self.phi_q.render());
        let _ = writeln!(s, "cost.sigma_q = {}", self.sigma_q.render());
        let _ = writeln!(s, "bounds.u_min = {}", self.u_min);
        let _ = writeln!(s, "bounds.u_max = {}", self.u_max);
        let _ = writeln!(s, "bounds.w_min = {}", self.w_min);
        let _ = writeln!(s, "bounds.w_max = {}", self.w_max);
        let _ = writeln!(s, "optimizer.max_iters = {}", self.max_iters);
        let _ = writeln!(s, "optimizer.tol = {}", self.tol);
        let _ = writeln!(s, "optimizer.armijo_c1 = {}", self.armijo_c1);
        let _ = writeln!(s, "optimizer.backtrack = {}", self.backtrack);
        let _ = writeln!(s, "optimizer.init_step = {}", self.init_step);
        let _ = writeln!(s, "optimizer.max_backtracks = {}", self.max_backtracks);
        let _ = writeln!(s, "init_controls.u = {}", self.init_u.render());
        let _ = writeln!(s, "init_controls.w = {}", self.init_w.render());
        let _ = writeln!(s, "gradcheck.sigma0 = {}", self.gradcheck_sigma0);
        let _ = writeln!(s, "gradcheck.levels = {}", self.gradcheck_levels);
        let _ = writeln!(s, "gradcheck.slope_min = {}", self.gradcheck_slope_min);
        let _ = writeln!(s, "gradcheck.slope_max = {}", self.gradcheck_slope_max);
        let _ = writeln!(s, "gradcheck.fo_err_max = {}", self.gradcheck_fo_err_max);
        let _ = writeln!(s, "output.snapshot_stride = {}", self.snapshot_stride);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::square(self.grid_n, self.grid_length)
    }

    pub fn tgrid(&self) -> Result<TimeGrid> {
        if self.steps == 0 {
            // zero-step runs are allowed: they emit the initial state only
            return Ok(TimeGrid { t_final: self.t_final, steps: 0 });
        }
        TimeGrid::new(self.t_final, self.steps)
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            tau: self.tau,
            chi: self.chi,
            mobility_m: self.mobility_m,
            mobility_n: self.mobility_n,
            potential: Potential::Quartic,
            prolif: ProliferationParams::new(self.p0, self.p1),
            h_scale: self.h_scale,
            stabilization: self.stabilization,
        }
    }

    /// Build the kernel for the single-`epsilon` modes.
    pub fn kernel(&self, grid: GridSpec) -> Result<Option<DiscreteKernel>> {
        if self.mode == "local" {
            return Ok(None);
        }
        let eps = self.kernel_epsilon.ok_or_else(|| {
            Error::InvalidParameter("nonlocal mode requires kernel.epsilon".into())
        })?;
        let profile = build_profile(self.kernel_alpha, grid.d)?;
        Ok(Some(sample_kernel(&profile, eps, grid)?))
    }

    /// Kernel list for the sweep commands: non-increasing, each entry
    /// resolving at least `min_cells` grid cells. The state and dual sweeps
    /// demand eight cells so the discretization floor stays clearly below
    /// the nonlocality gap they measure; the control-convergence study only
    /// needs the kernel's own resolution guard.
    pub fn sweep_epsilons(&self, grid: GridSpec, min_cells: f64) -> Result<Vec<f64>> {
        if self.kernel_epsilons.is_empty() {
            return Err(Error::InvalidParameter(
                "sweep commands require kernel.epsilons = e1, e2, ...".into(),
            ));
        }
        let h = grid.h();
        for pair in self.kernel_epsilons.windows(2) {
            // repeats are allowed (they double as a determinism check)
            if pair[1] > pair[0] {
                return Err(Error::InvalidParameter(
                    "kernel.epsilons must be non-increasing".into(),
                ));
            }
        }
        for &e in &self.kernel_epsilons {
            if e < min_cells * h {
                return Err(Error::InvalidParameter(format!(
                    "sweep epsilon {e} below the {min_cells}h = {} resolution floor",
                    min_cells * h
                )));
            }
        }
        Ok(self.kernel_epsilons.clone())
    }

    pub fn initial_fields(&self, grid: GridSpec) -> Result<(Field, Field)> {
        Ok((self.init_phi.build(grid)?, self.init_sigma.build(grid)?))
    }

    pub fn cost_spec(&self, grid: GridSpec) -> Result<CostSpec> {
        Ok(CostSpec {
            alpha_omega: self.alpha_omega,
            alpha_q: self.alpha_q,
            beta_q: self.beta_q,
            alpha_u: self.alpha_u,
            beta_w: self.beta_w,
            phi_omega: self.phi_omega.build(grid)?,
            phi_q: Target::Static(self.phi_q.build(grid)?),
            sigma_q: Target::Static(self.sigma_q.build(grid)?),
        })
    }

    pub fn bounds(&self) -> Result<ControlBounds> {
        ControlBounds::boxed(self.u_min, self.u_max, self.w_min, self.w_max)
    }

    pub fn optimizer_opts(&self) -> OptimizeOpts {
        OptimizeOpts {
            max_iters: self.max_iters,
            tol: self.tol,
            armijo_c1: self.armijo_c1,
            backtrack: self.backtrack,
            init_step: self.init_step,
            max_backtracks: self.max_backtracks,
        }
    }

    pub fn init_controls(&self, grid: GridSpec, steps: usize) -> Result<ControlPair> {
        let u = self.init_u.build(grid)?;
        let w = self.init_w.build(grid)?;
        Ok(ControlPair { u: vec![u; steps], w: vec![w; steps] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes_roundtrip() {
        let text = "\
# demo
grid.n = 32
grid.length = 2.0
time.t_final = 0.01
time.steps = 50
mode = nonlocal
kernel.epsilon = 0.25
init.phi = gaussian-bump -0.9 1.8 1.0 1.0 0.2
cost.alpha_u = 0.5
seed = 7
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.grid_n, 32);
        assert_eq!(cfg.mode, "nonlocal");
        assert_eq!(cfg.kernel_epsilon, Some(0.25));
        assert_eq!(cfg.seed, 7);
        // echo of the echo parses to the same resolved text
        let echo = cfg.resolved_text();
        let cfg2 = RunConfig::parse(&echo).unwrap();
        assert_eq!(echo, cfg2.resolved_text());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("grid.m = 3").is_err());
        assert!(RunConfig::parse("grid.n = many").is_err());
        assert!(RunConfig::parse("mode = spectral").is_err());
        assert!(RunConfig::parse("grid.n = 32\ngrid.n = 64").is_err());
    }

    #[test]
    fn shapes_parse_and_build() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let c = Shape::parse("constant 0.5").unwrap().build(g).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.5));
        let bump = Shape::parse("gaussian-bump -0.9 1.8 0.5 0.5 0.1").unwrap().build(g).unwrap();
        assert!(bump.at(8, 8) > bump.at(0, 0));
        let two = Shape::parse("two-bump -0.9 1.8 0.3 0.3 0.7 0.7 0.1").unwrap().build(g).unwrap();
        assert!(two.at(4, 4) > two.at(12, 4));
        assert!(Shape::parse("blob 1 2").is_err());
        assert!(Shape::parse("constant").is_err());
    }

    #[test]
    fn sweep_epsilons_validation() {
        let mut cfg = RunConfig { grid_n: 128, ..Default::default() };
        cfg.kernel_epsilons = vec![0.25, 0.125, 0.0625];
        let g = cfg.grid().unwrap();
        assert_eq!(cfg.sweep_epsilons(g, 8.0).unwrap().len(), 3);
        cfg.kernel_epsilons = vec![0.125, 0.25];
        assert!(cfg.sweep_epsilons(g, 8.0).is_err());
        cfg.kernel_epsilons = vec![0.03]; // below 8h = 0.0625
        assert!(cfg.sweep_epsilons(g, 8.0).is_err());
    }
}
