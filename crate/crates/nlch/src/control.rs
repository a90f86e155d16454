//! Cost functional, reduced gradients from the dual system, box projection,
//! projected-gradient descent with Armijo backtracking, first-order
//! (variational-inequality) residuals, and Taylor-remainder gradient
//! verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjoint::{AdjointSolver, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::forward::{ControlPair, ForwardSolver, SpatialOp, StateTrajectory};
use crate::grid::{inner, Field, GridSpec, TimeGrid};
use crate::physics::{interp_h, ModelParams};

/// A tracking target over time: either one field used at every step or a
/// full per-step series (length `steps + 1`).
#[derive(Debug, Clone)]
pub enum Target {
    Static(Field),
    PerStep(Vec<Field>),
}

impl Target {
    pub fn at(&self, step: usize) -> &Field {
        match self {
            Target::Static(f) => f,
            Target::PerStep(v) => &v[step],
        }
    }
}

/// Weights and targets of the tracking cost
/// `J = alpha_omega/2 |phi(T)-phi_omega|^2 + alpha_q/2 |phi-phi_q|^2_Q
///    + beta_q/2 |sigma-sigma_q|^2_Q + alpha_u/2 |u|^2_Q + beta_w/2 |w|^2_Q`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub alpha_omega: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub alpha_u: f64,
    pub beta_w: f64,
    pub phi_omega: Field,
    pub phi_q: Target,
    pub sigma_q: Target,
}

impl CostSpec {
    /// Zero-weight spec with zero targets (homogeneous dual data).
    pub fn zero(grid: GridSpec) -> Self {
        CostSpec {
            alpha_omega: 0.0,
            alpha_q: 0.0,
            beta_q: 0.0,
            alpha_u: 0.0,
            beta_w: 0.0,
            phi_omega: Field::zeros(grid),
            phi_q: Target::Static(Field::zeros(grid)),
            sigma_q: Target::Static(Field::zeros(grid)),
        }
    }

    /// Weights must be nonnegative and not all zero; targets must live on
    /// the grid with matching series lengths.
    pub fn validate(&self, grid: GridSpec, steps: usize) -> Result<()> {
        let ws = [self.alpha_omega, self.alpha_q, self.beta_q, self.alpha_u, self.beta_w];
        if ws.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter("cost weights must be nonnegative".into()));
        }
        if ws.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter("at least one cost weight must be positive".into()));
        }
        if self.phi_omega.grid() != grid {
            return Err(Error::InvalidParameter("terminal target grid mismatch".into()));
        }
        for (name, target) in [("phi_q", &self.phi_q), ("sigma_q", &self.sigma_q)] {
            match target {
                Target::Static(f) if f.grid() != grid => {
                    return Err(Error::InvalidParameter(format!("{name} grid mismatch")));
                }
                Target::PerStep(v) if v.len() != steps + 1 => {
                    return Err(Error::InvalidParameter(format!(
                        "{name} series has {} entries, expected {}",
                        v.len(),
                        steps + 1
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Proximal penalties anchoring the problem to a reference control pair:
/// `J + 1/2 |u - anchor_u|^2_Q + 1/2 |w - anchor_w|^2_Q`.
#[derive(Debug, Clone)]
pub struct AdaptedSpec {
    pub anchor: ControlPair,
}

/// Discrete cost: terminal term plus trapezoidal-in-time tracking terms plus
/// exact (piecewise-constant) control quadrature.
pub fn eval_cost(spec: &CostSpec, traj: &StateTrajectory, controls: &ControlPair) -> f64 {
    let dt = traj.tgrid.dt();
    let nt = traj.tgrid.steps;
    let mut j = 0.0;
    if spec.alpha_omega != 0.0 {
        let d = traj.snapshots[nt].phi.zip_with(&spec.phi_omega, |a, b| a - b);
        j += 0.5 * spec.alpha_omega * inner(&d, &d);
    }
    if spec.alpha_q != 0.0 || spec.beta_q != 0.0 {
        for (k, snap) in traj.snapshots.iter().enumerate() {
            let weight = if k == 0 || k == nt { 0.5 } else { 1.0 };
            if spec.alpha_q != 0.0 {
                let d = snap.phi.zip_with(spec.phi_q.at(k), |a, b| a - b);
                j += weight * dt * 0.5 * spec.alpha_q * inner(&d, &d);
            }
            if spec.beta_q != 0.0 {
                let d = snap.sigma.zip_with(spec.sigma_q.at(k), |a, b| a - b);
                j += weight * dt * 0.5 * spec.beta_q * inner(&d, &d);
            }
        }
    }
    for (u, w) in controls.u.iter().zip(&controls.w) {
        j += dt * 0.5 * (spec.alpha_u * inner(u, u) + spec.beta_w * inner(w, w));
    }
    j
}

/// Adapted cost: base cost plus the proximal anchor terms.
pub fn eval_adapted(
    spec: &CostSpec,
    adapted: &AdaptedSpec,
    traj: &StateTrajectory,
    controls: &ControlPair,
) -> f64 {
    let dt = traj.tgrid.dt();
    let (du, dw) = controls.dist_sq(&adapted.anchor, dt);
    eval_cost(spec, traj, controls) + 0.5 * du + 0.5 * dw
}

/// Reduced gradients of the (possibly adapted) cost:
/// `g_u = -h(phi) p + alpha_u u [+ (u - anchor_u)]`,
/// `g_w = r + beta_w w [+ (w - anchor_w)]`, one field per time step.
pub fn reduced_gradient(
    params: &ModelParams,
    spec: &CostSpec,
    adapted: Option<&AdaptedSpec>,
    forward: &StateTrajectory,
    adjoint: &AdjointTrajectory,
    controls: &ControlPair,
) -> Result<(Vec<Field>, Vec<Field>)> {
    if forward.tgrid != adjoint.tgrid {
        return Err(Error::InvalidParameter(
            "forward and adjoint trajectories use different time grids".into(),
        ));
    }
    let nt = forward.tgrid.steps;
    let mut g_u = Vec::with_capacity(nt);
    let mut g_w = Vec::with_capacity(nt);
    for k in 0..nt {
        let phi = &forward.snapshots[k].phi;
        let adj = adjoint.at_time_index(k);
        let mut gu = phi.zip_with(&adj.p, |f, p| -interp_h(params.h_scale, f) * p);
        gu.axpy(spec.alpha_u, &controls.u[k]);
        let mut gw = adj.r.clone();
        gw.axpy(spec.beta_w, &controls.w[k]);
        if let Some(a) = adapted {
            gu.axpy(1.0, &controls.u[k].zip_with(&a.anchor.u[k], |x, y| x - y));
            gw.axpy(1.0, &controls.w[k].zip_with(&a.anchor.w[k], |x, y| x - y));
        }
        g_u.push(gu);
        g_w.push(gw);
    }
    Ok((g_u, g_w))
}

/// A box bound, constant or spatially varying.
#[derive(Debug, Clone)]
pub enum Bound {
    Constant(f64),
    PerCell(Field),
}

impl Bound {
    #[inline]
    fn value(&self, cell: usize) -> f64 {
        match self {
            Bound::Constant(c) => *c,
            Bound::PerCell(f) => f.values()[cell],
        }
    }
}

/// Admissible box for the control pair.
#[derive(Debug, Clone)]
pub struct ControlBounds {
    pub u_min: Bound,
    pub u_max: Bound,
    pub w_min: Bound,
    pub w_max: Bound,
}

impl ControlBounds {
    /// Constant box; requires ordered bounds and `u_min >= 0`.
    pub fn boxed(u_min: f64, u_max: f64, w_min: f64, w_max: f64) -> Result<Self> {
        let b = ControlBounds {
            u_min: Bound::Constant(u_min),
            u_max: Bound::Constant(u_max),
            w_min: Bound::Constant(w_min),
            w_max: Bound::Constant(w_max),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |lo: &Bound, hi: &Bound, name: &str| -> Result<()> {
            let cells = match (lo, hi) {
                (Bound::PerCell(f), _) | (_, Bound::PerCell(f)) => f.grid().cells(),
                _ => 1,
            };
            for k in 0..cells {
                if lo.value(k) > hi.value(k) {
                    return Err(Error::InvalidParameter(format!("inverted {name} bounds")));
                }
            }
            Ok(())
        };
        check(&self.u_min, &self.u_max, "u")?;
        check(&self.w_min, &self.w_max, "w")?;
        let cells = if let Bound::PerCell(f) = &self.u_min { f.grid().cells() } else { 1 };
        for k in 0..cells {
            if self.u_min.value(k) < 0.0 {
                return Err(Error::InvalidParameter("u_min must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn clamp_u(&self, v: f64, cell: usize) -> f64 {
        v.max(self.u_min.value(cell)).min(self.u_max.value(cell))
    }

    fn clamp_w(&self, v: f64, cell: usize) -> f64 {
        v.max(self.w_min.value(cell)).min(self.w_max.value(cell))
    }
}

/// Pointwise clamp of the control pair into the box. Idempotent.
pub fn project_box(controls: &ControlPair, bounds: &ControlBounds) -> Result<ControlPair> {
    bounds.validate()?;
    let mut out = controls.clone();
    for u in &mut out.u {
        for (k, v) in u.values_mut().iter_mut().enumerate() {
            *v = bounds.clamp_u(*v, k);
        }
    }
    for w in &mut out.w {
        for (k, v) in w.values_mut().iter_mut().enumerate() {
            *v = bounds.clamp_w(*v, k);
        }
    }
    Ok(out)
}

/// Projected-gradient fixed-point residual
/// `|(u,w) - proj((u,w) - step (g_u,g_w))|_Q / max(1, |(u,w)|_Q)`;
/// zero exactly when the discrete variational inequality holds on the box.
pub fn vi_residual(
    controls: &ControlPair,
    g_u: &[Field],
    g_w: &[Field],
    bounds: &ControlBounds,
    step: f64,
    dt: f64,
) -> f64 {
    let mut displaced = controls.clone();
    for (u, g) in displaced.u.iter_mut().zip(g_u) {
        u.axpy(-step, g);
    }
    for (w, g) in displaced.w.iter_mut().zip(g_w) {
        w.axpy(-step, g);
    }
    let projected = project_box(&displaced, bounds).expect("bounds validated by caller");
    let (du, dw) = controls.dist_sq(&projected, dt);
    let norm = controls.norm_l2q(dt);
    (du + dw).sqrt() / norm.max(1.0)
}

/// `H^1(0,T; L^2)` norm surrogate of `u`: piecewise-constant values plus
/// difference quotients across step boundaries. Reported, never enforced.
pub fn u_h1_norm(u: &[Field], dt: f64) -> f64 {
    let mut acc = 0.0;
    for f in u {
        acc += dt * inner(f, f);
    }
    for pair in u.windows(2) {
        let d = pair[1].zip_with(&pair[0], |a, b| a - b);
        acc += inner(&d, &d) / dt;
    }
    acc.sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOpts {
    pub max_iters: usize,
    /// Stop when the fixed-point residual falls below this.
    pub tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub init_step: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizeOpts {
    fn default() -> Self {
        OptimizeOpts {
            max_iters: 100,
            tol: 1e-3,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            init_step: 1.0,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HistoryRow {
    pub iter: usize,
    pub cost: f64,
    pub vi_residual: f64,
    /// Step length accepted by the line search that produced this iterate
    /// (initial step for the first row).
    pub step: f64,
    pub grad_norm: f64,
    pub u_h1_norm: f64,
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub controls: ControlPair,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    pub final_cost: f64,
    pub final_residual: f64,
}

/// Fixed probe step for the convergence residual, so values are comparable
/// across iterations and runs.
const RESIDUAL_PROBE_STEP: f64 = 1.0;

/// Projected-gradient descent with Armijo backtracking along the projection
/// arc. Every iterate is projected into the box; the loop stops when the
/// fixed-point residual drops below `opts.tol`.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    params: &ModelParams,
    op: SpatialOp,
    phi0: &Field,
    sigma0: &Field,
    tgrid: TimeGrid,
    spec: &CostSpec,
    adapted: Option<&AdaptedSpec>,
    bounds: &ControlBounds,
    init: &ControlPair,
    opts: &OptimizeOpts,
) -> Result<OptimizeOutcome> {
    bounds.validate()?;
    let grid = phi0.grid();
    let forward = ForwardSolver::new(*params, op, grid)?;
    let adjoint = AdjointSolver::new(*params, op, grid)?;
    let dt = tgrid.dt();

    let cost_of = |controls: &ControlPair| -> Result<(f64, StateTrajectory)> {
        let traj = forward.solve(phi0, sigma0, controls, tgrid)?;
        let j = match adapted {
            Some(a) => eval_adapted(spec, a, &traj, controls),
            None => eval_cost(spec, &traj, controls),
        };
        Ok((j, traj))
    };

    let mut controls = project_box(init, bounds)?;
    let (mut cost, mut traj) = cost_of(&controls)?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut last_step = opts.init_step;
    let mut residual = f64::NAN;

    for iter in 0..opts.max_iters {
        let adj = adjoint.solve(&traj, &controls, spec)?;
        let (g_u, g_w) = reduced_gradient(params, spec, adapted, &traj, &adj, &controls)?;
        residual = vi_residual(&controls, &g_u, &g_w, bounds, RESIDUAL_PROBE_STEP, dt);
        let grad_norm = {
            let mut acc = 0.0;
            for (gu, gw) in g_u.iter().zip(&g_w) {
                acc += dt * (inner(gu, gu) + inner(gw, gw));
            }
            acc.sqrt()
        };
        history.push(HistoryRow {
            iter,
            cost,
            vi_residual: residual,
            step: last_step,
            grad_norm,
            u_h1_norm: u_h1_norm(&controls.u, dt),
        });
        if residual <= opts.tol {
            converged = true;
            break;
        }

        // Armijo backtracking along the projection arc
        let mut step = opts.init_step;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut candidate = controls.clone();
            for (u, g) in candidate.u.iter_mut().zip(&g_u) {
                u.axpy(-step, g);
            }
            for (w, g) in candidate.w.iter_mut().zip(&g_w) {
                w.axpy(-step, g);
            }
            let candidate = project_box(&candidate, bounds)?;
            let mut pairing = 0.0;
            for k in 0..g_u.len() {
                pairing += dt * inner(&g_u[k], &candidate.u[k].zip_with(&controls.u[k], |a, b| a - b));
                pairing += dt * inner(&g_w[k], &candidate.w[k].zip_with(&controls.w[k], |a, b| a - b));
            }
            let (cand_cost, cand_traj) = cost_of(&candidate)?;
            if cand_cost <= cost + opts.armijo_c1 * pairing {
                accepted = Some((candidate, cand_cost, cand_traj, step));
                break;
            }
            step *= opts.backtrack;
        }
        match accepted {
            Some((c, j, t, s)) => {
                controls = c;
                cost = j;
                traj = t;
                last_step = s;
            }
            None => {
                return Err(Error::LineSearchFailed { backtracks: opts.max_backtracks, step })
            }
        }
    }

    Ok(OptimizeOutcome {
        controls,
        history,
        converged,
        final_cost: cost,
        final_residual: residual,
    })
}

/// Result of the Taylor-remainder gradient test.
#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub sigmas: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Least-squares slope of `log R` vs `log sigma` over the pre-floor range.
    pub slope: f64,
    /// Adjoint directional derivative `<g, delta>`.
    pub grad_dot: f64,
    /// Central finite-difference directional derivative.
    pub fd_value: f64,
    /// `|<g, delta> - fd| / |fd|`.
    pub fd_rel_err: f64,
}

/// Taylor remainder test of the reduced gradient: for steps
/// `sigma_k = sigma0 2^-k` compute
/// `R_k = |J(c + sigma_k d) - J(c) - sigma_k <g, d>|` and fit the slope of
/// the quadratic regime. Cost evaluations at distinct steps run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &ModelParams,
    op: SpatialOp,
    phi0: &Field,
    sigma0: &Field,
    tgrid: TimeGrid,
    spec: &CostSpec,
    adapted: Option<&AdaptedSpec>,
    base: &ControlPair,
    direction: &ControlPair,
    sigma0_step: f64,
    levels: usize,
) -> Result<TaylorReport> {
    if levels < 2 || sigma0_step <= 0.0 || sigma0_step.is_nan() {
        return Err(Error::InvalidParameter(
            "gradient check needs at least two step levels and a positive base step".into(),
        ));
    }
    let grid = phi0.grid();
    let forward = ForwardSolver::new(*params, op, grid)?;
    let adjoint = AdjointSolver::new(*params, op, grid)?;
    let dt = tgrid.dt();

    let cost_at = |scale: f64| -> Result<f64> {
        let mut c = base.clone();
        for (u, d) in c.u.iter_mut().zip(&direction.u) {
            u.axpy(scale, d);
        }
        for (w, d) in c.w.iter_mut().zip(&direction.w) {
            w.axpy(scale, d);
        }
        let traj = forward.solve(phi0, sigma0, &c, tgrid)?;
        Ok(match adapted {
            Some(a) => eval_adapted(spec, a, &traj, &c),
            None => eval_cost(spec, &traj, &c),
        })
    };

    let base_traj = forward.solve(phi0, sigma0, base, tgrid)?;
    let base_cost = match adapted {
        Some(a) => eval_adapted(spec, a, &base_traj, base),
        None => eval_cost(spec, &base_traj, base),
    };
    let adj = adjoint.solve(&base_traj, base, spec)?;
    let (g_u, g_w) = reduced_gradient(params, spec, adapted, &base_traj, &adj, base)?;
    let mut grad_dot = 0.0;
    for k in 0..g_u.len() {
        grad_dot += dt * (inner(&g_u[k], &direction.u[k]) + inner(&g_w[k], &direction.w[k]));
    }

    let sigmas: Vec<f64> = (0..levels).map(|k| sigma0_step * 0.5_f64.powi(k as i32)).collect();
    let sigma_fd = sigma0_step * 0.5_f64.powi((levels as i32 - 1).min(3));
    let mut evals: Vec<f64> = sigmas.clone();
    evals.push(sigma_fd);
    evals.push(-sigma_fd);
    let costs: Vec<Result<f64>> = evals.par_iter().map(|&s| cost_at(s)).collect();
    let mut costs_ok = Vec::with_capacity(costs.len());
    for c in costs {
        costs_ok.push(c?);
    }
    let fd_value = (costs_ok[levels] - costs_ok[levels + 1]) / (2.0 * sigma_fd);
    let fd_rel_err = (grad_dot - fd_value).abs() / fd_value.abs().max(1e-300);

    let remainders: Vec<f64> = sigmas
        .iter()
        .zip(&costs_ok[..levels])
        .map(|(&s, &j)| (j - base_cost - s * grad_dot).abs())
        .collect();

    // pre-floor range: maximal prefix of clearly superlinear descent
    let floor = 1e3 * f64::EPSILON * base_cost.abs().max(grad_dot.abs()).max(1.0);
    let mut upto = 1;
    while upto < remainders.len()
        && remainders[upto] > floor
        && remainders[upto - 1] / remainders[upto] >= 2.0_f64.powf(1.2)
    {
        upto += 1;
    }
    let slope = if upto >= 2 {
        fit_slope(&sigmas[..upto], &remainders[..upto])
    } else {
        fit_slope(&sigmas, &remainders)
    };

    Ok(TaylorReport { sigmas, remainders, slope, grad_dot, fd_value, fd_rel_err })
}

fn fit_slope(sigmas: &[f64], remainders: &[f64]) -> f64 {
    let n = sigmas.len() as f64;
    let xs: Vec<f64> = sigmas.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = remainders.iter().map(|r| r.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Deterministic random control-shaped direction for gradient checks.
///
/// Superposition of a few random low-frequency cosine modes in space and
/// time rather than per-cell white noise: a rough direction is nearly
/// orthogonal to the smooth gradient, which drives the directional
/// derivative toward zero and makes relative comparisons meaningless.
pub fn random_direction(grid: GridSpec, steps: usize, seed: u64) -> ControlPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let component = |rng: &mut ChaCha8Rng| -> Vec<Field> {
        // one spatially constant mode (gradients have nonzero mean) plus
        // three oscillatory ones
        let mut modes: Vec<(f64, usize, usize, f64)> =
            vec![(rng.gen_range(0.2..1.0), 0, 0, rng.gen_range(0.0..2.0))];
        modes.extend((0..3).map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0..4usize),
                rng.gen_range(0..4usize),
                rng.gen_range(0.0..2.0),
            )
        }));
        (0..steps)
            .map(|n| {
                let t = if steps > 1 { n as f64 / (steps - 1) as f64 } else { 0.0 };
                Field::from_fn(grid, |x, y| {
                    modes
                        .iter()
                        .map(|&(a, kx, ky, q)| {
                            a * (std::f64::consts::PI * kx as f64 * x / grid.length).cos()
                                * (std::f64::consts::PI * ky as f64 * y / grid.length).cos()
                                * (std::f64::consts::PI * q * t).cos()
                        })
                        .sum()
                })
            })
            .collect()
    };
    ControlPair { u: component(&mut rng), w: component(&mut rng) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use approx::assert_relative_eq;

    fn grid() -> GridSpec {
        GridSpec::square(16, 1.0).unwrap()
    }

    fn seed_phi(g: GridSpec) -> Field {
        Field::from_fn(g, |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            -0.9 + 1.8 * (-r2 / 0.02).exp()
        })
    }

    #[test]
    fn cost_of_pure_control_terms() {
        let g = grid();
        let tgrid = TimeGrid::new(1.0, 10).unwrap();
        let params = ModelParams::default();
        let mut spec = CostSpec::zero(g);
        spec.alpha_u = 2.0;
        // u = 1 on Q with |Omega| = 1, T = 1: control term = (2/2) * 1 = 1
        let controls = ControlPair::constant(g, tgrid.steps, 1.0, 0.0);
        let traj = solve_forward(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            &controls,
            tgrid,
        )
        .unwrap();
        assert_relative_eq!(eval_cost(&spec, &traj, &controls), 1.0, max_relative = 1e-12);
        // zero controls with only alpha_u: zero cost
        let zero = ControlPair::zeros(g, tgrid.steps);
        let traj0 =
            solve_forward(&params, SpatialOp::Local, &seed_phi(g), &Field::constant(g, 0.5), &zero, tgrid)
                .unwrap();
        assert_eq!(eval_cost(&spec, &traj0, &zero), 0.0);
    }

    #[test]
    fn exact_tracking_gives_zero_cost() {
        let g = grid();
        let tgrid = TimeGrid::new(0.01, 10).unwrap();
        let params = ModelParams::default();
        let controls = ControlPair::zeros(g, tgrid.steps);
        let traj = solve_forward(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            &controls,
            tgrid,
        )
        .unwrap();
        let spec = CostSpec {
            alpha_omega: 0.0,
            alpha_q: 1.0,
            beta_q: 1.0,
            alpha_u: 0.0,
            beta_w: 0.0,
            phi_omega: Field::zeros(g),
            phi_q: Target::PerStep(traj.snapshots.iter().map(|s| s.phi.clone()).collect()),
            sigma_q: Target::PerStep(traj.snapshots.iter().map(|s| s.sigma.clone()).collect()),
        };
        assert_eq!(eval_cost(&spec, &traj, &controls), 0.0);
    }

    #[test]
    fn adapted_cost_dominates_base_and_matches_at_anchor() {
        let g = grid();
        let tgrid = TimeGrid::new(0.01, 10).unwrap();
        let params = ModelParams::default();
        let mut spec = CostSpec::zero(g);
        spec.alpha_u = 1.0;
        let anchor = ControlPair::constant(g, tgrid.steps, 0.2, 0.1);
        let adapted = AdaptedSpec { anchor: anchor.clone() };
        let traj = solve_forward(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            &anchor,
            tgrid,
        )
        .unwrap();
        let at_anchor = eval_adapted(&spec, &adapted, &traj, &anchor);
        assert_relative_eq!(at_anchor, eval_cost(&spec, &traj, &anchor), max_relative = 1e-14);

        let other = ControlPair::constant(g, tgrid.steps, 1.2, 0.1);
        let traj2 = solve_forward(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            &other,
            tgrid,
        )
        .unwrap();
        assert!(eval_adapted(&spec, &adapted, &traj2, &other) >= eval_cost(&spec, &traj2, &other));
        // zero base weights, u - anchor = 1 on unit Q: adapted = 1/2
        let mut zero_spec = CostSpec::zero(g);
        zero_spec.alpha_u = 0.0;
        let tg1 = TimeGrid::new(1.0, 10).unwrap();
        let a1 = AdaptedSpec { anchor: ControlPair::zeros(g, 10) };
        let ones = ControlPair::constant(g, 10, 1.0, 0.0);
        let traj3 = solve_forward(
            &params,
            SpatialOp::Local,
            &Field::constant(g, -1.0),
            &Field::constant(g, 0.5),
            &ones,
            tg1,
        )
        .unwrap();
        assert_relative_eq!(eval_adapted(&zero_spec, &a1, &traj3, &ones), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let g = grid();
        let bounds = ControlBounds::boxed(0.0, 1.0, -0.5, 0.5).unwrap();
        let controls = ControlPair::constant(g, 4, 2.0, -3.0);
        let p1 = project_box(&controls, &bounds).unwrap();
        assert!(p1.u.iter().all(|f| f.values().iter().all(|&v| v == 1.0)));
        assert!(p1.w.iter().all(|f| f.values().iter().all(|&v| v == -0.5)));
        let p2 = project_box(&p1, &bounds).unwrap();
        for (a, b) in p1.u.iter().zip(&p2.u) {
            assert_eq!(a.values(), b.values());
        }
        // in-bounds input unchanged
        let inside = ControlPair::constant(g, 4, 0.3, 0.0);
        let p3 = project_box(&inside, &bounds).unwrap();
        assert_eq!(p3.u[0].values(), inside.u[0].values());
        // inverted bounds rejected
        assert!(ControlBounds::boxed(1.0, 0.0, 0.0, 0.0).is_err());
        // negative u_min rejected
        assert!(ControlBounds::boxed(-1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn vi_residual_cases() {
        let g = grid();
        let dt = 0.1;
        let bounds = ControlBounds::boxed(0.0, 1.0, -1.0, 1.0).unwrap();
        let controls = ControlPair::constant(g, 5, 0.5, 0.0);
        let zeros: Vec<Field> = vec![Field::zeros(g); 5];
        // zero gradient: zero residual
        assert_eq!(vi_residual(&controls, &zeros, &zeros, &bounds, 1.0, dt), 0.0);
        // interior point: residual = step |g| / max(1, |c|)
        let g_u: Vec<Field> = vec![Field::constant(g, 0.1); 5];
        let r = vi_residual(&controls, &g_u, &zeros, &bounds, 1.0, dt);
        let gnorm = {
            let mut acc = 0.0;
            for f in &g_u {
                acc += dt * inner(f, f);
            }
            acc.sqrt()
        };
        assert_relative_eq!(r, gnorm / 1.0, max_relative = 1e-12);
        // pinned at the upper bound with negative gradient: residual zero
        let pinned = ControlPair::constant(g, 5, 1.0, 0.0);
        let g_neg: Vec<Field> = vec![Field::constant(g, -2.0); 5];
        assert_eq!(vi_residual(&pinned, &g_neg, &zeros, &bounds, 1.0, dt), 0.0);
    }

    #[test]
    fn reduced_gradient_formula_cases() {
        let g = grid();
        let params = ModelParams { h_scale: 0.0, ..Default::default() };
        let tgrid = TimeGrid::new(0.01, 8).unwrap();
        let controls = ControlPair::constant(g, tgrid.steps, 0.0, 0.3);
        let traj = solve_forward(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            &controls,
            tgrid,
        )
        .unwrap();
        // zero-weight cost: adjoint is identically zero, so g_w = beta_w w
        let mut spec = CostSpec::zero(g);
        spec.beta_w = 1.0;
        spec.alpha_u = 0.0;
        let adj = crate::adjoint::solve_adjoint(&params, SpatialOp::Local, &traj, &controls, &CostSpec::zero(g)).unwrap();
        let (g_u, g_w) = reduced_gradient(&params, &spec, None, &traj, &adj, &controls).unwrap();
        for f in &g_u {
            assert!(f.values().iter().all(|&v| v == 0.0));
        }
        for f in &g_w {
            for &v in f.values() {
                assert_relative_eq!(v, 0.3, max_relative = 1e-14);
            }
        }
        // adapted at the anchor adds nothing
        let adapted = AdaptedSpec { anchor: controls.clone() };
        let (ga_u, ga_w) =
            reduced_gradient(&params, &spec, Some(&adapted), &traj, &adj, &controls).unwrap();
        for (a, b) in ga_u.iter().zip(&g_u) {
            assert_eq!(a.values(), b.values());
        }
        for (a, b) in ga_w.iter().zip(&g_w) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn quadratic_cost_gradient_is_exact() {
        // state-independent cost: Taylor slope 2, first-order error ~ 0
        let g = grid();
        let params = ModelParams::default();
        let tgrid = TimeGrid::new(0.01, 10).unwrap();
        let mut spec = CostSpec::zero(g);
        spec.alpha_u = 1.0;
        spec.beta_w = 0.5;
        let base = ControlPair::constant(g, tgrid.steps, 0.4, -0.1);
        let direction = random_direction(g, tgrid.steps, 42);
        let report = gradient_check(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            tgrid,
            &spec,
            None,
            &base,
            &direction,
            0.25,
            6,
        )
        .unwrap();
        assert!((report.slope - 2.0).abs() <= 0.05, "slope {}", report.slope);
        assert!(report.fd_rel_err <= 1e-8, "fd error {}", report.fd_rel_err);
    }

    #[test]
    fn optimizer_drives_pure_control_cost_to_zero() {
        let g = grid();
        let params = ModelParams::default();
        let tgrid = TimeGrid::new(0.01, 10).unwrap();
        let mut spec = CostSpec::zero(g);
        spec.alpha_u = 1.0;
        spec.beta_w = 1.0;
        let bounds = ControlBounds::boxed(0.0, 2.0, -1.0, 1.0).unwrap();
        let init = ControlPair::constant(g, tgrid.steps, 1.0, 0.5);
        let opts = OptimizeOpts { tol: 1e-9, max_iters: 60, ..Default::default() };
        let out = optimize(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            tgrid,
            &spec,
            None,
            &bounds,
            &init,
            &opts,
        )
        .unwrap();
        let initial_cost = out.history[0].cost;
        assert!(out.final_cost <= 1e-6 * initial_cost, "final {}", out.final_cost);
        // strictly decreasing accepted costs
        for pair in out.history.windows(2) {
            assert!(pair[1].cost < pair[0].cost);
        }
        // iterates stay in the box
        for u in &out.controls.u {
            assert!(u.values().iter().all(|&v| (0.0..=2.0).contains(&v)));
        }
    }

    #[test]
    fn optimizer_returns_immediately_at_stationary_point() {
        let g = grid();
        let params = ModelParams::default();
        let tgrid = TimeGrid::new(0.01, 5).unwrap();
        let mut spec = CostSpec::zero(g);
        spec.alpha_u = 1.0;
        let bounds = ControlBounds::boxed(0.0, 1.0, -1.0, 1.0).unwrap();
        let init = ControlPair::zeros(g, tgrid.steps);
        let out = optimize(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            tgrid,
            &spec,
            None,
            &bounds,
            &init,
            &OptimizeOpts::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn vi_residual_is_scale_consistent_when_projection_inactive() {
        // scaling g by lambda and step by 1/lambda leaves the displacement
        // unchanged away from the box faces
        let g = grid();
        let dt = 0.1;
        let bounds = ControlBounds::boxed(0.0, 10.0, -10.0, 10.0).unwrap();
        let controls = ControlPair::constant(g, 5, 3.0, 0.0);
        let g_u: Vec<Field> = vec![Field::constant(g, 0.2); 5];
        let g_w: Vec<Field> = vec![Field::constant(g, -0.1); 5];
        let base = vi_residual(&controls, &g_u, &g_w, &bounds, 0.5, dt);
        let lambda = 8.0;
        let scaled_u: Vec<Field> = g_u.iter().map(|f| f.map(|v| lambda * v)).collect();
        let scaled_w: Vec<Field> = g_w.iter().map(|f| f.map(|v| lambda * v)).collect();
        let scaled = vi_residual(&controls, &scaled_u, &scaled_w, &bounds, 0.5 / lambda, dt);
        assert_relative_eq!(base, scaled, max_relative = 1e-12);
    }

    #[test]
    fn anchored_problem_stays_closer_to_the_anchor() {
        // tight proximal terms keep the adapted optimum nearer the anchor
        // than the unanchored optimum lands
        let g = grid();
        let params = ModelParams::default();
        let tgrid = TimeGrid::new(0.005, 10).unwrap();
        let mut spec = CostSpec::zero(g);
        spec.alpha_omega = 1.0;
        spec.alpha_u = 0.2;
        spec.beta_w = 0.2;
        spec.phi_omega = Field::constant(g, -0.8);
        let bounds = ControlBounds::boxed(0.0, 2.0, -1.0, 1.0).unwrap();
        let anchor = ControlPair::constant(g, tgrid.steps, 0.6, 0.2);
        let init = ControlPair::constant(g, tgrid.steps, 0.6, 0.2);
        let opts = OptimizeOpts { tol: 1e-6, max_iters: 120, ..Default::default() };
        let dt = tgrid.dt();

        let free = optimize(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            tgrid,
            &spec,
            None,
            &bounds,
            &init,
            &opts,
        )
        .unwrap();
        let adapted_spec = AdaptedSpec { anchor: anchor.clone() };
        let anchored = optimize(
            &params,
            SpatialOp::Local,
            &seed_phi(g),
            &Field::constant(g, 0.5),
            tgrid,
            &spec,
            Some(&adapted_spec),
            &bounds,
            &init,
            &opts,
        )
        .unwrap();
        let (fu, fw) = free.controls.dist_sq(&anchor, dt);
        let (au, aw) = anchored.controls.dist_sq(&anchor, dt);
        assert!(
            (au + aw).sqrt() <= (fu + fw).sqrt() + 1e-12,
            "anchored distance {} vs free distance {}",
            (au + aw).sqrt(),
            (fu + fw).sqrt()
        );
    }
}
