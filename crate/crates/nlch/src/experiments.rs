//! Experiment drivers behind the command-line interface: forward runs with
//! diagnostics, nonlocal-to-local sweeps of the state and dual systems,
//! gradient verification, optimization, and the control-convergence study.
//! All file output lives here.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adjoint::AdjointSolver;
use crate::config::RunConfig;
use crate::control::{
    gradient_check, optimize, random_direction, AdaptedSpec, OptimizeOutcome, TaylorReport,
};
use crate::error::Error;
use crate::forward::{ForwardSolver, SpatialOp, StateSnapshot};
use crate::grid::{norm_h1, norm_l2};
use crate::io::{save_field, save_stacked, CsvCell, CsvWriter};
use crate::kernel::{build_profile, sample_kernel};
use crate::physics::{require_assumptions, validate_assumptions};

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum RunFailure {
    /// Configuration or assumption violations (exit 1).
    Validation(String),
    /// Solver breakdowns and non-finite values (exit 2).
    Numerical(String),
    /// A checked experiment property did not hold (exit 3).
    Assertion(String),
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunFailure::Validation(_) => 1,
            RunFailure::Numerical(_) => 2,
            RunFailure::Assertion(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunFailure::Validation(m) | RunFailure::Numerical(m) | RunFailure::Assertion(m) => m,
        }
    }
}

impl From<Error> for RunFailure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Parse(_) | Error::Io(_) => {
                RunFailure::Validation(e.to_string())
            }
            Error::SolverDiverged { .. }
            | Error::NonFinite { .. }
            | Error::LineSearchFailed { .. } => RunFailure::Numerical(e.to_string()),
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunFailure>;

fn prepare_out(out: &Path, cfg: &RunConfig) -> RunResult<()> {
    std::fs::create_dir_all(out).map_err(|e| RunFailure::Validation(e.to_string()))?;
    std::fs::write(out.join("resolved_config.txt"), cfg.resolved_text())
        .map_err(|e| RunFailure::Validation(e.to_string()))?;
    Ok(())
}

fn diag_header() -> [&'static str; 9] {
    ["step", "t", "E_total", "E_interface", "int_psi", "half_sigma_sq", "chi_coupling", "mean_phi", "mean_sigma"]
}

fn trapezoid_weight(k: usize, nt: usize) -> f64 {
    if nt == 0 || k == 0 || k == nt {
        0.5
    } else {
        1.0
    }
}

/// Print the assumption report; exit 1 when any check fails.
pub fn cmd_validate(cfg: &RunConfig) -> RunResult<String> {
    let grid = cfg.grid()?;
    let params = cfg.params();
    let kernel = cfg.kernel(grid)?;
    let report = validate_assumptions(&params, kernel.as_ref());
    let text = report.to_string();
    if report.all_passed() {
        Ok(text)
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        Err(RunFailure::Validation(format!(
            "assumption check failed for {}\n{text}",
            names.join(", ")
        )))
    }
}

/// Forward run: diagnostics CSV, optional strided snapshots, and a
/// conservation/energy summary line.
pub fn cmd_forward(cfg: &RunConfig, out: &Path) -> RunResult<String> {
    prepare_out(out, cfg)?;
    let grid = cfg.grid()?;
    let params = cfg.params();
    let kernel = cfg.kernel(grid)?;
    require_assumptions(&params, kernel.as_ref())?;
    let op = match &kernel {
        Some(k) => SpatialOp::Nonlocal(k),
        None => SpatialOp::Local,
    };
    let tgrid = cfg.tgrid()?;
    let (phi0, sigma0) = cfg.initial_fields(grid)?;
    let controls = cfg.init_controls(grid, tgrid.steps)?;
    let solver = ForwardSolver::new(params, op, grid)?;

    let mut csv = CsvWriter::create(out.join("diagnostics.csv"), &diag_header())?;
    let snap_dir = out.join("snapshots");
    if cfg.snapshot_stride > 0 {
        std::fs::create_dir_all(&snap_dir).map_err(Error::from)?;
    }
    let mut first: Option<(f64, f64)> = None;
    let mut last = (0.0, 0.0);
    let mut max_energy_rise = 0.0_f64;
    let mut prev_energy = f64::INFINITY;
    {
        let mut emit = |step: usize, snap: &StateSnapshot| -> crate::error::Result<()> {
            let d = solver.diagnostics(step, snap);
            csv.row(&[
                CsvCell::Int(d.step),
                CsvCell::Float(d.t),
                CsvCell::Float(d.e_total),
                CsvCell::Float(d.e_interface),
                CsvCell::Float(d.int_psi),
                CsvCell::Float(d.half_sigma_sq),
                CsvCell::Float(d.chi_coupling),
                CsvCell::Float(d.mean_phi),
                CsvCell::Float(d.mean_sigma),
            ])?;
            if first.is_none() {
                first = Some((d.mean_phi, d.mean_sigma));
            }
            last = (d.mean_phi, d.mean_sigma);
            if prev_energy.is_finite() {
                max_energy_rise = max_energy_rise.max(d.e_total - prev_energy);
            }
            prev_energy = d.e_total;
            if cfg.snapshot_stride > 0 && step.is_multiple_of(cfg.snapshot_stride) {
                save_field(snap_dir.join(format!("phi_{step:06}.chf1")), &snap.phi)?;
                save_field(snap_dir.join(format!("sigma_{step:06}.chf1")), &snap.sigma)?;
            }
            Ok(())
        };
        if tgrid.steps == 0 {
            let snap = StateSnapshot {
                t: 0.0,
                phi: phi0.clone(),
                mu: solver.initial_mu(&phi0, &sigma0),
                sigma: sigma0.clone(),
            };
            emit(0, &snap)?;
        } else {
            let mut pending: Option<crate::error::Error> = None;
            solver.solve_with(&phi0, &sigma0, &controls, tgrid, |step, snap| {
                if pending.is_none() {
                    if let Err(e) = emit(step, snap) {
                        pending = Some(e);
                    }
                }
            })?;
            if let Some(e) = pending {
                return Err(e.into());
            }
        }
    }
    csv.finish()?;
    let (phi_start, sigma_start) = first.unwrap_or((0.0, 0.0));
    let summary = format!(
        "steps {}  mean_phi drift {:.3e}  mean_sigma drift {:.3e}  max energy rise per step {:.3e}",
        tgrid.steps,
        (last.0 - phi_start).abs(),
        (last.1 - sigma_start).abs(),
        max_energy_rise.max(0.0),
    );
    Ok(summary)
}

/// One row of the state-sweep table.
#[derive(Debug, Clone, Copy)]
pub struct StateSweepRow {
    pub epsilon: f64,
    /// `sup_t ||phi_eps - phi||_{L^2}`
    pub sup_phi_l2: f64,
    /// `||sigma_eps - sigma||_{L^2(Q)}`
    pub sigma_l2q: f64,
    /// `sup_t ||sigma_eps(t) - sigma(t)||_{L^2}`
    pub sup_sigma_l2: f64,
}

/// Nonlocal-to-local sweep of the state system: one local reference run,
/// one nonlocal run per epsilon with identical data, error table, and a
/// strict-decrease assertion across the (descending) epsilon list.
pub fn cmd_eps_sweep(cfg: &RunConfig, out: &Path) -> RunResult<Vec<StateSweepRow>> {
    prepare_out(out, cfg)?;
    let grid = cfg.grid()?;
    let params = cfg.params();
    require_assumptions(&params, None)?;
    let tgrid = cfg.tgrid()?;
    let epsilons = cfg.sweep_epsilons(grid, 8.0)?;
    let (phi0, sigma0) = cfg.initial_fields(grid)?;
    let controls = cfg.init_controls(grid, tgrid.steps)?;
    let profile = build_profile(cfg.kernel_alpha, grid.d)?;

    let local = ForwardSolver::new(params, SpatialOp::Local, grid)?
        .solve(&phi0, &sigma0, &controls, tgrid)?;

    let rows: Vec<RunResult<StateSweepRow>> = epsilons
        .par_iter()
        .map(|&eps| {
            let kernel = sample_kernel(&profile, eps, grid)?;
            require_assumptions(&params, Some(&kernel))?;
            let solver = ForwardSolver::new(params, SpatialOp::Nonlocal(&kernel), grid)?;
            let dt = tgrid.dt();
            let nt = tgrid.steps;
            let mut sup_phi = 0.0_f64;
            let mut sup_sigma = 0.0_f64;
            let mut sigma_sq = 0.0;
            solver.solve_with(&phi0, &sigma0, &controls, tgrid, |step, snap| {
                let reference = &local.snapshots[step];
                let dphi = snap.phi.zip_with(&reference.phi, |a, b| a - b);
                let dsig = snap.sigma.zip_with(&reference.sigma, |a, b| a - b);
                let phi_err = norm_l2(&dphi);
                let sig_err = norm_l2(&dsig);
                sup_phi = sup_phi.max(phi_err);
                sup_sigma = sup_sigma.max(sig_err);
                sigma_sq += trapezoid_weight(step, nt) * dt * sig_err * sig_err;
            })?;
            Ok(StateSweepRow {
                epsilon: eps,
                sup_phi_l2: sup_phi,
                sigma_l2q: sigma_sq.sqrt(),
                sup_sigma_l2: sup_sigma,
            })
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        table.push(r?);
    }

    let mut csv = CsvWriter::create(
        out.join("eps_sweep.csv"),
        &["epsilon", "sup_phi_l2", "sigma_l2q", "sup_sigma_l2"],
    )?;
    for r in &table {
        csv.row(&[
            CsvCell::Float(r.epsilon),
            CsvCell::Float(r.sup_phi_l2),
            CsvCell::Float(r.sigma_l2q),
            CsvCell::Float(r.sup_sigma_l2),
        ])?;
    }
    csv.finish()?;

    for pair in table.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.epsilon == a.epsilon {
            // duplicate entries must reproduce bit-identical rows
            if (b.sup_phi_l2, b.sigma_l2q, b.sup_sigma_l2)
                != (a.sup_phi_l2, a.sigma_l2q, a.sup_sigma_l2)
            {
                return Err(RunFailure::Assertion(format!(
                    "repeated eps = {} produced different rows",
                    a.epsilon
                )));
            }
            continue;
        }
        let decreasing = b.sup_phi_l2 < a.sup_phi_l2
            && b.sigma_l2q < a.sigma_l2q
            && b.sup_sigma_l2 < a.sup_sigma_l2;
        if !decreasing {
            return Err(RunFailure::Assertion(format!(
                "state errors did not decrease from eps = {} to eps = {}: \
                 phi {:.6e} -> {:.6e}, sigma_L2Q {:.6e} -> {:.6e}, sup_sigma {:.6e} -> {:.6e}",
                a.epsilon, b.epsilon, a.sup_phi_l2, b.sup_phi_l2, a.sigma_l2q, b.sigma_l2q,
                a.sup_sigma_l2, b.sup_sigma_l2
            )));
        }
    }
    Ok(table)
}

/// One row of the dual-sweep table.
#[derive(Debug, Clone, Copy)]
pub struct AdjointSweepRow {
    pub epsilon: f64,
    /// `||p_eps - p||_{L^2(0,T; H^1)}`
    pub p_l2h1: f64,
    /// `||q_eps - q||_{L^2(Q)}`
    pub q_l2q: f64,
    /// `||r_eps - r||_{C([0,T]; L^2)}`
    pub r_c0l2: f64,
}

/// Nonlocal-to-local sweep of the dual systems along matched forward
/// trajectories.
pub fn cmd_adjoint_sweep(cfg: &RunConfig, out: &Path) -> RunResult<Vec<AdjointSweepRow>> {
    prepare_out(out, cfg)?;
    let grid = cfg.grid()?;
    let params = cfg.params();
    require_assumptions(&params, None)?;
    let tgrid = cfg.tgrid()?;
    let epsilons = cfg.sweep_epsilons(grid, 8.0)?;
    let (phi0, sigma0) = cfg.initial_fields(grid)?;
    let controls = cfg.init_controls(grid, tgrid.steps)?;
    let cost = cfg.cost_spec(grid)?;
    cost.validate(grid, tgrid.steps).map_err(RunFailure::from)?;
    let profile = build_profile(cfg.kernel_alpha, grid.d)?;

    let local_fwd = ForwardSolver::new(params, SpatialOp::Local, grid)?
        .solve(&phi0, &sigma0, &controls, tgrid)?;
    let local_adj = AdjointSolver::new(params, SpatialOp::Local, grid)?
        .solve(&local_fwd, &controls, &cost)?;
    write_adjoint_diagnostics(out, &local_adj)?;
    if cfg.snapshot_stride > 0 {
        let snap_dir = out.join("snapshots");
        std::fs::create_dir_all(&snap_dir).map_err(Error::from)?;
        for (k, snap) in local_adj.snapshots.iter().enumerate() {
            let step = tgrid.steps - k;
            if step.is_multiple_of(cfg.snapshot_stride) {
                save_field(snap_dir.join(format!("p_{step:06}.chf1")), &snap.p)?;
                save_field(snap_dir.join(format!("r_{step:06}.chf1")), &snap.r)?;
            }
        }
    }

    let rows: Vec<RunResult<AdjointSweepRow>> = epsilons
        .par_iter()
        .map(|&eps| {
            let kernel = sample_kernel(&profile, eps, grid)?;
            require_assumptions(&params, Some(&kernel))?;
            let op = SpatialOp::Nonlocal(&kernel);
            let fwd = ForwardSolver::new(params, op, grid)?
                .solve(&phi0, &sigma0, &controls, tgrid)?;
            let adj_solver = AdjointSolver::new(params, op, grid)?;
            let dt = tgrid.dt();
            let nt = tgrid.steps;
            let mut p_sq = 0.0;
            let mut q_sq = 0.0;
            let mut r_sup = 0.0_f64;
            adj_solver.solve_with(&fwd, &controls, &cost, |k, snap| {
                let reference = local_adj.at_time_index(k);
                let dp = snap.p.zip_with(&reference.p, |a, b| a - b);
                let dq = snap.q.zip_with(&reference.q, |a, b| a - b);
                let dr = snap.r.zip_with(&reference.r, |a, b| a - b);
                let w = trapezoid_weight(k, nt);
                p_sq += w * dt * norm_h1(&dp).powi(2);
                q_sq += w * dt * norm_l2(&dq).powi(2);
                r_sup = r_sup.max(norm_l2(&dr));
            })?;
            Ok(AdjointSweepRow {
                epsilon: eps,
                p_l2h1: p_sq.sqrt(),
                q_l2q: q_sq.sqrt(),
                r_c0l2: r_sup,
            })
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        table.push(r?);
    }

    let mut csv = CsvWriter::create(
        out.join("adjoint_sweep.csv"),
        &["epsilon", "p_l2h1", "q_l2q", "r_c0l2"],
    )?;
    for r in &table {
        csv.row(&[
            CsvCell::Float(r.epsilon),
            CsvCell::Float(r.p_l2h1),
            CsvCell::Float(r.q_l2q),
            CsvCell::Float(r.r_c0l2),
        ])?;
    }
    csv.finish()?;

    for pair in table.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.epsilon == a.epsilon {
            // duplicate entries must reproduce bit-identical rows
            if (b.p_l2h1, b.q_l2q, b.r_c0l2) != (a.p_l2h1, a.q_l2q, a.r_c0l2) {
                return Err(RunFailure::Assertion(format!(
                    "repeated eps = {} produced different rows",
                    a.epsilon
                )));
            }
            continue;
        }
        let decreasing = b.p_l2h1 < a.p_l2h1 && b.q_l2q < a.q_l2q && b.r_c0l2 < a.r_c0l2;
        if !decreasing {
            return Err(RunFailure::Assertion(format!(
                "dual errors did not decrease from eps = {} to eps = {}: \
                 p {:.6e} -> {:.6e}, q {:.6e} -> {:.6e}, r {:.6e} -> {:.6e}",
                a.epsilon, b.epsilon, a.p_l2h1, b.p_l2h1, a.q_l2q, b.q_l2q, a.r_c0l2, b.r_c0l2
            )));
        }
    }
    Ok(table)
}

/// Taylor-remainder gradient verification against the configured thresholds.
pub fn cmd_grad_check(cfg: &RunConfig, out: &Path) -> RunResult<TaylorReport> {
    prepare_out(out, cfg)?;
    let grid = cfg.grid()?;
    let params = cfg.params();
    let kernel = cfg.kernel(grid)?;
    require_assumptions(&params, kernel.as_ref())?;
    let op = match &kernel {
        Some(k) => SpatialOp::Nonlocal(k),
        None => SpatialOp::Local,
    };
    let tgrid = cfg.tgrid()?;
    let (phi0, sigma0) = cfg.initial_fields(grid)?;
    let cost = cfg.cost_spec(grid)?;
    cost.validate(grid, tgrid.steps).map_err(RunFailure::from)?;
    let base = cfg.init_controls(grid, tgrid.steps)?;
    let direction = random_direction(grid, tgrid.steps, cfg.seed);

    let report = gradient_check(
        &params,
        op,
        &phi0,
        &sigma0,
        tgrid,
        &cost,
        None,
        &base,
        &direction,
        cfg.gradcheck_sigma0,
        cfg.gradcheck_levels,
    )?;

    let mut csv = CsvWriter::create(out.join("taylor.csv"), &["sigma", "remainder"])?;
    for (s, r) in report.sigmas.iter().zip(&report.remainders) {
        csv.row(&[CsvCell::Float(*s), CsvCell::Float(*r)])?;
    }
    csv.finish()?;

    if report.slope < cfg.gradcheck_slope_min || report.slope > cfg.gradcheck_slope_max {
        return Err(RunFailure::Assertion(format!(
            "Taylor slope {:.4} outside [{}, {}]",
            report.slope, cfg.gradcheck_slope_min, cfg.gradcheck_slope_max
        )));
    }
    if report.fd_rel_err > cfg.gradcheck_fo_err_max {
        return Err(RunFailure::Assertion(format!(
            "first-order relative error {:.3e} above {:.3e}",
            report.fd_rel_err, cfg.gradcheck_fo_err_max
        )));
    }
    Ok(report)
}

/// Projected-gradient optimization; writes the iteration history and the
/// final control pair, and fails when the loop does not converge.
pub fn cmd_optimize(cfg: &RunConfig, out: &Path) -> RunResult<OptimizeOutcome> {
    prepare_out(out, cfg)?;
    let grid = cfg.grid()?;
    let params = cfg.params();
    let kernel = cfg.kernel(grid)?;
    require_assumptions(&params, kernel.as_ref())?;
    let op = match &kernel {
        Some(k) => SpatialOp::Nonlocal(k),
        None => SpatialOp::Local,
    };
    let tgrid = cfg.tgrid()?;
    let (phi0, sigma0) = cfg.initial_fields(grid)?;
    let cost = cfg.cost_spec(grid)?;
    cost.validate(grid, tgrid.steps).map_err(RunFailure::from)?;
    let bounds = cfg.bounds()?;
    let init = cfg.init_controls(grid, tgrid.steps)?;
    let opts = cfg.optimizer_opts();

    let outcome =
        optimize(&params, op, &phi0, &sigma0, tgrid, &cost, None, &bounds, &init, &opts)?;
    write_optimize_outputs(out, &outcome)?;
    if !outcome.converged {
        return Err(RunFailure::Assertion(format!(
            "optimizer stopped at vi_residual {:.3e} > tol {:.3e} after {} iterations",
            outcome.final_residual,
            opts.tol,
            outcome.history.len()
        )));
    }
    Ok(outcome)
}

fn write_optimize_outputs(out: &Path, outcome: &OptimizeOutcome) -> RunResult<()> {
    let mut csv = CsvWriter::create(
        out.join("history.csv"),
        &["iter", "cost", "vi_residual", "step", "grad_norm", "u_h1_norm"],
    )?;
    for h in &outcome.history {
        csv.row(&[
            CsvCell::Int(h.iter),
            CsvCell::Float(h.cost),
            CsvCell::Float(h.vi_residual),
            CsvCell::Float(h.step),
            CsvCell::Float(h.grad_norm),
            CsvCell::Float(h.u_h1_norm),
        ])?;
    }
    csv.finish()?;
    save_stacked(out.join("u_controls.chf1"), &outcome.controls.u).map_err(RunFailure::from)?;
    save_stacked(out.join("w_controls.chf1"), &outcome.controls.w).map_err(RunFailure::from)?;
    Ok(())
}

/// One row of the control-convergence table.
#[derive(Debug, Clone, Copy)]
pub struct ControlConvergenceRow {
    pub epsilon: f64,
    pub u_dist_l2q: f64,
    pub w_dist_l2q: f64,
}

/// Control convergence study: a local optimum anchors adapted nonlocal
/// problems per epsilon; distances to the anchor must not increase as the
/// interaction range shrinks. Expensive; gated behind `--full`.
pub fn cmd_control_convergence(
    cfg: &RunConfig,
    out: &Path,
    full: bool,
) -> RunResult<Vec<ControlConvergenceRow>> {
    if !full {
        return Err(RunFailure::Validation(
            "control-convergence multiplies optimizer cost by the epsilon-list length; \
             pass --full to run it"
                .into(),
        ));
    }
    prepare_out(out, cfg)?;
    let grid = cfg.grid()?;
    let params = cfg.params();
    require_assumptions(&params, None)?;
    let tgrid = cfg.tgrid()?;
    let epsilons = cfg.sweep_epsilons(grid, 2.0)?;
    let (phi0, sigma0) = cfg.initial_fields(grid)?;
    let cost = cfg.cost_spec(grid)?;
    cost.validate(grid, tgrid.steps).map_err(RunFailure::from)?;
    let bounds = cfg.bounds()?;
    let init = cfg.init_controls(grid, tgrid.steps)?;
    let opts = cfg.optimizer_opts();
    let profile = build_profile(cfg.kernel_alpha, grid.d)?;

    let anchor_outcome = optimize(
        &params,
        SpatialOp::Local,
        &phi0,
        &sigma0,
        tgrid,
        &cost,
        None,
        &bounds,
        &init,
        &opts,
    )?;
    let anchor_dir = out.join("local_anchor");
    std::fs::create_dir_all(&anchor_dir).map_err(Error::from)?;
    write_optimize_outputs(&anchor_dir, &anchor_outcome)?;
    let anchor = anchor_outcome.controls;

    let rows: Vec<RunResult<ControlConvergenceRow>> = epsilons
        .par_iter()
        .map(|&eps| {
            let kernel = sample_kernel(&profile, eps, grid)?;
            require_assumptions(&params, Some(&kernel))?;
            let adapted = AdaptedSpec { anchor: anchor.clone() };
            let outcome = optimize(
                &params,
                SpatialOp::Nonlocal(&kernel),
                &phi0,
                &sigma0,
                tgrid,
                &cost,
                Some(&adapted),
                &bounds,
                &anchor,
                &opts,
            )?;
            let (du, dw) = outcome.controls.dist_sq(&anchor, tgrid.dt());
            Ok(ControlConvergenceRow {
                epsilon: eps,
                u_dist_l2q: du.sqrt(),
                w_dist_l2q: dw.sqrt(),
            })
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        table.push(r?);
    }

    let mut csv = CsvWriter::create(
        out.join("control_convergence.csv"),
        &["epsilon", "u_dist_l2q", "w_dist_l2q"],
    )?;
    for r in &table {
        csv.row(&[
            CsvCell::Float(r.epsilon),
            CsvCell::Float(r.u_dist_l2q),
            CsvCell::Float(r.w_dist_l2q),
        ])?;
    }
    csv.finish()?;

    let tol = 1e-12;
    for pair in table.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.u_dist_l2q > a.u_dist_l2q + tol || b.w_dist_l2q > a.w_dist_l2q + tol {
            return Err(RunFailure::Assertion(format!(
                "anchor distances increased from eps = {} to eps = {}: \
                 u {:.6e} -> {:.6e}, w {:.6e} -> {:.6e}",
                a.epsilon, b.epsilon, a.u_dist_l2q, b.u_dist_l2q, a.w_dist_l2q, b.w_dist_l2q
            )));
        }
    }
    Ok(table)
}

/// Write per-step adjoint norm diagnostics (used by the demo and tests).
pub fn write_adjoint_diagnostics(
    out: &Path,
    traj: &crate::adjoint::AdjointTrajectory,
) -> RunResult<PathBuf> {
    let path = out.join("adjoint_diagnostics.csv");
    let mut csv =
        CsvWriter::create(&path, &["step", "t", "norm_p", "norm_q", "norm_r", "norm_s"])?;
    for (k, snap) in traj.snapshots.iter().enumerate().rev() {
        let step = traj.tgrid.steps - k;
        csv.row(&[
            CsvCell::Int(step),
            CsvCell::Float(snap.t),
            CsvCell::Float(norm_l2(&snap.p)),
            CsvCell::Float(norm_l2(&snap.q)),
            CsvCell::Float(norm_l2(&snap.r)),
            CsvCell::Float(norm_l2(&snap.s)),
        ])?;
    }
    csv.finish()?;
    Ok(path)
}

/// Human-readable table rendering helpers for the CLI.
pub fn render_state_table(rows: &[StateSweepRow]) -> String {
    let mut s = String::from("epsilon      sup_phi_l2     sigma_l2q      sup_sigma_l2\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12.6} {:<14.6e} {:<14.6e} {:<14.6e}",
            r.epsilon, r.sup_phi_l2, r.sigma_l2q, r.sup_sigma_l2
        );
    }
    s
}

pub fn render_adjoint_table(rows: &[AdjointSweepRow]) -> String {
    let mut s = String::from("epsilon      p_l2h1         q_l2q          r_c0l2\n");
    for r in rows {
        let _ = writeln!(s, "{:<12.6} {:<14.6e} {:<14.6e} {:<14.6e}", r.epsilon, r.p_l2h1, r.q_l2q, r.r_c0l2);
    }
    s
}

pub fn render_control_table(rows: &[ControlConvergenceRow]) -> String {
    let mut s = String::from("epsilon      u_dist_l2q     w_dist_l2q\n");
    for r in rows {
        let _ = writeln!(s, "{:<12.6} {:<14.6e} {:<14.6e}", r.epsilon, r.u_dist_l2q, r.w_dist_l2q);
    }
    s
}
