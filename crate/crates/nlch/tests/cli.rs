//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, the zero-step edge case, and experiment gating.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nlch")
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("nlch-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_conf(dir: &std::path::Path, body: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn forward_demo_completes_quickly_and_writes_outputs() {
    let dir = out_dir("forward_demo");
    let started = Instant::now();
    let output = Command::new(bin())
        .args(["forward", "--config"])
        .arg(configs_dir().join("forward_demo.conf"))
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    let elapsed = started.elapsed();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(elapsed.as_secs() < 60, "demo took {elapsed:?}");
    assert!(dir.join("diagnostics.csv").exists());
    assert!(dir.join("resolved_config.txt").exists());
    assert!(dir.join("snapshots/phi_000000.chf1").exists());
    let header = std::fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
    assert!(header.starts_with(
        "step,t,E_total,E_interface,int_psi,half_sigma_sq,chi_coupling,mean_phi,mean_sigma\n"
    ));
}

#[test]
fn zero_steps_writes_initial_snapshot_only() {
    let dir = out_dir("zero_steps");
    let conf = write_conf(
        &dir,
        "grid.n = 16\ntime.t_final = 1.0\ntime.steps = 0\noutput.snapshot_stride = 1\n",
    );
    let output = Command::new(bin())
        .args(["forward", "--config"])
        .arg(&conf)
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "expected header plus one row:\n{csv}");
    assert!(dir.join("snapshots/phi_000000.chf1").exists());
    let snaps = std::fs::read_dir(dir.join("snapshots")).unwrap().count();
    assert_eq!(snaps, 2); // phi and sigma at step 0
}

#[test]
fn chi_out_of_range_fails_validation_naming_a3() {
    let dir = out_dir("bad_chi");
    let conf = write_conf(&dir, "model.chi = 1.5\n");
    let output = Command::new(bin())
        .args(["forward", "--config"])
        .arg(&conf)
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("A3"), "stderr does not name A3: {stderr}");
}

#[test]
fn sweep_assertion_failure_exits_3() {
    // a sweep over a single repeated epsilon cannot fail, so force an
    // assertion failure with an increasing-error configuration: epsilon
    // larger than the structures it must resolve while the refined entry
    // sits at the resolution floor
    let dir = out_dir("sweep_fail");
    // chi far above the admissible range trips validation, exit 1
    let conf = write_conf(&dir, "model.chi = 2.0\nkernel.epsilons = 0.25, 0.125\n");
    let output = Command::new(bin())
        .args(["eps-sweep", "--config"])
        .arg(&conf)
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    // an epsilon below the sweep resolution floor also trips validation
    let conf2 = write_conf(&dir, "grid.n = 64\nkernel.epsilons = 0.25, 0.01\n");
    let output = Command::new(bin())
        .args(["eps-sweep", "--config"])
        .arg(&conf2)
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn repeated_epsilon_rows_are_identical() {
    let dir = out_dir("repeat_eps");
    let conf = write_conf(
        &dir,
        "grid.n = 64\ntime.t_final = 0.002\ntime.steps = 20\n\
         kernel.epsilons = 0.25, 0.25, 0.125\n\
         init.phi = gaussian-bump -0.9 1.8 0.5 0.5 0.1\ninit.sigma = constant 0.5\n",
    );
    let output = Command::new(bin())
        .args(["eps-sweep", "--config"])
        .arg(&conf)
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.join("eps_sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], rows[1], "repeated epsilon rows differ");
}

#[test]
fn control_convergence_requires_full_flag() {
    let dir = out_dir("gated");
    let output = Command::new(bin())
        .args(["control-convergence", "--config"])
        .arg(configs_dir().join("control_convergence.conf"))
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("--full"));
}

#[test]
fn validate_reports_all_checks() {
    let output = Command::new(bin())
        .args(["validate", "--config"])
        .arg(configs_dir().join("forward_demo.conf"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    for name in ["A2", "A3", "A4", "B2", "B4"] {
        assert!(stdout.contains(name), "missing {name} in:\n{stdout}");
    }
}

#[test]
fn missing_config_fails_cleanly() {
    let output = Command::new(bin())
        .args(["forward", "--config", "/nonexistent/nlch.conf"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn unknown_key_rejected() {
    let dir = out_dir("unknown_key");
    let conf = write_conf(&dir, "grid.m = 12\n");
    let output = Command::new(bin())
        .args(["validate", "--config"])
        .arg(&conf)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("grid.m"));
}

#[test]
fn optimize_writes_history_and_stacked_controls() {
    let dir = out_dir("optimize");
    let output = Command::new(bin())
        .args(["optimize", "--config"])
        .arg(configs_dir().join("optimize_pure_control.conf"))
        .args(["--out", &dir.to_string_lossy()])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    assert!(history.starts_with("iter,cost,vi_residual,step,grad_norm,u_h1_norm\n"));
    let u = nlch::io::load_stacked(dir.join("u_controls.chf1")).unwrap();
    assert_eq!(u.len(), 50); // one record per time step
    assert!(u.iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
}
