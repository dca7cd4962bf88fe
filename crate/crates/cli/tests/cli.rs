use std::path::Path;
use std::process::{Command, Output};

fn lyapsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapsgd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn reproduce(id: &str, config: &str) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("run");
    let o = lyapsgd(&[
        "reproduce",
        id,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    (o, dir)
}

fn assert_complete(dir: &Path, id: &str) {
    let m = manifest(&dir.join("run"));
    assert_eq!(m["experiment"], id);
    assert_eq!(m["exit_code"], 0, "{m}");
    let files = m["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f.as_str().unwrap().ends_with(".csv")));
    assert!(files.iter().any(|f| f.as_str().unwrap().ends_with(".svg")));
    for f in files {
        assert!(
            dir.join("run").join(f.as_str().unwrap()).is_file(),
            "missing {f}"
        );
    }
}

#[test]
fn bounds_prints_one_csv_row() {
    let o = lyapsgd(&["bounds", "--gamma", "0.5", "--T", "5"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    let lines: Vec<_> = s.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("gamma,mu,L,T,eps,metric"));
    assert!(lines[1].contains("convex-short"));
}

#[test]
fn check_accepts_the_recipe() {
    let o = lyapsgd(&["check", "--gamma", "1.5", "--T", "5", "--eps", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("step,condition,lhs,rhs,residual"));
}

#[test]
fn check_reports_an_infeasible_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    let class = lyapsgd::problem::ProblemClass::new(0.0, 1.0, 0.5, 3);
    let mut params = lyapsgd::lyapunov::recipe_for(&class, None).unwrap();
    params.rho *= 1.5;
    std::fs::write(&path, params.to_json().unwrap()).unwrap();
    let o = lyapsgd(&[
        "check",
        "--gamma",
        "0.5",
        "--T",
        "3",
        "--params",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_gamma_is_a_usage_error() {
    let o = lyapsgd(&["bounds"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_experiment_is_rejected() {
    let o = lyapsgd(&["reproduce", "fig-nothing"]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fig-bias-convex"));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"gamma": 1.5, "T": 3}"#).unwrap();
    let o = lyapsgd(&[
        "bounds",
        "--gamma",
        "0.5",
        "--T",
        "7",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(row.starts_with("1.5,0.0,1.0,3,"), "{row}");
}

#[test]
fn pep_matches_theory_and_exports_sdpa() {
    let dir = tempfile::tempdir().unwrap();
    let dat = dir.path().join("bias.dat-s");
    let o = lyapsgd(&[
        "pep",
        "--gamma",
        "0.5",
        "--T",
        "2",
        "--variance",
        "--export",
        dat.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rho = v["bias"]["optimal"].as_f64().unwrap();
    assert!((rho - 1.5).abs() <= 1e-5 * 1.5, "{rho}");
    let e = v["variance"]["optimal"].as_f64().unwrap();
    assert!((e - 0.125).abs() <= 1e-4 * 1.125, "{e}");
    let text = std::fs::read_to_string(&dat).unwrap();
    assert!(text
        .lines()
        .any(|l| !l.starts_with('"') && !l.starts_with('*')));
}

#[test]
fn simulate_writes_trajectory_and_mc() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = lyapsgd(&[
        "simulate",
        "--gamma",
        "0.5",
        "--T",
        "4",
        "--trajectories",
        "500",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,x1,index,f_gap,sqdist");
    assert_eq!(traj.lines().count(), 6);
    let mc = std::fs::read_to_string(out.join("mc.csv")).unwrap();
    assert_eq!(mc.lines().next().unwrap(), "metric,mean,se,count,seed");
    assert!(mc.lines().nth(1).unwrap().ends_with(",500,3"));
}

#[test]
fn simulate_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = lyapsgd(&[
            "simulate",
            "--gamma",
            "1.2",
            "--T",
            "6",
            "--trajectories",
            "300",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        std::fs::read_to_string(out.join("mc.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn sprox_runs_on_the_default_halfspaces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sp");
    let o = lyapsgd(&[
        "sprox",
        "--gamma",
        "1",
        "--T",
        "5",
        "--trajectories",
        "200",
        "--x0",
        "2,3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trajectory.csv").is_file());
    assert!(out.join("mc.csv").is_file());
}

#[test]
fn certify_emits_a_revalidated_certificate() {
    let o = lyapsgd(&["certify", "--gamma", "1.5", "--T", "2"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["revalidated"], true);
    let o = lyapsgd(&["certify", "--gamma", "1.5", "--T", "2", "--rho-factor", "1"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["certificate"].is_null());
}

#[test]
fn reproduce_bias_convex_small_grid() {
    let (o, dir) = reproduce(
        "fig-bias-convex",
        r#"{"gammas": [0.5, 1.5], "horizons": [2]}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "fig-bias-convex");
}

#[test]
fn reproduce_variance_convex_counts_the_trap_as_expected() {
    let (o, dir) = reproduce(
        "fig-variance-convex",
        r#"{"gammas": [0.4, 1.6], "probe_ks": [3, 4]}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "fig-variance-convex");
    assert_eq!(
        manifest(&dir.path().join("run"))["tally"]["expected_infeasible"],
        1
    );
}

#[test]
fn reproduce_bias_strongly_convex_small_grid() {
    let (o, dir) = reproduce(
        "fig-bias-strongly-convex",
        r#"{"gammas": [0.5, 1.2], "horizons": [1, 2]}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "fig-bias-strongly-convex");
}

#[test]
fn reproduce_variance_strongly_convex_small_grid() {
    let (o, dir) = reproduce(
        "fig-variance-strongly-convex",
        r#"{"gammas": [0.5, 1.2], "probe_ks": [3]}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "fig-variance-strongly-convex");
}

#[test]
fn reproduce_containment_small_grid() {
    let (o, dir) = reproduce(
        "containment-suite",
        r#"{"gammas": [0.5, 1.5], "horizons": [3], "mus": [0.0, 0.5], "deltas": [0.0, 1.0], "trajectories": 2000}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "containment-suite");
}

#[test]
fn reproduce_sprox_small_grid() {
    let (o, dir) = reproduce(
        "sprox-suite",
        r#"{"gammas": [1.0], "horizons": [1, 3], "trajectories": 500}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "sprox-suite");
}

#[test]
fn reproduce_certificates_small_grid() {
    let (o, dir) = reproduce(
        "certificates-suite",
        r#"{"gammas": [1.5], "horizons": [2]}"#,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_complete(dir.path(), "certificates-suite");
    assert!(dir
        .path()
        .join("run/certificates/cert_gl1.5_T2_1.01.json")
        .is_file());
}

#[test]
fn unknown_config_key_fails() {
    let (o, _dir) = reproduce("sprox-suite", r#"{"horizon": 3}"#);
    assert_eq!(code(&o), 1);
}
