use std::fs;
use std::process::{Command, Output};

fn convsplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convsplit"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[solver]\ntime_step = 1.0\n").unwrap();
    let out = convsplit(&["scad-bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("time_step"));
}

#[test]
fn missing_image_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gl.toml");
    fs::write(
        &cfg,
        "[gl]\nimage = \"/does/not/exist.pgm\"\nlabels = \"/does/not/exist.pgm\"\n",
    )
    .unwrap();
    let out = convsplit(&["gl-segment", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_jacobi_weight_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("j.toml");
    fs::write(
        &cfg,
        "problem = \"gl\"\n[solver]\nalgorithms = [\"bapdca-n\"]\n[solver.preconditioner]\nkind = \"jacobi\"\nc_tilde = 0.5\n[gl.synthetic]\nsize = 12\n",
    )
    .unwrap();
    let out = convsplit(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_writes_trace_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = convsplit(&[
        "solve",
        "--scale",
        "0.05",
        "--algorithms",
        "bapdca-ls-n",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 2);
    let solution = fs::read_to_string(dir.path().join("solution.txt")).unwrap();
    assert!(solution.lines().all(|l| l.parse::<f64>().is_ok()));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("solve_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"][0]["algorithm"], "bapdca-ls-n");
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn corrupted_diag_exits_1_and_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let out = convsplit(&["diag", "--corrupt", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("descent_i"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("diag_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}
