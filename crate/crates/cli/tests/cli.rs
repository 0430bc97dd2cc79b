use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use odefilt_cli::config::ExperimentConfig;

fn odefilt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odefilt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn solve_writes_one_row_per_grid_point() {
    let o = odefilt(&["solve", "--benchmark", "lv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,mean_0,mean_1,var");
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
}

#[test]
fn unknown_benchmark_is_a_usage_error() {
    let o = odefilt(&["solve", "--benchmark", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_flag_is_a_usage_error_and_help_is_not() {
    assert_eq!(odefilt(&["infer", "--bogus"]).status.code(), Some(1));
    assert_eq!(odefilt(&["--help"]).status.code(), Some(0));
}

#[test]
fn divergent_solve_exits_with_numerical_code() {
    let o = odefilt(&["solve", "--benchmark", "logistic", "--theta", "50,0.001"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infer_trace_has_budget_plus_one_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let p = path.to_str().unwrap();
    let o = odefilt(&[
        "infer",
        "--benchmark",
        "logistic",
        "--method",
        "rwm",
        "--budget",
        "1",
        "-o",
        p,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&path);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "iter,theta_0,theta_1,E,rel_err,accepted,wall_ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,"));
    assert!(lines[2].starts_with("1,"));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = odefilt(&[
            "infer",
            "--benchmark",
            "logistic",
            "--method",
            "plmc",
            "--step",
            "0.01",
            "--budget",
            "5",
            "--seed",
            "7",
            "-o",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn chains_get_separate_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("c.csv");
    let o = odefilt(&[
        "infer",
        "--benchmark",
        "constant",
        "--method",
        "rwm",
        "--budget",
        "2",
        "--chains",
        "2",
        "-o",
        base.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let c0 = read(&dir.path().join("c_chain0.csv"));
    let c1 = read(&dir.path().join("c_chain1.csv"));
    assert_ne!(c0, c1);
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_odefilt"))
        .args(["infer", "--benchmark", "constant", "--budget", "2"])
        .env("ODEFILT_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("constant_nwt_seed0.csv").exists());
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/lv_nwt.toml");
    let parsed = ExperimentConfig::load(&example).unwrap();
    assert_eq!(parsed.step, 0.5);
    let again = ExperimentConfig::from_toml(&parsed.to_toml()).unwrap();
    assert_eq!(parsed, again);

    let o = odefilt(&[
        "infer",
        "--config",
        example.to_str().unwrap(),
        "--budget",
        "3",
        "--print-config",
    ]);
    assert!(o.status.success());
    let printed = ExperimentConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(printed.budget, 3);
    assert_eq!(printed.method, "nwt");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "benchmark = \"lv\"\nstepp = 1.0\n").unwrap();
    assert_eq!(
        odefilt(&["infer", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn surface_grid_is_rectangular() {
    let o = odefilt(&[
        "sweep",
        "surface",
        "--benchmark",
        "logistic",
        "--a",
        "0",
        "--b",
        "1",
        "--a-range",
        "2:4:3",
        "--b-range",
        "2:4:4",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "theta_a,theta_b,E_aware,E_unaware");
    assert_eq!(lines.len(), 1 + 12);
    let mut a_values: Vec<f64> = Vec::new();
    for row in &lines[1..] {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 4);
        if !a_values.contains(&cols[0]) {
            a_values.push(cols[0]);
        }
    }
    assert_eq!(a_values, vec![2.0, 3.0, 4.0]);
}

#[test]
fn sweep_summary_lists_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let best = dir.path().join("best.csv");
    let o = odefilt(&[
        "sweep",
        "steps",
        "--benchmark",
        "constant",
        "--method",
        "gd",
        "--budget",
        "3",
        "--best-trace",
        best.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(
        lines[0],
        "step,final_E,final_rel_err,min_rel_err,status,best"
    );
    assert_eq!(lines.len(), 1 + 17);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",1")).count(), 1);
    assert_eq!(read(&best).lines().count(), 1 + 4);
}

#[test]
fn jacobian_check_reports_both_variants() {
    let o = odefilt(&[
        "jacobian-check",
        "--benchmark",
        "constant",
        "--halvings",
        "2",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let (table, convergence) = text.split_once("\n\n").unwrap();
    let rows: Vec<_> = table.lines().collect();
    assert_eq!(rows[0], "variant,identity_residual,jacobian_gap");
    let gap = |r: &str| -> f64 { r.split(',').nth(2).unwrap().parse().unwrap() };
    assert!(rows[1].starts_with("literal,"));
    assert!(gap(rows[1]) > 0.5);
    assert!(rows[2].starts_with("drift,"));
    assert!(gap(rows[2]) < 1e-6);
    assert_eq!(rows[3], "selected,drift,");
    let conv: Vec<_> = convergence.lines().collect();
    assert_eq!(conv[0], "h,jacobian_gap_abs,ratio");
    assert_eq!(conv.len(), 1 + 3);
}
