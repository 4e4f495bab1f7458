use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64 as C;
use serde_json::{json, Value};

use tkz_cli::config::RunConfig;
use tkz_cli::output::{rng, sample_branches, sample_points};
use tkz_core::connection::ConnectionSystem;
use tkz_core::linalg::max_abs;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn tkz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tkz")).args(args).output().expect("tkz runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = tkz(args);
    assert!(out.status.success(), "tkz {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn complex(v: &Value) -> C {
    C::new(v[0].as_f64().unwrap(), v[1].as_f64().unwrap())
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn identical_configs_give_identical_reports() {
    for name in ["twisted_sl2_halforder_n1.json", "classical_sl2_n2.json"] {
        let cfg = config(name);
        let a = tkz(&["run", "--config", path_str(&cfg)]);
        let b = tkz(&["run", "--config", path_str(&cfg)]);
        assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{name} report differs between runs");
    }
}

#[test]
fn saved_connection_reproduces_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["twisted_sl2_halforder_n1.json", "classical_sl2_n2.json"] {
        let out = dir.path().join("conn.json");
        let status = tkz(&["connection", "build", "--config", path_str(&config(name)), "--out", path_str(&out)]);
        assert!(status.status.success());
        let saved: ConnectionSystem = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        let cfg = RunConfig::from_json(&std::fs::read_to_string(config(name)).unwrap()).unwrap();
        let direct = cfg.build().unwrap().connection;
        let mut g = rng(11);
        let points = sample_points(&mut g, direct.n, 10);
        let branches = sample_branches(&mut g, direct.n, 10);
        for (z, p) in points.iter().zip(&branches) {
            let a = direct.eval(z, p).unwrap();
            let b = saved.eval(z, p).unwrap();
            for (x, y) in a.iter().zip(&b) {
                let d = max_abs(&(x - y));
                assert!(d < 1e-14, "{name}: round trip moved an entry by {d}");
            }
        }
    }
}

#[test]
fn critical_level_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(config("twisted_sl2_halforder_n1.json")).unwrap()).unwrap();
    cfg["level"] = json!({"num": -2, "den": 1});
    let path = dir.path().join("critical.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = tkz(&["run", "--config", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("critical level"), "{err}");
}

#[test]
fn malformed_and_inconsistent_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"algebra\": ").unwrap();
    assert_eq!(tkz(&["run", "--config", path_str(&path)]).status.code(), Some(2));

    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(config("classical_sl2_n2.json")).unwrap()).unwrap();
    cfg["n"] = json!(3);
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = tkz(&["run", "--config", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `config`"));
}

#[test]
fn degenerate_change_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let conn = dir.path().join("conn.json");
    assert!(tkz(&["connection", "build", "--config", path_str(&config("classical_sl2_n2.json")), "--out", path_str(&conn)])
        .status
        .success());
    let change = dir.path().join("change.json");
    let spec = json!({"forms": [[[1, 0], [-1, 0]], [[0, 0], [1, 0]]], "beta": [[0, 0], [0, 0]], "delta": ["0", "0"], "cutoffs": []});
    std::fs::write(&change, spec.to_string()).unwrap();
    let out = tkz(&["singular", "analyze", "--conn", path_str(&conn), "--change", path_str(&change), "--cutoff", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `singular`"));
}

#[test]
fn classical_bundled_run() {
    let r = ok_json(&["run", "--config", path_str(&config("classical_sl2_n2.json"))]);
    assert!(r["flatness_max"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["flatness"].as_array().unwrap().len(), 10);
    assert!(r["euler"]["deviation"].as_f64().unwrap() < 1e-10);
    assert_eq!(r["singular"][0]["holomorphic"], json!(true));
    // residue of Ω12 at k = 1: eigenvalues 1/2 and −3/2 over k + 2
    let mut exact: Vec<(i64, i64)> = r["singular"][0]["indicial"][0]["exact"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["num"].as_i64().unwrap(), e["den"].as_i64().unwrap()))
        .collect();
    exact.sort();
    assert_eq!(exact, vec![(-1, 2), (-1, 2), (1, 6), (1, 6), (1, 6), (1, 6), (1, 6), (1, 6)]);
    assert!(r["local"][0]["match"]["residual"].as_f64().unwrap() < 1e-7);
    let csv = r["csv"]["exponents"].as_str().unwrap();
    assert!(csv.starts_with("source,change,component,index,re,im,exact\n"));
    assert!(csv.contains("-1/2"));
}

#[test]
fn twisted_bundled_run() {
    let r = ok_json(&["run", "--config", path_str(&config("twisted_sl2_halforder_n1.json"))]);
    let ind = &r["singular"][0]["indicial"][0];
    for e in ind["exact"].as_array().unwrap() {
        assert_eq!((e["num"].as_i64(), e["den"].as_i64()), (Some(-1), Some(3)));
    }
    let want = C::from_polar(1.0, -std::f64::consts::PI / 3.0);
    let m = &r["monodromy"][0]["matrix"];
    for i in 0..2 {
        for j in 0..2 {
            let target = if i == j { want } else { C::new(0.0, 0.0) };
            assert!((complex(&m[i][j]) - target).norm() < 1e-8);
        }
    }
    let scale = 4f64.powf(-1.0 / 6.0);
    assert!((complex(&r["transports"][0]["value"][0][0]) - scale).norm() < 1e-9);
    assert!(r["local"][0]["match"]["residual"].as_f64().unwrap() < 1e-7);
}

#[test]
fn run_writes_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(config("twisted_sl2_halforder_n1.json")).unwrap()).unwrap();
    cfg["output"] = json!({
        "report": dir.path().join("out/report.json"),
        "connection": dir.path().join("out/conn.json"),
        "csv_dir": dir.path().join("out/csv"),
    });
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = tkz(&["run", "--config", path_str(&path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    for f in ["report.json", "conn.json", "csv/exponents.csv", "csv/flatness.csv", "csv/euler.csv"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing");
    }
    let report = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    // floats carry 17 significant digits
    assert!(report.contains("e0") || report.contains("e-"));
    assert!(report.contains("7.9370052597"));
}

#[test]
fn stepwise_subcommands_agree_with_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    let info = ok_json(&["algebra", "info", "--algebra", "sl(3)"]);
    assert_eq!(info["dim"], json!(8));
    assert!(info["dual_basis_error"].as_f64().unwrap() < 1e-12);

    let cfg = config("twisted_sl2_halforder_n1.json");
    assert!(tkz(&["connection", "build", "--config", path_str(&cfg), "--out", path_str(&p("conn.json"))]).status.success());
    let conn = path_str(&p("conn.json")).to_owned();

    let flat = ok_json(&["check", "flatness", "--conn", &conn, "--count", "3"]);
    assert_eq!(flat["points"].as_array().unwrap().len(), 3);
    let euler = ok_json(&["check", "euler", "--conn", &conn]);
    assert!(euler["deviation"].as_f64().unwrap() < 1e-10);
    assert!((complex(&euler["mean"][0][0]) - C::new(-1.0 / 6.0, 0.0)).norm() < 1e-12);

    std::fs::write(p("change.json"), r#"{"forms": [[[1, 0]]], "beta": [[0, 0]], "delta": ["0"], "cutoffs": []}"#).unwrap();
    let sing = ok_json(&[
        "singular", "analyze", "--conn", &conn, "--change", path_str(&p("change.json")),
        "--cutoff", "4", "--system-out", path_str(&p("ts.json")),
    ]);
    assert_eq!(sing["holomorphic"], json!(true));
    let local = ok_json(&["solve", "local", "--system", path_str(&p("ts.json")), "--component", "1", "--order", "10"]);
    assert_eq!(local["exact_exponents"][0], json!({"num": -1, "den": 3}));

    std::fs::write(p("path.json"), r#"{"vertices": [[[1, 0]], [[4, 0]]], "branch_start": [0]}"#).unwrap();
    let tr = ok_json(&["transport", "--conn", &conn, "--path", path_str(&p("path.json")), "--tol", "1e-11"]);
    assert!((complex(&tr["value"][1][1]) - 4f64.powf(-1.0 / 6.0)).norm() < 1e-9);
    assert!(tr["est_error"].as_f64().unwrap() < 1e-8);
    assert_eq!(tr["end_branches"], json!([0]));

    let square: Vec<[[f64; 2]; 1]> = vec![[[1.0, 0.0]], [[0.0, 1.0]], [[-1.0, 0.0]], [[0.0, -1.0]], [[1.0, 0.0]]];
    std::fs::write(p("loop.json"), json!({"vertices": square, "branch_start": [0]}).to_string()).unwrap();
    let mono = ok_json(&["monodromy", "--conn", &conn, "--loop", path_str(&p("loop.json"))]);
    let want = C::from_polar(1.0, -std::f64::consts::PI / 3.0);
    assert!((complex(&mono["matrix"][0][0]) - want).norm() < 1e-8);
    assert!((complex(&mono["determinant"]) - want * want).norm() < 1e-8);
    assert_eq!(mono["end_branches"], json!([1]));
}
