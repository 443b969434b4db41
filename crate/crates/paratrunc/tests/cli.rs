//! End-to-end tests of the command-line interface: report schemas, exit
//! codes, determinism, and file-format plumbing.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_paratrunc"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn paratrunc");
    assert!(
        out.status.success(),
        "paratrunc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("spawn paratrunc")
        .status
        .code()
        .expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Generate the shared oscillation field pair used by most tests.
fn gen_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let w = dir.join("w.ptf");
    let g = dir.join("g.ptf");
    run_ok(&[
        "field",
        "gen",
        "--preset",
        "oscillation",
        "--nt",
        "20",
        "--nx",
        "96",
        "--out",
        w.to_str().unwrap(),
        "--flux-out",
        g.to_str().unwrap(),
    ]);
    (w, g)
}

#[test]
fn stats_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (w, _) = gen_pair(dir.path());
    let rep = dir.path().join("stats.json");
    run_ok(&[
        "field",
        "stats",
        "--input",
        w.to_str().unwrap(),
        "--report",
        rep.to_str().unwrap(),
    ]);
    let v = read_json(&rep);
    assert_eq!(v["schema"], "paratrunc-report/1");
    assert_eq!(v["grid"]["nt"], 20);
    assert_eq!(v["grid"]["n"][0], 96);
    assert!(v["l2"].as_f64().unwrap() > 0.0);
}

#[test]
fn truncate_report_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (w, g) = gen_pair(dir.path());
    let rep = dir.path().join("tr.json");
    let args = [
        "truncate",
        "--w",
        w.to_str().unwrap(),
        "--g",
        g.to_str().unwrap(),
        "--lambda",
        "500",
        "--pad-t",
        "4",
        "--pad-x",
        "8",
        "--report",
        rep.to_str().unwrap(),
    ];
    run_ok(&args);
    let first = std::fs::read(&rep).unwrap();
    let v = read_json(&rep);
    let results = &v["results"];
    for key in [
        "prop_a_exact",
        "a_max_dev",
        "c_b",
        "c_c",
        "c_d_flux",
        "c_d_family",
        "c_e",
        "ibp_residual",
        "bad_nodes",
        "cylinders",
    ] {
        assert!(
            !results[key].is_null() || key == "c_d_flux",
            "missing report key {key}"
        );
    }
    assert_eq!(results["prop_a_exact"], true);
    assert!(results["bad_nodes"].as_u64().unwrap() > 0);
    assert!(results["c_b"].as_f64().unwrap() > 0.0);
    assert!(results["ibp_residual"].as_f64().unwrap().is_finite());
    // Byte-identical rerun.
    run_ok(&args);
    assert_eq!(first, std::fs::read(&rep).unwrap(), "report not deterministic");
}

#[test]
fn truncate_good_lambda_routing() {
    let dir = tempfile::tempdir().unwrap();
    let (w, g) = gen_pair(dir.path());
    let rep = dir.path().join("gl.json");
    run_ok(&[
        "truncate",
        "--w",
        w.to_str().unwrap(),
        "--g",
        g.to_str().unwrap(),
        "--lambda",
        "goodlambda:2",
        "--pad-t",
        "4",
        "--pad-x",
        "8",
        "--report",
        rep.to_str().unwrap(),
    ]);
    let v = read_json(&rep);
    assert!(v["lambda"].as_f64().unwrap() > 0.0, "selected level recorded");
    assert!(v["alpha"].as_f64().unwrap() > 0.0);
    assert!(!v["good_lambda"].is_null(), "selection summary recorded");
}

#[test]
fn sweep_rows_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (w, g) = gen_pair(dir.path());
    let rep = dir.path().join("sw.json");
    let csv = dir.path().join("sw.csv");
    run_ok(&[
        "sweep",
        "--w",
        w.to_str().unwrap(),
        "--g",
        g.to_str().unwrap(),
        "--lambda-min",
        "300",
        "--decades",
        "2",
        "--per-decade",
        "2",
        "--pad-t",
        "4",
        "--pad-x",
        "8",
        "--report",
        rep.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    let v = read_json(&rep);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5, "2 decades at 2 per decade, endpoints included");
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lambda,alpha,bad_nodes,c_b,c_c,c_e,prop_a_exact");
    assert_eq!(lines.len(), 6);
    // Lambda ladder is geometric from lambda-min upward.
    let l0: f64 = rows[0]["lambda"].as_f64().unwrap();
    let l4: f64 = rows[4]["lambda"].as_f64().unwrap();
    assert!((l0 - 300.0).abs() < 1e-9);
    assert!((l4 / l0 - 4.0).abs() < 1e-9);
}

#[test]
fn convert_roundtrip_preserves_values() {
    let dir = tempfile::tempdir().unwrap();
    let (w, _) = gen_pair(dir.path());
    let csv = dir.path().join("w.csv");
    let back = dir.path().join("w2.ptf");
    run_ok(&[
        "field",
        "convert",
        "--input",
        w.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    run_ok(&[
        "field",
        "convert",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        back.to_str().unwrap(),
    ]);
    let stats = |p: &Path| {
        let rep = dir.path().join("cmp.json");
        run_ok(&[
            "field",
            "stats",
            "--input",
            p.to_str().unwrap(),
            "--report",
            rep.to_str().unwrap(),
        ]);
        read_json(&rep)
    };
    let a = stats(&w);
    let b = stats(&back);
    for key in ["l2", "min", "max"] {
        let (x, y) = (a[key].as_f64().unwrap(), b[key].as_f64().unwrap());
        assert!(
            (x - y).abs() <= 1e-12 * x.abs().max(1.0),
            "{key} drifted in roundtrip: {x} vs {y}"
        );
    }
}

#[test]
fn whitney_cover_from_mask() {
    let dir = tempfile::tempdir().unwrap();
    // Hand-written CSV mask: a box of ones away from the grid boundary.
    let csv = dir.path().join("mask.csv");
    let mut text = String::from("t,x,value\n");
    let (nt, nx, tau, h) = (12, 24, 0.001, 1.0 / 23.0);
    for it in 0..nt {
        for ix in 0..nx {
            let v = if (4..=7).contains(&it) && (8..=14).contains(&ix) {
                1.0
            } else {
                0.0
            };
            text.push_str(&format!("{},{},{v}\n", it as f64 * tau, ix as f64 * h));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let mask = dir.path().join("mask.ptf");
    run_ok(&[
        "field",
        "convert",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        mask.to_str().unwrap(),
    ]);
    let rep = dir.path().join("wh.json");
    let weights = dir.path().join("weights.json");
    run_ok(&[
        "whitney",
        "--mask",
        mask.to_str().unwrap(),
        "--alpha",
        "1.0",
        "--report",
        rep.to_str().unwrap(),
        "--weights-out",
        weights.to_str().unwrap(),
    ]);
    let v = read_json(&rep);
    assert!(v["summary"]["cylinder_count"].as_u64().unwrap() > 0);
    assert!(weights.exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (w, g) = gen_pair(dir.path());
    let rep = dir.path().join("r.json");
    // Missing input file: configuration error.
    assert_eq!(
        exit_code(&[
            "truncate",
            "--w",
            "/nonexistent/w.ptf",
            "--g",
            g.to_str().unwrap(),
            "--lambda",
            "500",
            "--report",
            rep.to_str().unwrap(),
        ]),
        1
    );
    // Malformed phi spec: configuration error.
    assert_eq!(
        exit_code(&[
            "truncate",
            "--w",
            w.to_str().unwrap(),
            "--g",
            g.to_str().unwrap(),
            "--phi",
            "bogus",
            "--lambda",
            "500",
            "--report",
            rep.to_str().unwrap(),
        ]),
        1
    );
    // Level so low the bad set floods the padded grid: numeric failure.
    assert_eq!(
        exit_code(&[
            "truncate",
            "--w",
            w.to_str().unwrap(),
            "--g",
            g.to_str().unwrap(),
            "--lambda",
            "5",
            "--pad-t",
            "4",
            "--pad-x",
            "8",
            "--report",
            rep.to_str().unwrap(),
        ]),
        2
    );
}
