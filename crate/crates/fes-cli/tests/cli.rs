use serde_json::Value;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json")).to_string_lossy().into_owned()
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn fes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fes")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn check_exit_codes() {
    let ok = fes(&["check", &fixture("triangle"), "--order", "1"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["compatible"], true);

    let bad = fes(&["check", &fixture("counterexample")]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(json(&bad)["failing_cells"], serde_json::json!(["0-1-2"]));
    assert!(stderr(&bad).contains("0-1-2"));

    let path = scratch("malformed.json");
    std::fs::write(&path, "{\"dimension\": 2, \"vertices\": [").unwrap();
    assert_eq!(fes(&["check", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(fes(&["check", "/nonexistent/mesh.json"]).status.code(), Some(2));
    assert_eq!(fes(&["check", &fixture("triangle"), "--order", "0"]).status.code(), Some(2));

    let orders = scratch("unknown_cell_orders.json");
    std::fs::write(&orders, r#"{"default": 1, "per_cell": {"9-9": 2}}"#).unwrap();
    assert_eq!(fes(&["check", &fixture("triangle"), "--orders", orders.to_str().unwrap()]).status.code(), Some(2));
    // clap rejects unknown flags with its own usage exit code
    assert_eq!(fes(&["check", &fixture("triangle"), "--bogus"]).status.code(), Some(2));
}

#[test]
fn betti_and_basis() {
    let out = fes(&["betti", &fixture("annulus"), "--order", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["discrete"], serde_json::json!([1, 1, 0]));

    let out = fes(&["basis", &fixture("triangle"), "--order", "1"]);
    let v = json(&out);
    let dims: Vec<u64> = v["spaces"].as_array().unwrap().iter().map(|s| s["dim"].as_u64().unwrap()).collect();
    assert_eq!(dims, vec![3, 3, 1]);
    assert_eq!(v["dofs"].as_array().unwrap().len(), 7);
    let one = fes(&["basis", &fixture("triangle"), "--order", "2", "--k", "1"]);
    assert_eq!(json(&one)["spaces"][0]["dim"], 8);
    assert_eq!(fes(&["basis", &fixture("triangle"), "--k", "3"]).status.code(), Some(2));
}

#[test]
fn dual_export_round_trips() {
    let mesh_out = scratch("dual_square2.json");
    let out = fes(&["dual", &fixture("square2"), "--mesh-out", mesh_out.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["dual_counts"], serde_json::json!([6, 9, 4]));
    assert_eq!(v["rho_identity"], serde_json::json!([true, true, true]));
    assert_eq!(v["round_trip"], true);
    // the written file is itself a valid mesh with the same dual
    let again = fes(&["betti", mesh_out.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(json(&again)["counts"], serde_json::json!([6, 9, 4]));

    // three triangles on one edge
    let fan = scratch("fan.json");
    std::fs::write(&fan, r#"{"dimension": 2, "vertices": [[0,0,0],[1,0,0],[0,1,0],[0,0,1],[0,-1,0]], "simplices": [[0,1,2],[0,1,3],[0,1,4]]}"#).unwrap();
    let out = fes(&["dual", fan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("0-1"));
}

#[test]
fn eigenvalue_table() {
    let out = fes(&["eig", &fixture("square_h8"), "--count", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,eigenvalue,k,zero_modes,harmonic,betti"));
    let vals: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    for (l, e) in vals.iter().zip([PI * PI, PI * PI, 2.0 * PI * PI]) {
        assert!((l - e).abs() / e <= 0.10, "{l} vs {e}");
    }

    let out = fes(&["eig", &fixture("annulus"), "--k", "1", "--count", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[4..], &["1", "1"]);

    let out = fes(&["eig", &fixture("triangle"), "--order", "1", "--count", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("warning"));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn interpolation_reports() {
    let ok = fes(&["interp-test", &fixture("triangle"), "--order", "2"]);
    assert_eq!(ok.status.code(), Some(0));
    let v = json(&ok);
    assert_eq!(v["diagram"]["commutes"], true);
    assert_eq!(v["diagram"]["integrals_preserved"], true);

    let l2 = fes(&["interp-test", &fixture("square2"), "--order", "2", "--mirrors", "l2"]);
    assert_eq!(l2.status.code(), Some(1));
    assert!(stderr(&l2).contains("commutation"));

    let up = fes(&["interp-test", &fixture("square2"), "--order", "2", "--mirrors", "harmonic", "--weight-alpha", "2,-1"]);
    assert_eq!(up.status.code(), Some(0), "{}", stderr(&up));
    let v = json(&up);
    assert!(v["upwind"]["exponential_residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["upwind"]["spans_differ_from_downwind"], true);
    assert_eq!(fes(&["interp-test", &fixture("square2"), "--weight-alpha", "1,2,3"]).status.code(), Some(2));
    assert_eq!(fes(&["interp-test", &fixture("square2"), "--weight-alpha", "x"]).status.code(), Some(2));
}

#[test]
fn tensor_and_smoothing() {
    let out = fes(&["tensor-check", &fixture("interval"), &fixture("interval2"), "--order", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["product_counts"], serde_json::json!([6, 7, 2]));

    let out = fes(&["smooth-test", "--dim", "2", "--order", "2", "--points", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["locality"], true);
    assert!(v["commutation"]["max_residual"].as_f64().unwrap() <= 1e-5);

    let out = fes(&["smooth-test", &fixture("square_h4"), "--points", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (lo, hi) = (json(&out)["scale_bounds"][0].as_f64().unwrap(), json(&out)["scale_bounds"][1].as_f64().unwrap());
    assert!((lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9, "{lo} {hi}");
    assert_eq!(fes(&["smooth-test", "--dim", "4"]).status.code(), Some(2));
}

#[test]
fn out_flag_matches_stdout() {
    let path = scratch("check_out.json");
    let direct = fes(&["check", &fixture("square2"), "--order", "2"]);
    let written = fes(&["--out", path.to_str().unwrap(), "check", &fixture("square2"), "--order", "2"]);
    assert_eq!(written.status.code(), Some(0));
    assert!(written.stdout.is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), direct.stdout);
}
