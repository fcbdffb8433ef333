use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SYSTEM: &str = r#"{"n":2,"m":2,"A":[[0,1],[0,0]],"B":[[[0],[1]],[[1],[0]]],
"C":[[[1,0]],[[0,1]]],"neighbors":[[1,2],[1,2]],"F":[[[-1,-2]],[[0,0]]]}"#;

const SPECTRUM: &str = "-1,-2,-3,-4,-1.5+0.5i,-1.5-0.5i,-2.5,-3.5";

fn dobc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dobc")).args(args).output().expect("spawn dobc")
}

fn put(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn synthesize(dir: &TempDir, sys: &Path, name: &str, seed: &str) -> (Output, PathBuf) {
    let out = dir.path().join(name);
    let o = dobc(&["synthesize", s(sys), "--spectrum", SPECTRUM, "--q", "2", "--seed", seed, "--out", s(&out)]);
    (o, out)
}

#[test]
fn check_accepts_a_valid_system() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let o = dobc(&["check", s(&sys)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&o)["passed"], Value::Bool(true));
}

#[test]
fn check_flags_a_zero_input_channel() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", &SYSTEM.replace(r#"[[1],[0]]],"#, r#"[[0],[0]]],"#));
    let o = dobc(&["check", s(&sys)]);
    assert_eq!(o.status.code(), Some(2));
    let report = json(&o);
    assert_eq!(report["passed"], Value::Bool(false));
    assert!(report["structure"]["violations"].to_string().contains("B_2 = 0"), "{report}");
}

#[test]
fn missing_self_loop_names_the_vertex() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", &SYSTEM.replace("[[1,2],[1,2]]", "[[2],[1,2]]"));
    let o = dobc(&["check", s(&sys)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vertex 1 is missing its self-loop"), "{}", stderr(&o));
}

#[test]
fn malformed_json_reports_position() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", "{\"n\": 2,\n \"m\": }");
    let o = dobc(&["check", s(&sys)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn synthesis_is_deterministic_and_accurate() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let (o1, g1) = synthesize(&dir, &sys, "g1.json", "7");
    let (o2, g2) = synthesize(&dir, &sys, "g2.json", "7");
    assert_eq!(o1.status.code(), Some(0), "{}", stderr(&o1));
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(fs::read(&g1).unwrap(), fs::read(&g2).unwrap());
    assert_eq!(o1.stdout, o2.stdout);
    let mismatch = json(&o1)["max_spectral_mismatch"].as_f64().unwrap();
    assert!(mismatch < 1e-6, "{mismatch}");
}

#[test]
fn unpaired_complex_value_is_refused() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let out = dir.path().join("g.json");
    let o = dobc(&["synthesize", s(&sys), "--spectrum", "-1+2i,-2,-3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("closed under complex conjugation"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn wrong_spectrum_length_is_refused() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let out = dir.path().join("g.json");
    let o = dobc(&["synthesize", s(&sys), "--spectrum", "-1,-2,-3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulation_converges_and_zero_horizon_keeps_one_row() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let (o, gains) = synthesize(&dir, &sys, "g.json", "1");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let trace = dir.path().join("t.csv");
    let o = dobc(&["simulate", s(&sys), s(&gains), "--T", "20", "--x0", "1,-0.5", "--out", s(&trace)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err = json(&o)["final_error_norm"].as_f64().unwrap();
    assert!(err < 1e-6, "{err}");

    let o = dobc(&["simulate", s(&sys), s(&gains), "--T", "0", "--out", s(&trace)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&trace).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("time,"));
}

#[test]
fn simulation_traces_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let (_, gains) = synthesize(&dir, &sys, "g.json", "3");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    dobc(&["simulate", s(&sys), s(&gains), "--T", "2", "--out", s(&a)]);
    dobc(&["simulate", s(&sys), s(&gains), "--T", "2", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn missing_gains_file_names_the_path() {
    let dir = TempDir::new().unwrap();
    let sys = put(&dir, "sys.json", SYSTEM);
    let missing = dir.path().join("nowhere").join("gains.json");
    let trace = dir.path().join("t.csv");
    let o = dobc(&["simulate", s(&sys), s(&missing), "--out", s(&trace)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn setpoint_tracks_references() {
    let dir = TempDir::new().unwrap();
    let scenario = SYSTEM.replace(r#","F":[[[-1,-2]],[[0,0]]]}"#, r#","r":[1.0,-0.5],"x0":[0.3,-0.2]}"#);
    let path = put(&dir, "sp.json", &scenario);
    let report = dir.path().join("report.json");
    let o = dobc(&["setpoint", s(&path), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let errors = v["errors"].as_array().unwrap();
    assert_eq!(errors.len(), 2);
    for e in errors {
        assert!(e.as_f64().unwrap() < 1e-4, "{v}");
    }
}

#[test]
fn infeasible_setpoint_cites_the_rank_condition() {
    let dir = TempDir::new().unwrap();
    let scenario = r#"{"n":1,"m":2,"A":[[0]],"B":[[[1]],[[1]]],"C":[[[1]],[[1]]],
        "neighbors":[[1,2],[1,2]],"r":[1,2]}"#;
    let path = put(&dir, "sp.json", scenario);
    let o = dobc(&["setpoint", s(&path)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rank [A B; C 0] < n + m"), "{}", stderr(&o));
}

#[test]
fn delay_demo_reports_lifted_structure_and_decay() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("delay.json");
    let o = dobc(&["delay-demo", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["max_delay"], 2);
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for r in runs {
        assert_eq!(r["lifted_dim"], 9);
        let rate = r["fitted_rate"].as_f64().unwrap();
        assert!(rate <= 0.55, "{r}");
    }
}

#[test]
fn bundled_scenario_round_trips_through_a_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("scenario.json");
    let o = dobc(&["delay-demo", "--dump-scenario", s(&path)]);
    assert_eq!(o.status.code(), Some(0));
    let o = dobc(&["delay-demo", "--scenario", s(&path), "--rho", "0.3", "--steps", "60"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&o)["passed"], Value::Bool(true));
}
