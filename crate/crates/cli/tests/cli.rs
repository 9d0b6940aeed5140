use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn program(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(name)
}

fn spge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spge")).args(args).output().expect("binary runs")
}

fn split(sub: &str, extra: &[&str]) -> Output {
    let (m, g) = (program("splitting_normal_model.ppl"), program("splitting_normal_guide.ppl"));
    let mut args = vec![sub, m.to_str().unwrap(), g.to_str().unwrap()];
    args.extend_from_slice(extra);
    spge(&args)
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
    })
}

#[test]
fn analyze_reports_smooth_names() {
    let o = spge(&["analyze", program("splitting_normal_model.ppl").to_str().unwrap(), "--prop", "diff"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    assert_eq!(v["smooth_names"], serde_json::json!(["z1"]));
    assert_eq!(v["nonsmooth_names"], serde_json::json!(["z2"]));
}

#[test]
fn analyze_step_of_square() {
    let o = spge(&["analyze", program("step_of_square.ppl").to_str().unwrap(), "--prop", "lip"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    let z = v["variables"].as_array().unwrap().iter().find(|e| e["var"] == "z").unwrap();
    let p = &z["p"];
    let excluded = p.get("all_except").is_some_and(|xs| xs.as_array().unwrap().iter().any(|x| x == "x"));
    let only_without = p.get("only").is_some_and(|xs| !xs.as_array().unwrap().iter().any(|x| x == "x"));
    assert!(excluded || only_without, "{p}");
}

#[test]
fn analyze_skip_is_smooth_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skip.ppl");
    std::fs::write(&path, "skip").unwrap();
    let o = spge(&["analyze", path.to_str().unwrap()]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    for e in v["variables"].as_array().unwrap() {
        assert_eq!(e["p"], serde_json::json!({"all_except": []}), "{e}");
    }
}

#[test]
fn select_under_lipschitz_picks_z1() {
    let o = split("select", &["--prop", "lip"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["plan"]["selected"], serde_json::json!(["z1"]));
    assert_eq!(v["report"]["analysis_calls"], 3);
}

#[test]
fn infeasible_selection_exits_3() {
    let (m, g) = (program("relu_model.ppl"), program("relu_guide.ppl"));
    let o = spge(&["select", m.to_str().unwrap(), g.to_str().unwrap(), "--prop", "diff"]);
    assert_eq!(o.status.code(), Some(3));
    let v = stdout_json(&o);
    assert!(v["plan"].is_null());
    assert!(v["infeasible"].is_string());
}

#[test]
fn parse_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ppl");
    std::fs::write(&path, "x := sam(name(\"a\", 0), N(0, 1))").unwrap();
    let o = spge(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    let o = spge(&["analyze", dir.path().join("missing.ppl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_is_deterministic_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    let run = |file: &str| {
        let out = dir.path().join(file);
        let o = split("train", &["--seed", "7", "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let mut rdr = csv::Reader::from_reader(a.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["step", "θ1", "θ2", "grad_norm", "seed"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2001);
    let last = rows.last().unwrap();
    let theta: Vec<f64> = (1..3).map(|i| last[i].parse().unwrap()).collect();
    assert!((theta[0] - 0.95).abs() <= 0.15 && (theta[1] - 1.52).abs() <= 0.15, "{theta:?}");
    assert_eq!(&last[4], "7");
}

#[test]
fn full_plan_estimate_is_far_from_the_oracle() {
    let o = split("estimate", &["--plan", "full", "--theta", "1,2", "--samples", "20000", "--oracle"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let z = v["oracle"]["z"][1].as_f64().unwrap();
    assert!(z > 6.0, "bias ratio {z}");
    assert!(v["assumption"].is_string());
}

#[test]
fn plan_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    std::fs::write(&path, r#"{"selected": ["z1"], "rules": ["normal-standardise"]}"#).unwrap();
    let o = split("estimate", &["--plan", path.to_str().unwrap(), "--theta", "1,2", "--samples", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["plan"]["selected"], serde_json::json!(["z1"]));
}

#[test]
fn invariant_suite_passes_on_the_example() {
    let o = split("check", &["--theta", "0.5,-0.5", "--trials", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v = stdout_json(&o);
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().len() > 5);
}
