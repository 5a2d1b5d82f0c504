//! End-to-end runs of the `mindriven` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mindriven(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mindriven"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env("MINDRIVEN_THREADS", "2")
        .output()
        .unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn simulate_writes_n_minus_one_events() {
    let dir = tempfile::tempdir().unwrap();
    let o = mindriven(
        &["simulate", "--kernel", "const:1", "--x0", "mono:1x1000", "--stop", "singleton", "--seed", "7"],
        dir.path(),
    );
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("trajectory_0.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["initial"]["1"], 1000);
    assert_eq!(header["seed"], 7);
    assert_eq!(header["kernel"], "const:1");
    assert_eq!(lines.count(), 999);

    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["threads"], 2);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn integrate_reports_first_switch() {
    let dir = tempfile::tempdir().unwrap();
    let o = mindriven(
        &["integrate", "--kernel", "const:1", "--x0", "e1", "--max-min-size", "1"],
        dir.path(),
    );
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("switch_times.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 1.0);
    assert!((row[1] - 1.0).abs() < 1e-6);
    // cap 1024 selects the sparse layout
    assert!(fs::read_to_string(dir.path().join("dense.csv")).unwrap().starts_with("t,ell,x\n"));
}

#[test]
fn converge_fits_negative_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = mindriven(
        &[
            "converge", "--kernel", "const:1", "--x0", "e1", "--t", "0.8", "--N", "100,1000,10000", "--replicas",
            "20", "--seed", "1", "--M", "256",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&dir.path().join("summary.json"));
    assert!(s["fitted_slope"].as_f64().unwrap() < 0.0);
    let errors = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(errors.starts_with("N,replica,sup_error\n"));
    assert_eq!(errors.lines().count(), 1 + 60);
    assert!(fs::read_to_string(dir.path().join("summary.csv")).unwrap().starts_with("N,median_error,q25,q75\n"));
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--kernel", "min-pow:1", "--x0", "1:40,3:5", "--replicas", "3", "--seed", "11"];
    assert!(mindriven(&args, a.path()).status.success());
    assert!(mindriven(&args, b.path()).status.success());
    for r in 0..3 {
        let name = format!("trajectory_{r}.jsonl");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    assert_eq!(fs::read(a.path().join("simulate.json")).unwrap(), fs::read(b.path().join("simulate.json")).unwrap());
    let c = tempfile::tempdir().unwrap();
    let mut other = args;
    other[8] = "12";
    assert!(mindriven(&other, c.path()).status.success());
    assert_ne!(fs::read(a.path().join("trajectory_0.jsonl")).unwrap(), fs::read(c.path().join("trajectory_0.jsonl")).unwrap());
}

#[test]
fn config_file_and_manifest_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"command":"integrate","kernel":"min-pow:1","x0":"e1","max_min_size":3,"M":64}"#).unwrap();
    let out = dir.path().join("a");
    let o = mindriven(&["integrate", "--config", cfg.to_str().unwrap(), "--max-min-size", "2"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["switch_times"].as_array().unwrap().len(), 2);
    assert_eq!(summary["cap"], 64);

    // the manifest's config reproduces the run
    let m = read_json(&out.join("manifest.json"));
    let rerun = dir.path().join("rerun.json");
    fs::write(&rerun, m["config"].to_string()).unwrap();
    let out2 = dir.path().join("b");
    assert!(mindriven(&["integrate", "--config", rerun.to_str().unwrap()], &out2).status.success());
    assert_eq!(
        fs::read(out.join("switch_times.csv")).unwrap(),
        fs::read(out2.join("switch_times.csv")).unwrap()
    );

    fs::write(&cfg, r#"{"kernel":"const:1","x0":"e1","horizon":1,"unexpected":2}"#).unwrap();
    let o = mindriven(&["integrate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "parse");

    fs::write(&cfg, r#"{"command":"simulate"}"#).unwrap();
    let o = mindriven(&["integrate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    let o = mindriven(&["integrate", "--kernel", "const:1", "--x0", "1:0,2:1", "--max-min-size", "1"], p);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "missing_size_one");

    let o = mindriven(&["integrate", "--kernel", "const:1", "--x0", "e1", "--max-min-size", "2", "--M", "4", "--t", "50"], p);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = mindriven(&["lifespan", "--mode", "blowup", "--kernel", "min-pow:1", "--x0", "e1", "--max-min-size", "4"], p);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"], "missing_weights");

    let o = mindriven(&["couple", "--kernel", "min-pow:1", "--x0", "1:4", "--y0", "1:2,3:1,4:1"], p);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"], "dominance_violation");

    let o = mindriven(&["simulate", "--kernel", "cubic:1", "--x0", "mono:1x5"], p);
    assert_eq!(o.status.code(), Some(2));

    let o = mindriven(&["simulate", "--no-such-flag"], p);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
}

#[test]
fn lifespan_couple_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = mindriven(&["lifespan", "--kernel", "const:1", "--n", "4,8,16,32", "--replicas", "200", "--seed", "3"], p);
    assert!(o.status.success());
    let rep = read_json(&p.join("dichotomy.json"));
    assert_eq!(rep["classification"], "divergent");
    assert_eq!(rep["et_by_n"].as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(p.join("dichotomy.csv")).unwrap().lines().count(), 5);

    let o = mindriven(&["lifespan", "--mode", "series", "--kernel", "min-pow:1", "--cutoff", "10000"], p);
    assert!(o.status.success());
    assert_eq!(read_json(&p.join("series.json"))["classification"], "summable");

    let o = mindriven(
        &["lifespan", "--mode", "blowup", "--kernel", "min-pow:1", "--x0", "e1", "--max-min-size", "10", "--weights", "power:1", "--M", "256"],
        p,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b = read_json(&p.join("blowup.json"));
    assert_eq!(b["evidence"], "t_inf_finite");
    assert_eq!(b["passed"], true);

    let o = mindriven(&["couple", "--kernel", "min-pow:1", "--x0", "1:2,3:1,4:1", "--y0", "mono:1x4", "--replicas", "50"], p);
    assert!(o.status.success());
    let c = read_json(&p.join("couple.json"));
    assert_eq!(c["ordered"], 50);

    let o = mindriven(&["validate-kernel", "--kernel", "min-logpow:1,0.5", "--cutoff", "64"], p);
    assert!(o.status.success());
    assert_eq!(read_json(&p.join("validation.json"))["violation_count"], 0);
}
