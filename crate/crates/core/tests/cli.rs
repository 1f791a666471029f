use std::path::Path;
use std::process::{Command, Output};

fn sbcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbcert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn audit_json(dir: &Path, extra: &[&str]) -> (i32, serde_json::Value) {
    let mut args = vec!["audit", "--trace", dir.to_str().unwrap(), "--json"];
    args.extend_from_slice(extra);
    let o = sbcert(&args);
    (o.status.code().unwrap(), serde_json::from_slice(&o.stdout).expect("audit prints JSON"))
}

#[test]
fn simulate_static_formation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sbcert(&["simulate", "--scenario", "static_formation", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["vehicles.csv", "pairs.csv", "audit.json", "config.json", "metadata.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let (code, doc) = audit_json(&out, &[]);
    assert_eq!(code, 0);
    assert!(doc["min_h"].as_f64().unwrap() >= 0.0);
    assert_eq!(doc["matches_recorded"], true);

    let header = std::fs::read_to_string(out.join("vehicles.csv")).unwrap();
    let first = header.lines().next().unwrap();
    assert!(first.starts_with("t,q0_x,q0_y,q0_z"));
    assert!(first.contains("q4_vstar_x") && first.contains("q4_thrust_ratio"));
}

#[test]
fn parameterization_lowers_tilt() {
    let dir = tempfile::tempdir().unwrap();
    let mut tilt = Vec::new();
    for ks in ["0", "100"] {
        let out = dir.path().join(ks);
        let o = sbcert(&[
            "simulate",
            "--scenario",
            "two_quad_pass",
            "--out",
            out.to_str().unwrap(),
            "--set",
            &format!("k_s={ks}"),
            "--set",
            "max_tilt=90",
            "--set",
            "max_thrust=5",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let (_, doc) = audit_json(&out, &[]);
        tilt.push((
            doc["audit"]["max_tilt_deg"].as_f64().unwrap(),
            doc["audit"]["max_thrust_ratio"].as_f64().unwrap(),
        ));
    }
    assert!(tilt[1].0 < tilt[0].0, "{tilt:?}");
    assert!(tilt[1].1 < tilt[0].1, "{tilt:?}");
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = sbcert(&["simulate", "--scenario", "static_formation", "--out", out.to_str().unwrap(), "--set", "D_s=-0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("geometry.D_s"), "{}", stderr(&o));

    let o = sbcert(&["simulate", "--scenario", "static_formation", "--out", out.to_str().unwrap(), "--set", "warp=9"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sbcert(&["simulate", "--scenario", "static_formation", "--out", out.to_str().unwrap(), "--dt", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = sbcert(&["audit", "--trace", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = sbcert(&["verify", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let o = sbcert(&[
        "simulate",
        "--scenario",
        "two_quad_pass",
        "--out",
        first.to_str().unwrap(),
        "--set",
        "duration=1.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second = dir.path().join("b");
    let config = first.join("config.json");
    let o = sbcert(&["simulate", "--scenario", config.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["vehicles.csv", "pairs.csv", "audit.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reaudit_is_idempotent_and_respects_new_limits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sbcert(&[
        "simulate",
        "--scenario",
        "two_quad_pass",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "ks=100",
        "--set",
        "duration=4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (c1, a) = audit_json(&out, &[]);
    let (c2, b) = audit_json(&out, &[]);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    assert_eq!(a["matches_recorded"], true);

    let o = sbcert(&["audit", "--trace", out.to_str().unwrap(), "--set", "max_tilt=5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tilt"), "{}", stderr(&o));
    assert!(stdout(&o).contains("audit: fail"));
}

#[test]
fn tight_limits_exhaust_retunes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sbcert(&[
        "simulate",
        "--scenario",
        "two_quad_pass",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "retune.enabled=true",
        "--set",
        "max_tilt=1",
        "--set",
        "duration=3",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("attempt ").count(), 4, "{text}");
    assert!(text.contains("infeasible_under_limits"), "{text}");
}

#[test]
fn verify_is_deterministic() {
    let a = sbcert(&["verify", "--seed", "11", "--trials", "200"]);
    let b = sbcert(&["verify", "--seed", "11", "--trials", "200"]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    assert_eq!(a.stdout, b.stdout);
    let j = sbcert(&["verify", "--seed", "11", "--trials", "50", "--json"]);
    let doc: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(doc["pass"], true);
    assert_eq!(doc["families"].as_array().unwrap().len(), 3);
}

#[test]
fn lists_builtins() {
    let o = sbcert(&["list-scenarios"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in ["static_formation", "spinning_formation", "two_quad_pass"] {
        assert!(text.contains(name));
    }
}

#[test]
fn coarse_step_reports_safety_violation() {
    // 0.1 s Euler steps are too coarse for the pass scenario.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sbcert(&["simulate", "--scenario", "two_quad_pass", "--out", out.to_str().unwrap(), "--dt", "0.1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("pair (0, 1)"), "{}", stderr(&o));
    assert!(stdout(&o).contains("safety_violation"));
    assert!(out.join("pairs.csv").is_file());
}
