use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn network(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/networks")
        .join(format!("{name}.rn"))
}

fn ergograph(args: &[&str], net: &str) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ergograph"));
    cmd.arg(args[0]).arg(network(net)).args(&args[1..]);
    cmd.env_remove("ERGOGRAPH_THREADS");
    cmd.output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report")
}

#[test]
fn counterexample_fails_the_structural_check() {
    let out = ergograph(&["check"], "counterexample");
    assert_eq!(out.status.code(), Some(2));
    let report = json(&out);
    assert_eq!(report["results"]["reason"], "no single-species inflow/outflow");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no single-species inflow/outflow"));
}

#[test]
fn open_network_is_balanced_at_unit_c() {
    let out = ergograph(&["balance", "--c", "1,1"], "open_cxb");
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["results"]["residual"], 0.0);
    assert_eq!(report["results"]["balanced"], true);
}

#[test]
fn key_example_certifies_with_automatic_exponent() {
    let out = ergograph(&["certify", "--box", "40,40"], "key_example");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let results = &json(&out)["results"];
    let c = results["C"].as_f64().unwrap();
    assert!(c > 0.0 && c <= results["numeric_gap"].as_f64().unwrap());
    assert_eq!(results["consistency"]["holds"], true);
}

#[test]
fn unit_exponent_on_key_example_is_reported_as_unmet() {
    // The terminal-pair sum has a slowly decaying tail at alpha = 1, so the
    // increments over boxes up to [40,40] stay above tolerance.
    let out = ergograph(&["certify", "--alpha", "1", "--box", "40,40"], "key_example");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["results"]["certified"], false);
}

#[test]
fn certify_reports_keep_c_below_the_numeric_gap() {
    for (net, upper) in [("birth_death", "100"), ("open_cxb", "30,30")] {
        let out = ergograph(&["certify", "--box", upper], net);
        assert_eq!(out.status.code(), Some(0), "{net}");
        let results = &json(&out)["results"];
        assert!(results["C"].as_f64().unwrap() <= results["numeric_gap"].as_f64().unwrap());
    }
}

#[test]
fn gap_report_has_the_documented_keys() {
    let out = ergograph(&["gap", "--box", "12,12", "--set", "9,0;10,1"], "counterexample");
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    let results = report["results"].as_object().unwrap();
    let keys: Vec<&str> = results.keys().map(String::as_str).collect();
    assert_eq!(keys, ["certificate", "gap", "witnesses"]);
    assert!(results["certificate"].is_null());
    let gap = results["gap"]["value"].as_f64().unwrap();
    for w in results["witnesses"].as_array().unwrap() {
        assert!(gap <= w["quotient"].as_f64().unwrap() + 1e-8);
    }
}

#[test]
fn tabular_outputs_have_fixed_headers() {
    let out = ergograph(&["mixing", "--box", "30", "--x0", "10", "--format", "csv"], "birth_death");
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("t,tv,bound\n"));

    let out = ergograph(&["stationary", "--box", "3,3", "--format", "csv"], "key_example");
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.starts_with("x1,x2,prob\n"));
    assert_eq!(text.lines().count(), 17);

    let out = ergograph(&["parse", "--format", "csv"], "key_example");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let args = ["congestion", "--box", "8,8"];
    let a = ergograph(&args, "key_example");
    let b = ergograph(&args, "key_example");
    assert_eq!(a.stdout, b.stdout);
    let single = Command::new(env!("CARGO_BIN_EXE_ergograph"))
        .arg("congestion")
        .arg(network("key_example"))
        .args(["--box", "8,8"])
        .env("ERGOGRAPH_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.stdout, single.stdout);
}

#[test]
fn simulation_is_reproducible_from_its_seed() {
    let args = ["simulate", "--t", "200", "--seed", "5", "--x0", "0,0", "--box", "20,20"];
    let a = ergograph(&args, "autocatalytic");
    let b = ergograph(&args, "autocatalytic");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    // Not complex balanced, so there is no product form to compare against.
    assert!(!json(&a)["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn bad_arguments_are_hard_errors() {
    let out = ergograph(&["mixing", "--box", "10", "--eps", "0.7"], "birth_death");
    assert_eq!(out.status.code(), Some(1));
    let out = ergograph(&["stationary", "--box", "0"], "birth_death");
    assert_eq!(out.status.code(), Some(1));
    let out = ergograph(&["parse"], "missing");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn digest_tracks_inputs() {
    let a = json(&ergograph(&["stationary", "--box", "5"], "birth_death"));
    let b = json(&ergograph(&["stationary", "--box", "6"], "birth_death"));
    assert_ne!(a["inputs_digest"], b["inputs_digest"]);
    assert_eq!(a["inputs_digest"].as_str().unwrap().len(), 64);
}
