use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sepwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepwalk"))
        .args(args)
        .output()
        .expect("run sepwalk")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn renewal_suite_is_exact_on_budget_two() {
    let v = json(&sepwalk(&["verify", "--suite", "renewal", "--preset", "bb_symmetric_L2", "--n-max", "4"]));
    assert_eq!(v["passed"], true);
    assert_eq!(v["arithmetic"], "exact");
    for r in v["reports"].as_array().unwrap() {
        assert_eq!(r["max_residual"], 0.0);
        assert_eq!(r["exact_zero"], true);
    }
}

#[test]
fn unit_budget_constants_are_points() {
    let v = json(&sepwalk(&["solve-constants", "--preset", "unit_budget"]));
    assert_eq!(v["q"], serde_json::json!([0.5, 0.5]));
    assert_eq!(v["mu"], serde_json::json!([1.0, 1.0]));
    assert_eq!(v["psi0"], serde_json::json!([1.0, 1.0]));
}

#[test]
fn improper_pmf_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "dimension = 1\njumps = [{ vector = [1], prob = \"1/2\" }, { vector = [-1], prob = \"2/5\" }]\nvirgin_pmf = [{ value = 2, prob = \"1\" }]\n",
    )
    .unwrap();
    let out = sepwalk(&["solve-constants", "--config", path_str(&p)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("jumps"), "stderr: {err}");
}

#[test]
fn sampling_without_seed_is_a_config_error() {
    let out = sepwalk(&["mc", "--preset", "unit_budget", "--n-max", "2", "--reps", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn excluded_case_is_refused() {
    let out = sepwalk(&["verify", "--suite", "renewal", "--config", &config("case_d_no_return.toml")]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unbounded_paths_need_exhaustive_tables() {
    let out = sepwalk(&["verify", "--suite", "representation", "--config", &config("stay_positive.toml")]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn verify_from_saved_tables_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("bb.json");
    let out = sepwalk(&[
        "enumerate",
        "--preset",
        "bb_symmetric_L2",
        "--n-max",
        "4",
        "--joint-n-max",
        "4",
        "--out",
        path_str(&tables),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tables.with_extension("joint.jsonl").exists());
    for suite in ["renewal", "representation", "corollary"] {
        let direct = json(&sepwalk(&["verify", "--suite", suite, "--preset", "bb_symmetric_L2", "--n-max", "4"]));
        let saved = json(&sepwalk(&[
            "verify",
            "--suite",
            suite,
            "--preset",
            "bb_symmetric_L2",
            "--n-max",
            "4",
            "--tables",
            path_str(&tables),
        ]));
        assert_eq!(direct["reports"], saved["reports"], "suite {suite}");
    }
}

#[test]
fn mc_writes_scan_csv() {
    let out = sepwalk(&["mc", "--preset", "bb_symmetric_L2", "--n-max", "3", "--reps", "2000", "--seed", "9"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,estimate,stderr,exact,ratio,target_lo,target_hi"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn core_emits_one_realization_per_line() {
    let out = sepwalk(&["core", "--preset", "bb_symmetric_L2", "--reps", "3", "--blocks", "4", "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r["nu_bar"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn runs_are_reproducible() {
    let args = ["core", "--preset", "bb_symmetric_L2", "--reps", "5", "--blocks", "6", "--seed", "77"];
    assert_eq!(sepwalk(&args).stdout, sepwalk(&args).stdout);
}

#[test]
fn suites_pass_on_admissible_models() {
    let exhaustive = [
        vec!["--preset", "bb_symmetric_L2"],
        vec!["--preset", "unit_budget"],
        vec!["--preset", "iid_budget_12"],
        vec!["--config", "case_a_drift.toml"],
        vec!["--config", "case_c_symmetric.toml"],
    ];
    let truncated = [vec!["--preset", "stay_positive_drift_p(1/3)"], vec!["--config", "case_b_planar.toml"]];
    let resolve = |m: &[&str]| -> Vec<String> {
        if m[0] == "--config" {
            vec![m[0].to_string(), config(m[1])]
        } else {
            m.iter().map(|s| s.to_string()).collect()
        }
    };
    let run = |suite: &str, model: &[&str]| {
        let mut args: Vec<String> = ["verify", "--suite", suite, "--n-max", "3", "--seed", "4", "--reps", "20"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        args.extend(resolve(model));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = sepwalk(&refs);
        assert!(out.status.success(), "{suite} {model:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    for model in &exhaustive {
        for suite in ["renewal", "factorization", "representation", "corollary", "blocks", "regeneration"] {
            run(suite, model);
        }
    }
    for model in &truncated {
        for suite in ["renewal", "regeneration"] {
            run(suite, model);
        }
    }
}
