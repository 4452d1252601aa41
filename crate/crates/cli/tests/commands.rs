use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_lcsfla");

fn lcsfla(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn small_plan(dir: &Path, strategies: &str, rounds: u64, out: &str) -> String {
    let path = dir.join("plan.toml");
    fs::write(
        &path,
        format!(
            "seeds = [1]\nstrategies = {strategies}\noutput_dir = \"{out}\"\ntargets = [0.01, 1.0]\n[sim]\nrounds = {rounds}\nfeatures = 4\ntest_per_cat = 20\n[sim.hyper]\nm = 10\nn = 3\n"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn empty_strategy_list_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let plan = small_plan(d.path(), "[]", 2, "out");
    let o = lcsfla(&["run", &plan]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strategies"));
}

#[test]
fn malformed_plan_names_line_and_key() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("plan.toml");
    fs::write(&path, "seeds = [0]\n[sim]\nbogus = 1\n").unwrap();
    let o = lcsfla(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("blocker"), "x").unwrap();
    let plan = small_plan(d.path(), "[\"random\"]", 1, "blocker/out");
    assert_eq!(lcsfla(&["run", &plan]).status.code(), Some(2));
}

#[test]
fn one_cell_two_rounds() {
    let d = tempfile::tempdir().unwrap();
    let plan = small_plan(d.path(), "[\"lcsfla\"]", 2, "out");
    assert_eq!(lcsfla(&["run", &plan]).status.code(), Some(0));
    let csvs: Vec<_> = fs::read_dir(d.path().join("out"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    let text = fs::read_to_string(csvs[0].path()).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let a = small_plan(d.path(), "[\"lcsfla\", \"random\"]", 3, "a");
    assert!(lcsfla(&["--threads", "1", "run", &a]).status.success());
    let b = small_plan(d.path(), "[\"lcsfla\", \"random\"]", 3, "b");
    assert!(lcsfla(&["--threads", "3", "run", &b]).status.success());
    for f in ["lcsfla_seed1.csv", "random_seed1.csv"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_conventions() {
    let d = tempfile::tempdir().unwrap();
    let plan = small_plan(d.path(), "[\"random\"]", 2, "out");
    assert!(lcsfla(&["run", &plan]).status.success());
    let out = d.path().join("out");
    let csv = fs::read_to_string(out.join("random_seed1.csv")).unwrap();
    let total: f64 = csv.lines().last().unwrap().split(',').nth(6).unwrap().parse().unwrap();
    let o = lcsfla(&["report", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let row = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[2], "1", "{text}");
    assert_eq!(cols[4], format!("NaN({total:.4})"), "{text}");
}

fn solve(body: &str, extra: &[&str]) -> (Option<i32>, Value) {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("p.csv");
    fs::write(&p, body).unwrap();
    let mut args = vec!["solve", p.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = lcsfla(&args);
    (o.status.code(), serde_json::from_slice(&o.stdout).unwrap())
}

#[test]
fn single_client_matches_enumeration() {
    let (c, e1, e2, s, b) = (35.0, 0.9, 3e-6, 2e6, 1e7);
    let (code, v) = solve(&format!("# n=1\n# l_max=4\nc_check,e1,e2\n{c},{e1},{e2}\n"), &["--oracle"]);
    assert_eq!(code, Some(0));
    let chi = b * (2f64.powf(s / b) - 1.0);
    let best = (0..=4)
        .map(|l| if l == 0 { 0.0 } else { c * l as f64 - e1 * (l as f64).powi(3) - e2 * chi })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((v["welfare"].as_f64().unwrap() - best).abs() <= 1e-6, "{v}");
    assert_eq!(v["oracle"]["matches"], Value::Bool(true));
}

#[test]
fn too_many_winners_is_a_structured_error() {
    let (code, v) = solve("# n=3\nc_check,e1,e2\n1,0,1e-6\n2,0,1e-6\n", &[]);
    assert_eq!(code, Some(1));
    assert_eq!(v["error"]["kind"], "validation");
}

#[test]
fn audit_exit_codes() {
    let o = lcsfla(&["audit", "--scenarios", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ir"]["scenarios"], 0);
    assert_eq!(v["passed"], true);

    let o = lcsfla(&["audit", "--scenarios", "20", "--rule", "pay-as-bid"]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["ic"]["ic_violations"].as_u64().unwrap() > 0);
}

#[test]
fn scenario_dump_is_stable() {
    let d = tempfile::tempdir().unwrap();
    let plan = small_plan(d.path(), "[\"random\"]", 1, "out");
    let a = lcsfla(&["scenario", "dump", &plan, "--seed", "4"]);
    let b = lcsfla(&["--threads", "2", "scenario", "dump", &plan, "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["clients"].as_array().unwrap().len(), 10);
}

#[test]
fn shipped_plan_lists_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans/default.toml");
    let text = fs::read_to_string(path).unwrap();
    let plan = lcsfla_cli::plan::ExperimentPlan::parse(&text, "default.toml").unwrap();
    assert_eq!(plan, lcsfla_cli::plan::ExperimentPlan::default());
}
