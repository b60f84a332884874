use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fundspan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn preset_text(dir: &Path, name: &str) -> String {
    let out = dir.join("presets");
    assert!(run(&["presets", "--out", out.to_str().unwrap()]).status.success());
    std::fs::read_to_string(out.join(format!("{name}.toml"))).unwrap()
}

fn write_scenario(dir: &Path, file: &str, body: &str) -> PathBuf {
    let p = dir.join(file);
    std::fs::write(&p, body).unwrap();
    p
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn validate_accepts_merton_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = run(&["validate", "--preset", "merton_log", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let m = manifest(&out);
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(listed, ["scenario.toml", "validation.json", "validation.txt"]);
    for f in listed {
        assert!(out.join(f).exists());
    }
}

#[test]
fn validate_names_volatility_block_when_singular() {
    let tmp = tempfile::tempdir().unwrap();
    let body = preset_text(tmp.path(), "merton_log").replace("    0.25,\n", "    0.0,\n");
    let p = write_scenario(tmp.path(), "singular.toml", &body);
    let out = tmp.path().join("o");
    let o = run(&["validate", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("volatility"), "{t}");
    let line = body.lines().position(|l| l == "[market.volatility]").unwrap() + 1;
    assert!(t.contains(&format!("line {line}")), "{t}");
}

#[test]
fn validate_cites_nonnegative_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let body = preset_text(tmp.path(), "merton_log").replace("value = 0.02", "value = -0.01");
    let p = write_scenario(tmp.path(), "neg.toml", &body);
    let out = tmp.path().join("o");
    let o = run(&["validate", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("r >= 0"), "{}", text(&o));
    assert!(manifest(&out)["status"].as_str().unwrap().starts_with("failed"));
}

#[test]
fn unknown_key_fails_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let body = preset_text(tmp.path(), "merton_log").replace("[mc]\n", "[mc]\nwarp = 9\n");
    let p = write_scenario(tmp.path(), "bad.toml", &body);
    let o = run(&["validate", "--scenario", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = body.lines().position(|l| l.starts_with("warp")).unwrap() + 1;
    assert!(text(&o).contains(&format!("line {line}")), "{}", text(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["solve"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--preset", "merton_log", "--grid", "41,21"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--preset", "merton_log", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--preset", "no_such"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn solve_merton_log_recovers_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&["solve", "--preset", "merton_log", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
    assert_eq!(s["mu"], 1);
    assert!(s["fund_report"]["max_span_residual"].as_f64().unwrap() <= 1e-8);
    assert!(s["oracle"]["max_policy_relative_error"].as_f64().unwrap() <= 1e-8);
    let header = std::fs::read_to_string(out.join("policy.csv")).unwrap();
    assert!(header.starts_with("slice,t,x,u_0,u_1,H_1,kappa,case\n"));
}

#[test]
fn solve_index_factor_uses_two_funds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&["solve", "--preset", "index_factor", "--out", out.to_str().unwrap(), "--format", "binary"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("funds used (mu)           2"), "{}", text(&o));
    for f in ["value.bin", "policy.bin", "funds.bin"] {
        assert!(out.join(f).exists());
    }
}

#[test]
fn solve_constant_utility_gives_zero_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&["solve", "--preset", "constant_utility", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
    assert_eq!(s["zero_policy"], true);
}

#[test]
fn solve_surfaces_required_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&["solve", "--preset", "merton_log", "--grid", "41,1,1,3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("need at least"), "{}", text(&o));
}

#[test]
fn report_merton_log_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&[
        "report", "--preset", "merton_log", "--paths", "100000", "--steps", "50", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("|V_policy - V_oracle| <= eps_budget: PASS"), "{report}");
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let off_span: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0].contains("offspan")).collect();
    assert!(off_span.len() >= 5);
    assert!(off_span.iter().all(|r| r[3].parse::<f64>().unwrap() < 0.0));
    // U(X0) = ln 1 = 0 for the bond-only strategy.
    let zero = rows.iter().find(|r| r[0] == "zero").unwrap();
    assert_eq!(zero[1].parse::<f64>().unwrap(), 0.0);
    let m = manifest(&out);
    assert_eq!(m["outputs"].as_array().unwrap().last().unwrap(), "report.json");
}

#[test]
fn csv_outputs_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["solve", "--preset", "index_factor", "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
        let o = run(&[
            "simulate", "--preset", "index_factor", "--paths", "50", "--steps", "20", "--seed", "7", "--out",
            d.join("sim").to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o));
    }
    // scenario.toml records the differing output directories.
    for f in ["value.csv", "policy.csv", "funds.csv", "sim/paths.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluate_oracle_and_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    for strategy in ["oracle", "zero", "fund", "policy"] {
        let o = run(&[
            "evaluate", "--preset", "merton_power", "--strategy", strategy, "--paths", "2000", "--steps", "20",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{strategy}: {}", text(&o));
    }
    let e: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(e["strategy"], "grid_policy");
    assert_eq!(e["path_count"], 2000);
}

#[test]
fn seed_flag_overrides_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let o = run(&[
        "evaluate", "--preset", "merton_log", "--strategy", "oracle", "--paths", "100", "--steps", "5", "--seed",
        "99", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(manifest(&out)["seed"], 99);
    assert!(std::fs::read_to_string(out.join("scenario.toml")).unwrap().contains("seed = 99"));
}
