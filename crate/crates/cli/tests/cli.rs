use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn macplane(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_macplane"));
    cmd.args(args).env_remove("MACPLANE_OUT_DIR");
    if let Some(d) = out_env {
        cmd.env("MACPLANE_OUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario_file(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.toml")).display().to_string()
}

#[test]
fn lists_every_builtin() {
    let o = macplane(&["list-scenarios"], None);
    assert!(o.status.success());
    for name in macplane::scenarios::BUILTIN {
        assert!(stdout(&o).lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn run_writes_to_env_dir_and_repeats_exactly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = scenario_file("p1a");
    let o = macplane(&["run", "--config", &cfg, "--seed", "4"], Some(a.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o2 = macplane(&["run", "--config", &cfg, "--seed", "4", "--out", b.path().to_str().unwrap()], None);
    assert!(o2.status.success());
    for f in ["p1a-baseline-s4.trace.jsonl", "p1a-baseline-s4.summary.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn variant_override_names_the_output() {
    let d = tempfile::tempdir().unwrap();
    let o = macplane(&["run", "--scenario", "p2", "--variant", "separated"], Some(d.path()));
    assert!(o.status.success());
    assert!(d.path().join("p2-separated-s1.summary.csv").exists());
}

#[test]
fn sweep_emits_one_row_per_point() {
    let d = tempfile::tempdir().unwrap();
    let o = macplane(
        &["sweep", "--scenario", "p5", "--axis", "bandwidth", "--values", "20,40", "--seeds", "1,2,3", "--out", d.path().to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.path().join("p5-baseline-sweep-bandwidth.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("bandwidth,20,1,"));
    assert!(rows[5].starts_with("bandwidth,40,3,"));
}

#[test]
fn unknown_axis_fails() {
    let d = tempfile::tempdir().unwrap();
    let o = macplane(&["sweep", "--scenario", "p5", "--axis", "color", "--values", "1", "--out", d.path().to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown sweep axis"));
}

#[test]
fn validate_accepts_a_good_config_and_its_trace() {
    let d = tempfile::tempdir().unwrap();
    let cfg = scenario_file("p2");
    assert!(macplane(&["validate", "--config", &cfg], None).status.success());
    macplane(&["run", "--config", &cfg], Some(d.path()));
    let trace = d.path().join("p2-baseline-s1.trace.jsonl");
    let o = macplane(&["validate", "--config", &cfg, "--trace", trace.to_str().unwrap()], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("all invariants hold"));
}

#[test]
fn validate_rejects_a_bad_config() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario_file("p1a")).unwrap().replace("src = \"A\"", "src = \"Z\"");
    std::fs::write(&bad, text).unwrap();
    let o = macplane(&["validate", "--config", bad.to_str().unwrap()], None);
    assert!(!o.status.success());
}

#[test]
fn show_round_trips_through_the_parser() {
    let o = macplane(&["show", "--scenario", "p6"], None);
    let parsed = macplane::ScenarioConfig::from_toml_str(&stdout(&o)).unwrap();
    assert_eq!(parsed, macplane::scenarios::builtin("p6").unwrap());
}

#[test]
fn needs_exactly_one_source() {
    assert!(!macplane(&["run"], None).status.success());
    assert!(!macplane(&["run", "--scenario", "p1a", "--config", "x.toml"], None).status.success());
}
