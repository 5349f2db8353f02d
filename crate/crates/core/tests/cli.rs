use std::fs;
use std::path::Path;

use etcsim::cli::{run_cli, EXIT_CONFIG, EXIT_OK, OUT_DIR_ENV};
use etcsim::output::{EVENTS_HEADER, LINEAR_TRACE_HEADER, NONLINEAR_TRACE_HEADER, SWEEP_HEADER};
use etcsim::scenario::{builtin, builtins};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(std::iter::once("etcsim").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn run_writes_linear_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lin");
    let (code, stdout, stderr) =
        cli(&["run", "--scenario", "paper/linear-gamma2delta", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("g = 4 bits"), "{stdout}");
    assert_eq!(header(&out.join("trace.csv")), LINEAR_TRACE_HEADER);
    assert_eq!(header(&out.join("events.csv")), EVENTS_HEADER);
    assert_eq!(rows(&out.join("trace.csv")).len(), 4000);

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["envelopes"]["total_violations"], 0);
    assert_eq!(summary["scheme"]["g_bits"], 4);
    assert!(summary["abort"].is_null());

    for e in rows(&out.join("events.csv")) {
        assert_eq!(e[4].len(), 4);
        assert!(e[4].chars().all(|c| c == '0' || c == '1'));
    }
}

#[test]
fn multi_column_builtin_writes_one_directory_per_column() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = cli(&["run", "--scenario", "paper/nonlinear-fig", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    for column in ["gamma-0.1", "gamma-0.99"] {
        let d = dir.path().join(column);
        assert_eq!(header(&d.join("trace.csv")), NONLINEAR_TRACE_HEADER);
        assert!(d.join("summary.json").exists());
    }
}

#[test]
fn seed_override_changes_the_run_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    for (name, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let (code, _, e) =
            cli(&["run", "--scenario", "paper/nonlinear-rate", "--seed", seed, "--out", p(name).to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{e}");
    }
    let read = |n: &str| fs::read(p(n).join("trace.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn printed_builtin_runs_as_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let (code, toml, _) = cli(&["paper-scenario", "paper/linear-gamma5delta"]);
    assert_eq!(code, EXIT_OK);
    let file = dir.path().join("s.toml");
    fs::write(&file, toml).unwrap();
    let (code, stdout, e) =
        cli(&["run", "--scenario", file.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{e}");
    assert!(stdout.contains("g = 6 bits"), "{stdout}");
}

#[test]
fn listing_shows_every_builtin() {
    let (code, stdout, _) = cli(&["paper-scenario"]);
    assert_eq!(code, EXIT_OK);
    for b in builtins() {
        assert!(stdout.contains(b.name), "{} missing from\n{stdout}", b.name);
    }
}

#[test]
fn unknown_builtin_lists_the_available_names() {
    let (code, _, stderr) = cli(&["run", "--scenario", "paper/no-such-thing"]);
    assert_eq!(code, EXIT_CONFIG);
    for b in builtins() {
        assert!(stderr.contains(b.name), "{stderr}");
    }
}

#[test]
fn infeasible_configuration_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut sc) = builtin("paper/nonlinear-rate").unwrap().remove(0);
    sc.channel.gamma_s = 0.005;
    let file = dir.path().join("bad.toml");
    fs::write(&file, sc.to_toml().unwrap()).unwrap();
    let (code, _, stderr) = cli(&["run", "--scenario", file.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG, "{stderr}");
}

#[test]
fn malformed_scenario_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    fs::write(&file, "name = \"x\"\nunknown_key = 1\n").unwrap();
    let (code, _, _) = cli(&["run", "--scenario", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, _, _) = cli(&["frobnicate"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn sweep_writes_schema_and_skips_infeasible_points() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, e) = cli(&[
        "sweep",
        "--scenario",
        "paper/nonlinear-rate",
        "--gammas",
        "0.0:0.5:3",
        "--seeds",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{e}");
    assert!(stdout.contains("skipped"), "{stdout}");
    let csv = dir.path().join("sweep.csv");
    assert_eq!(header(&csv), SWEEP_HEADER);
    let r = rows(&csv);
    assert_eq!(r.len(), 2);
    assert_eq!(&r[0][0], "0.25");
    assert_eq!(&r[1][0], "0.5");
    assert!(r.iter().all(|row| &row[5] == "0"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
    assert_eq!(json[0]["status"], "skipped");
}

#[test]
fn sweep_rejects_multi_column_scenario() {
    let (code, _, stderr) = cli(&["sweep", "--scenario", "paper/nonlinear-fig", "--gammas", "0.1:0.2:2"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(stderr.contains("column"), "{stderr}");
}

#[test]
fn default_output_directory_follows_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    // Only this test touches the variable.
    unsafe { std::env::set_var(OUT_DIR_ENV, dir.path()) };
    let (code, _, e) = cli(&["run", "--scenario", "paper/nonlinear-fig/gamma-0.1"]);
    unsafe { std::env::remove_var(OUT_DIR_ENV) };
    assert_eq!(code, EXIT_OK, "{e}");
    assert!(dir.path().join("nonlinear-fig-gamma-0.1").join("trace.csv").exists());
}

#[test]
fn validate_subcommand_reports_pass_lines() {
    let (code, stdout, _) = cli(&["validate", "--runs", "2", "--seed", "3"]);
    assert_eq!(code, EXIT_OK, "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
}
