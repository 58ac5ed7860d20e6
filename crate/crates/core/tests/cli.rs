use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ace_cert::bench::BenchTable;
use ace_cert::certify::CertificationReport;
use ace_cert::curve::{read_grid_csv, CumulativeRobustnessCurve};
use ace_cert::manifest::RunManifest;
use ace_cert::mine::load_jsonl;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let a = assets();
    let text = format!(
        "model = {:?}\ngenerator = {:?}\n{body}",
        a.join("toy_mlp.json").display().to_string(),
        a.join("generator.json").display().to_string()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn ace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ace")).args(args).output().unwrap()
}

fn ace_run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ace(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMOKE: &str = "seed = 0\nn = 20\nm = 50\nn0 = 5\nradius = 0.3\namls_particles = 100\n";

#[test]
fn certify_smoke_run_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = ace_run("certify", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "curve.csv", "curve_grid.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let report = CertificationReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let curve = CumulativeRobustnessCurve::load_csv(out.join("curve.csv")).unwrap();
    assert_eq!(curve.len(), 20);
    assert_eq!(report.curve_ref.entries, 20);
    assert_eq!(report.curve_ref.fingerprint, report.config.fingerprint());
    assert_eq!(report.curve_ref.path.as_deref(), Some("curve.csv"));
    let grid = read_grid_csv(std::fs::File::open(out.join("curve_grid.csv")).unwrap(), Path::new("grid")).unwrap();
    assert_eq!(grid.len(), 101);

    let manifest = RunManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "certify");
    assert_eq!(manifest.master_seed, Some(0));
    assert!(manifest.verify().unwrap().is_empty());
    let listed: Vec<&str> = manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert!(listed.contains(&"curve.csv") && listed.contains(&"report.json"));
}

#[test]
fn certify_twice_gives_identical_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOKE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(ace_run("certify", &cfg, &a, &[]).status.success());
    assert!(ace_run("certify", &cfg, &b, &[]).status.success());
    assert_eq!(std::fs::read(a.join("curve.csv")).unwrap(), std::fs::read(b.join("curve.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());

    let c = dir.path().join("c");
    assert!(ace_run("certify", &cfg, &c, &["--seed", "9"]).status.success());
    assert_ne!(std::fs::read(a.join("curve.csv")).unwrap(), std::fs::read(c.join("curve.csv")).unwrap());
}

#[test]
fn certify_rejects_n0_above_n_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n = 10\nn0 = 20\n");
    let out = dir.path().join("out");
    let o = ace_run("certify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("N0 (20) must not exceed N (10)"), "{err}");
    assert!(!out.exists());
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n = 10\nradius = \"wide\"\n");
    let o = ace_run("certify", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn fail_on_criterion_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = ace_run("certify", &cfg, &out, &["--t", "1e-10", "--fail-on-criterion"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("NOT satisfied"));
    assert!(out.join("curve.csv").exists());
    assert!(ace_run("certify", &cfg, &out, &["--t", "1e-10"]).status.success());
}

#[test]
fn curve_command_evaluates_stored_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    assert!(ace_run("certify", &cfg, &out, &[]).status.success());
    let curve = out.join("curve.csv");
    let c = curve.to_str().unwrap();

    let o = ace(&["curve", c, "1e-12", "1e-6", "1e-3", "0.5", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert!(values[4] >= 0.5 && values[4] <= 1.0);
    assert_eq!(stdout(&ace(&["curve", c, "1e-12", "1e-6", "1e-3", "0.5", "1"])), text);
    assert_eq!(stdout(&ace(&["curve", c, "--t", "1e-12,1e-6,1e-3,0.5,1"])), text);

    let grid = dir.path().join("grid.csv");
    assert!(ace(&["curve", c, "--grid", grid.to_str().unwrap(), "--grid-points", "21"]).status.success());
    let rows = read_grid_csv(std::fs::File::open(&grid).unwrap(), &grid).unwrap();
    assert_eq!(rows.len(), 21);

    for bad in ["0", "1.5"] {
        assert_eq!(ace(&["curve", c, bad]).status.code(), Some(1), "t = {bad}");
    }
    assert_eq!(ace(&["curve", "/nonexistent.csv", "0.1"]).status.code(), Some(1));
}

#[test]
fn pac_size_command() {
    assert_eq!(stdout(&ace(&["pac-size", "0.05", "0.05"])), "738\n");
    assert_eq!(stdout(&ace(&["pac-size", "0.01", "0.05"])), "18445\n");
    assert_eq!(ace(&["pac-size", "0", "0.05"]).status.code(), Some(1));
    assert_eq!(ace(&["pac-size", "0.05"]).status.code(), Some(1));
}

#[test]
fn bench_single_method_single_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "radius = 0.3\nmethods = [\"ace\"]\nrepetitions = 1\nbudget = 60000\nace_n0 = 5\nace_m = 50\nt_values = [1e-2]\n",
    );
    let out = dir.path().join("out");
    let o = ace_run("bench", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "method,N,N0,runtime_s,mean_1e-2,sd_1e-2");
    assert!(lines[1].starts_with("ace,") && lines[1].ends_with(','), "{}", lines[1]);
    let table = BenchTable::read_csv(text.as_bytes(), Path::new("bench.csv")).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.rows[0].cells[0].sd_pct.is_none());
}

#[test]
fn mine_writes_valid_archive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "seed = 1\nradius = 0.4\nmine_samples = 6\nper_nominal = 2\n");
    let out = dir.path().join("out");
    let o = ace_run("mine", &cfg, &out, &[]);
    assert!(o.status.success());
    let records = load_jsonl(out.join("counterexamples.jsonl")).unwrap();
    assert!(!records.is_empty() && records.len() <= 12);
    assert!(records.iter().all(|r| r.margin >= 0.0 && r.radius == 0.4));
}

#[test]
fn mine_with_nothing_to_find_succeeds_with_notice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "radius = 0.001\nmine_samples = 3\namls_max_levels = 4\n");
    let out = dir.path().join("out");
    let o = ace_run("mine", &cfg, &out, &[]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no counterexamples"));
    assert_eq!(std::fs::read_to_string(out.join("counterexamples.jsonl")).unwrap(), "");
}

#[test]
fn amls_command_records_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "radius = 0.4\namls_samples = 3\n");
    let out = dir.path().join("out");
    let o = ace_run("amls", &cfg, &out, &["--workers", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);
    let text = std::fs::read_to_string(out.join("amls.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let levels = v["result"]["diagnostics"].as_array().unwrap();
        assert!(!levels.is_empty());
        assert!(levels[0].get("proposal_width").is_some());
    }
}

#[test]
fn unsupported_metric_without_oracle_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = assets();
    let gen: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("generator.json")).unwrap()).unwrap();
    let mut gen = gen;
    gen.as_object_mut().unwrap().remove("oracle");
    let gen_path = dir.path().join("gen.json");
    std::fs::write(&gen_path, gen.to_string()).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "model = {:?}\ngenerator = \"gen.json\"\nmetric = \"m1\"\nn = 10\nn0 = 5\n",
            a.join("toy_mlp.json").display().to_string()
        ),
    )
    .unwrap();
    let o = ace_run("certify", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
