//! The `ace` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error,
//! 3 a certification criterion failed under `--fail-on-criterion`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::run_bench;
use crate::certify::run_certification;
use crate::config::RunConfig;
use crate::curve::{log_grid, write_grid_csv, CumulativeRobustnessCurve};
use crate::distribution::PerturbationBall;
use crate::error::{Error, Result};
use crate::local_risk::{local_amls, AmlsResult};
use crate::manifest::RunManifest;
use crate::mine::{mine_generator, write_jsonl};
use crate::model::GroundTruth;
use crate::pac::pac_sample_size;
use crate::rng::{Domain, SeedStream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CRITERION: i32 = 3;

/// Grid of the sampled curve written next to every certification.
const GRID_LO: f64 = 1e-20;
const GRID_POINTS: usize = 101;

#[derive(Debug, Parser)]
#[command(name = "ace", version, about = "Statistical global-robustness certification")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated t values, overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the ACE pipeline and write report, curve and manifest.
    Certify {
        #[command(flatten)]
        run: RunArgs,
        /// Exit with status 3 if any criterion is not satisfied.
        #[arg(long)]
        fail_on_criterion: bool,
    },
    /// Compare naive Monte Carlo, AMLS and ACE at equal budgets.
    Bench {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Harvest counterexamples from AMLS runs.
    Mine {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run AMLS on nominal samples and record per-level diagnostics.
    Amls {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a stored curve.
    Curve {
        curve: PathBuf,
        t_values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
        /// Also write a log-spaced (t, R(t)) grid to this CSV.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = GRID_POINTS)]
        grid_points: usize,
    },
    /// Print the sample size for an (epsilon, delta) guarantee.
    PacSize { epsilon: f64, delta: f64 },
}

enum Failure {
    Pipeline(Error),
    Criterion,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

/// Parses `args` and runs the command, writing to the given streams.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.workers {
        if k == 0 {
            let _ = writeln!(stderr, "error: --workers must be at least 1");
            return EXIT_VALIDATION;
        }
        builder = builder.num_threads(k);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    let (result, out, err) = pool.install(|| {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let result = dispatch(cli.command, &mut out, &mut err);
        (result, out, err)
    });
    let _ = stdout.write_all(&out);
    let _ = stderr.write_all(&err);
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Criterion) => EXIT_CRITERION,
        Err(Failure::Pipeline(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn out_err(e: std::io::Error) -> Error {
    io(Path::new("<stdout>"))(e)
}

fn load(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.seed = Some(seed);
    }
    if let Some(t) = &run.t {
        cfg.t_values = Some(t.clone());
    }
    Ok(cfg)
}

fn start(command: &str, run: &RunArgs, cfg: &RunConfig) -> Result<RunManifest> {
    std::fs::create_dir_all(&run.out).map_err(io(&run.out))?;
    Ok(RunManifest::start(
        command,
        Some(run.config.clone()),
        Some(cfg.seed.unwrap_or(0)),
        run.out.clone(),
    ))
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> std::result::Result<(), Failure> {
    match command {
        Command::Certify { run, fail_on_criterion } => certify(&run, fail_on_criterion, stdout),
        Command::Bench { run } => bench(&run, stdout).map_err(Failure::from),
        Command::Mine { run } => mine(&run, stdout, stderr).map_err(Failure::from),
        Command::Amls { run } => amls(&run, stdout).map_err(Failure::from),
        Command::Curve {
            curve,
            t_values,
            t,
            grid,
            grid_points,
        } => {
            let mut ts = t_values;
            ts.extend(t.unwrap_or_default());
            curve_cmd(&curve, &ts, grid.as_deref(), grid_points, stdout).map_err(Failure::from)
        }
        Command::PacSize { epsilon, delta } => {
            let n = pac_sample_size(epsilon, delta)?;
            writeln!(stdout, "{n}").map_err(out_err)?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CalibrationCounterexample<'a> {
    sample_index: usize,
    x: &'a [f64],
    margin: f64,
}

fn certify(run: &RunArgs, fail_on_criterion: bool, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let cfg = load(run)?;
    let ccfg = cfg.certification();
    ccfg.validate()?;
    let (model, generator) = (cfg.load_model()?, cfg.load_generator()?);
    let mut manifest = start("certify", run, &cfg)?;

    let mut report = run_certification(&model, &generator, &ccfg)?;
    report.curve_ref.path = Some("curve.csv".into());
    let mut cex = Vec::new();
    for (i, c) in report.calibration_counterexamples() {
        serde_json::to_writer(
            &mut cex,
            &CalibrationCounterexample {
                sample_index: i,
                x: &c.x,
                margin: c.margin,
            },
        )
        .expect("counterexample serialises");
        cex.push(b'\n');
    }
    if report.counterexamples.total > 0 {
        report.counterexamples.path = Some("counterexamples.jsonl".into());
    }

    let grid = log_grid(GRID_LO, 1.0, GRID_POINTS)?;
    let mut grid_csv = Vec::new();
    write_grid_csv(&report.curve.sample(&grid)?, &mut grid_csv)?;

    manifest.write_artifact("report.json", report.to_json().as_bytes())?;
    manifest.write_artifact("curve.csv", report.curve.to_csv_string().as_bytes())?;
    manifest.write_artifact("curve_grid.csv", &grid_csv)?;
    if report.counterexamples.total > 0 {
        manifest.write_artifact("counterexamples.jsonl", &cex)?;
    }
    manifest.finish()?;

    writeln!(
        stdout,
        "R* = {:.6} (se {:.2e}), regression r2 = {:.4}, forward passes = {}",
        report.r_star, report.r_star_std_error, report.regression.r_squared, report.budget.total
    )
    .map_err(out_err)?;
    for c in &report.criterion_results {
        writeln!(
            stdout,
            "t = {:e}: R(t) = {:.6}, 1 - R(t) = {:.6}, criterion {}",
            c.t,
            c.curve_value,
            c.thresholded_risk,
            if c.satisfied { "satisfied" } else { "NOT satisfied" }
        )
        .map_err(out_err)?;
    }
    if fail_on_criterion && report.criterion_results.iter().any(|c| !c.satisfied) {
        return Err(Failure::Criterion);
    }
    Ok(())
}

fn bench(run: &RunArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load(run)?;
    let bcfg = cfg.bench();
    bcfg.validate()?;
    let (model, generator) = (cfg.load_model()?, cfg.load_generator()?);
    let mut manifest = start("bench", run, &cfg)?;
    let table = run_bench(&model, &generator, &bcfg)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    manifest.write_artifact("bench.csv", &csv)?;
    manifest.write_artifact(
        "bench_runs.json",
        serde_json::to_string_pretty(&table.runs).expect("runs serialise").as_bytes(),
    )?;
    manifest.finish()?;
    stdout.write_all(&csv).map_err(out_err)
}

fn mine(run: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let cfg = load(run)?;
    let mcfg = cfg.mine();
    mcfg.validate()?;
    let (model, generator) = (cfg.load_model()?, cfg.load_generator()?);
    let mut manifest = start("mine", run, &cfg)?;
    let seeds = SeedStream::new(cfg.seed.unwrap_or(0));
    let records = mine_generator(&model, &generator, cfg.mine_samples(), cfg.class_selector(), &mcfg, &seeds)?;
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).map_err(out_err)?;
    manifest.write_artifact("counterexamples.jsonl", &buf)?;
    manifest.finish()?;
    if records.is_empty() {
        writeln!(stderr, "notice: no counterexamples found; wrote an empty archive").map_err(out_err)?;
    }
    writeln!(stdout, "{} counterexamples from {} nominals", records.len(), cfg.mine_samples()).map_err(out_err)
}

#[derive(Serialize)]
struct AmlsLine<'a> {
    index: usize,
    result: &'a AmlsResult,
}

fn amls(run: &RunArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load(run)?;
    let ccfg = cfg.certification();
    ccfg.amls.validate()?;
    let (model, generator) = (cfg.load_model()?, cfg.load_generator()?);
    if ccfg.metric.needs_oracle() && !generator.has_oracle() {
        return Err(Error::UnsupportedMetric {
            metric: ccfg.metric,
            reason: "the generator has no ground-truth oracle",
        });
    }
    let oracle = generator.has_oracle().then_some(&generator as &dyn GroundTruth);
    let mut manifest = start("amls", run, &cfg)?;
    let seeds = SeedStream::new(ccfg.seed);
    let results = {
        use rayon::prelude::*;
        (0..cfg.amls_samples())
            .into_par_iter()
            .map(|i| {
                let (x, _) = generator.sample_at(ccfg.class, &seeds, i as u64)?;
                let mut ball = PerturbationBall::new(x, ccfg.radius)?;
                if let Some((lo, hi)) = ccfg.domain {
                    ball = ball.with_domain(lo, hi)?;
                }
                local_amls(&model, &ball, ccfg.metric, oracle, &ccfg.amls, &mut seeds.rng(Domain::Amls, i as u64))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut buf = Vec::new();
    for (index, result) in results.iter().enumerate() {
        serde_json::to_writer(&mut buf, &AmlsLine { index, result }).expect("result serialises");
        buf.push(b'\n');
    }
    manifest.write_artifact("amls.jsonl", &buf)?;
    manifest.finish()?;
    writeln!(stdout, "index,log_risk,terminated,levels,forward_passes").map_err(out_err)?;
    for (i, r) in results.iter().enumerate() {
        writeln!(
            stdout,
            "{i},{},{},{},{}",
            r.log_risk,
            serde_json::to_value(r.terminated).expect("serialises").as_str().unwrap_or_default(),
            r.levels.len(),
            r.forward_passes
        )
        .map_err(out_err)?;
    }
    Ok(())
}

fn curve_cmd(path: &Path, ts: &[f64], grid: Option<&Path>, grid_points: usize, stdout: &mut dyn Write) -> Result<()> {
    let curve = CumulativeRobustnessCurve::load_csv(path)?;
    if ts.is_empty() && grid.is_none() {
        return Err(Error::Config("give at least one t value or --grid".into()));
    }
    let values = ts.iter().map(|&t| curve.evaluate(t)).collect::<Result<Vec<_>>>()?;
    if let Some(grid_path) = grid {
        let rows = curve.sample(&log_grid(GRID_LO, 1.0, grid_points)?)?;
        let file = std::fs::File::create(grid_path).map_err(io(grid_path))?;
        write_grid_csv(&rows, std::io::BufWriter::new(file))?;
    }
    if !ts.is_empty() {
        writeln!(stdout, "t,R_t").map_err(out_err)?;
        for (t, v) in ts.iter().zip(values) {
            writeln!(stdout, "{t:e},{v}").map_err(out_err)?;
        }
    }
    Ok(())
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("ace").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn pac_size_prints_integer() {
        assert_eq!(call(&["pac-size", "0.05", "0.05"]), (0, "738\n".into(), String::new()));
        assert_eq!(call(&["pac-size", "0.01", "0.05"]).1, "18445\n");
    }

    #[test]
    fn pac_size_rejects_zero_epsilon() {
        let (code, _, err) = call(&["pac-size", "0", "0.05"]);
        assert_eq!(code, EXIT_VALIDATION);
        assert!(err.contains("error"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_VALIDATION);
        assert_eq!(call(&["certify"]).0, EXIT_VALIDATION);
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn missing_config_is_a_validation_error() {
        let (code, _, err) = call(&["certify", "--config", "/nonexistent/run.toml"]);
        assert_eq!(code, EXIT_VALIDATION);
        assert!(err.contains("/nonexistent/run.toml"), "{err}");
    }
}
