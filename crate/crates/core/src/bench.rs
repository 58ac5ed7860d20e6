//! Naive Monte Carlo, splitting-only and ACE at equal forward-pass budgets.
//!
//! Each method builds a cumulative robustness curve from as many nominal
//! samples as its budget allows. Repetition `k` of every method draws its
//! nominals from the same seed stream, so methods see the same inputs.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{calibrate, curve_entry, process_samples, Context};
use crate::curve::{CumulativeRobustnessCurve, CurveEntry, EntryMethod};
use crate::distribution::{ClassSelector, GeneratorSpec};
use crate::error::{Error, Result};
use crate::local_risk::{naive_mc_local_risk, AmlsConfig};
use crate::model::{Classifier, RobustnessMetric};
use crate::rng::{Domain, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    NaiveMc,
    Amls,
    Ace,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::NaiveMc => "naive_mc",
            BenchMethod::Amls => "amls",
            BenchMethod::Ace => "ace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    pub repetitions: usize,
    /// Forward passes per method and repetition.
    pub budget: u64,
    /// Per-method overrides of `budget`.
    pub naive_budget: Option<u64>,
    pub amls_budget: Option<u64>,
    pub ace_budget: Option<u64>,
    /// Ball draws per nominal for naive Monte Carlo.
    pub naive_m: usize,
    /// Perturbations per nominal for the ACE margin statistics.
    pub ace_m: usize,
    pub ace_n0: usize,
    pub t_values: Vec<f64>,
    pub radius: f64,
    pub metric: RobustnessMetric,
    pub amls: AmlsConfig,
    pub include_censored: bool,
    pub seed: u64,
    pub class: ClassSelector,
    pub domain: Option<(f64, f64)>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![BenchMethod::NaiveMc, BenchMethod::Amls, BenchMethod::Ace],
            repetitions: 30,
            budget: 1_000_000,
            naive_budget: None,
            amls_budget: None,
            ace_budget: None,
            naive_m: 100_000,
            ace_m: 200,
            ace_n0: 40,
            t_values: vec![1e-2, 1e-6],
            radius: 0.3,
            metric: RobustnessMetric::M2,
            amls: AmlsConfig::default(),
            include_censored: false,
            seed: 0,
            class: ClassSelector::All,
            domain: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("bench needs at least one method".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("bench needs at least one repetition".into()));
        }
        if self.naive_m == 0 || self.ace_m < 2 {
            return Err(Error::Config("naive_m must be at least 1 and ace_m at least 2".into()));
        }
        if self.ace_n0 < 3 {
            return Err(Error::InsufficientData(format!(
                "ace_n0 = {}; the regression needs at least 3 calibration samples",
                self.ace_n0
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if let Some(t) = self.t_values.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!("t values must be in (0, 1], got {t}")));
        }
        self.amls.validate()
    }

    pub fn budget_for(&self, method: BenchMethod) -> u64 {
        match method {
            BenchMethod::NaiveMc => self.naive_budget,
            BenchMethod::Amls => self.amls_budget,
            BenchMethod::Ace => self.ace_budget,
        }
        .unwrap_or(self.budget)
    }
}

/// One method run in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: BenchMethod,
    pub repetition: usize,
    /// Nominal samples in the curve.
    pub n: usize,
    /// Samples estimated by splitting.
    pub n0: usize,
    pub forward_passes: u64,
    pub runtime_s: f64,
    pub values: Vec<f64>,
    pub degenerate: Vec<bool>,
    #[serde(skip)]
    pub curve: CumulativeRobustnessCurve,
}

fn context<'a, C: Classifier + ?Sized>(
    model: &'a C,
    generator: &'a GeneratorSpec,
    cfg: &BenchConfig,
    repetition: usize,
) -> Context<'a, C> {
    Context {
        model,
        generator,
        seeds: SeedStream::new(cfg.seed).child(repetition as u64),
        radius: cfg.radius,
        metric: cfg.metric,
        class: cfg.class,
        domain: cfg.domain,
    }
}

fn reference_pass(metric: RobustnessMetric) -> u64 {
    u64::from(metric == RobustnessMetric::M2)
}

/// Runs one method for one repetition.
pub fn run_method<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    cfg: &BenchConfig,
    method: BenchMethod,
    repetition: usize,
) -> Result<MethodRun> {
    let ctx = context(model, generator, cfg, repetition);
    ctx.check_metric()?;
    let budget = cfg.budget_for(method);
    let start = Instant::now();
    let (entries, n0, passes) = match method {
        BenchMethod::NaiveMc => naive_entries(&ctx, cfg, budget)?,
        BenchMethod::Amls => amls_entries(&ctx, cfg, budget)?,
        BenchMethod::Ace => ace_entries(&ctx, cfg, budget)?,
    };
    let runtime_s = start.elapsed().as_secs_f64();
    let curve = CumulativeRobustnessCurve {
        entries,
        metric: Some(cfg.metric),
        radius: Some(cfg.radius),
        fingerprint: None,
    };
    let values = cfg.t_values.iter().map(|&t| curve.evaluate(t)).collect::<Result<Vec<_>>>()?;
    let degenerate = cfg.t_values.iter().map(|&t| curve.is_degenerate(t)).collect::<Result<Vec<_>>>()?;
    Ok(MethodRun {
        method,
        repetition,
        n: curve.len(),
        n0,
        forward_passes: passes,
        runtime_s,
        values,
        degenerate,
        curve,
    })
}

fn naive_entries<C: Classifier + ?Sized>(
    ctx: &Context<'_, C>,
    cfg: &BenchConfig,
    budget: u64,
) -> Result<(Vec<CurveEntry>, usize, u64)> {
    let cost = cfg.naive_m as u64 + reference_pass(cfg.metric);
    let n = (budget / cost).max(1) as usize;
    let entries = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, _) = ctx.nominal(i)?;
            let ball = ctx.ball(x)?;
            let mut rng = ctx.seeds.rng(Domain::Ball, i as u64);
            let est = naive_mc_local_risk(ctx.model, &ball, ctx.metric, ctx.oracle(), cfg.naive_m, &mut rng)?;
            Ok(CurveEntry::point(est.value, EntryMethod::NaiveMc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((entries, 0, n as u64 * cost))
}

/// Splitting on consecutive nominals until the budget is spent. Work is
/// dispatched in fixed-size chunks and every finished run is kept, so the
/// sample count and the pass count do not depend on the number of workers.
fn amls_entries<C: Classifier + ?Sized>(
    ctx: &Context<'_, C>,
    cfg: &BenchConfig,
    budget: u64,
) -> Result<(Vec<CurveEntry>, usize, u64)> {
    const CHUNK: usize = 4;
    let mut entries = Vec::new();
    let mut spent = 0u64;
    let mut next = 0usize;
    while spent < budget {
        let runs = (next..next + CHUNK)
            .into_par_iter()
            .map(|i| {
                let (x, _) = ctx.nominal(i)?;
                let ball = ctx.ball(x)?;
                ctx.amls(&ball, &cfg.amls, i, 0)
            })
            .collect::<Result<Vec<_>>>()?;
        next += CHUNK;
        for r in runs {
            spent += r.forward_passes;
            let method = if r.is_censored() { EntryMethod::AmlsCensored } else { EntryMethod::Amls };
            entries.push(CurveEntry::new(r.log_risk, 0.0, method));
        }
    }
    let n = entries.len();
    Ok((entries, n, spent))
}

fn ace_entries<C: Classifier + ?Sized>(
    ctx: &Context<'_, C>,
    cfg: &BenchConfig,
    budget: u64,
) -> Result<(Vec<CurveEntry>, usize, u64)> {
    let (mut samples, mut spent) = process_samples(ctx, 0..cfg.ace_n0, cfg.ace_m, Some((&cfg.amls, 1)))?;
    let (regression, _) = calibrate(&samples, cfg.include_censored)?;
    let cost = 1 + cfg.ace_m as u64 + reference_pass(cfg.metric);
    let extra = (budget.saturating_sub(spent.total) / cost) as usize;
    let (rest, b) = process_samples(ctx, cfg.ace_n0..cfg.ace_n0 + extra, cfg.ace_m, None)?;
    samples.extend(rest);
    spent.add(b);
    let entries = samples
        .iter()
        .map(|s| curve_entry(s, &regression))
        .collect::<Result<Vec<_>>>()?;
    Ok((entries, cfg.ace_n0, spent.total))
}

/// Mean and standard deviation of `R(t)` in percent for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub t: f64,
    pub mean_pct: Option<f64>,
    pub sd_pct: Option<f64>,
    /// Repetitions whose curve was degenerate at `t`.
    pub degenerate_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: BenchMethod,
    /// Mean nominal sample count; `None` for splitting only, where every
    /// sample is a splitting sample.
    pub n: Option<usize>,
    pub n0: Option<usize>,
    pub runtime_s: f64,
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub t_values: Vec<f64>,
    pub rows: Vec<BenchRow>,
    pub runs: Vec<MethodRun>,
}

fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.len() >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

fn summarise(method: BenchMethod, runs: &[MethodRun], t_values: &[f64]) -> BenchRow {
    let k = runs.len() as f64;
    let mean_n = (runs.iter().map(|r| r.n as f64).sum::<f64>() / k).round() as usize;
    let mean_n0 = (runs.iter().map(|r| r.n0 as f64).sum::<f64>() / k).round() as usize;
    let (n, n0) = match method {
        BenchMethod::NaiveMc => (Some(mean_n), None),
        BenchMethod::Amls => (None, Some(mean_n0)),
        BenchMethod::Ace => (Some(mean_n), Some(mean_n0)),
    };
    let cells = t_values
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let degenerate_runs = runs.iter().filter(|r| r.degenerate[j]).count();
            if degenerate_runs == runs.len() {
                return BenchCell {
                    t,
                    mean_pct: None,
                    sd_pct: None,
                    degenerate_runs,
                };
            }
            let pct: Vec<f64> = runs.iter().map(|r| 100.0 * r.values[j]).collect();
            let (mean, sd) = mean_sd(&pct);
            BenchCell {
                t,
                mean_pct: Some(mean),
                sd_pct: sd,
                degenerate_runs,
            }
        })
        .collect();
    BenchRow {
        method,
        n,
        n0,
        runtime_s: runs.iter().map(|r| r.runtime_s).sum::<f64>() / k,
        cells,
    }
}

/// Runs every configured method for every repetition.
pub fn run_bench<C: Classifier + ?Sized>(model: &C, generator: &GeneratorSpec, cfg: &BenchConfig) -> Result<BenchTable> {
    cfg.validate()?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let mine = (0..cfg.repetitions)
            .map(|rep| run_method(model, generator, cfg, method, rep))
            .collect::<Result<Vec<_>>>()?;
        rows.push(summarise(method, &mine, &cfg.t_values));
        runs.extend(mine);
    }
    Ok(BenchTable {
        t_values: cfg.t_values.clone(),
        rows,
        runs,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BenchTable {
    pub fn row(&self, method: BenchMethod) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,N,N0,runtime_s` then `mean_<t>,sd_<t>` per threshold; empty
    /// cells where a value does not exist.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing bench CSV: {e}"));
        let mut header = vec!["method".to_string(), "N".into(), "N0".into(), "runtime_s".into()];
        for t in &self.t_values {
            header.push(format!("mean_{t:e}"));
            header.push(format!("sd_{t:e}"));
        }
        w.write_record(&header).map_err(err)?;
        for row in &self.rows {
            let mut rec = vec![row.method.name().to_string(), opt(row.n), opt(row.n0), format!("{:.3}", row.runtime_s)];
            for c in &row.cells {
                rec.push(opt(c.mean_pct.map(|v| format!("{v:.2}"))));
                rec.push(opt(c.sd_pct.map(|v| format!("{v:.2}"))));
            }
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing bench CSV: {e}")))?;
        Ok(())
    }

    /// Reads the rows back (without per-run data).
    pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(|e| Error::parse(origin, e))?.clone();
        let t_values = headers
            .iter()
            .skip(4)
            .step_by(2)
            .map(|h| {
                h.strip_prefix("mean_")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(origin, format!("bad column '{h}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::parse(origin, format!("bad number '{s}'")))
            }
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(origin, e))?;
            let method = match &rec[0] {
                "naive_mc" => BenchMethod::NaiveMc,
                "amls" => BenchMethod::Amls,
                "ace" => BenchMethod::Ace,
                other => return Err(Error::parse(origin, format!("unknown method '{other}'"))),
            };
            let cells = t_values
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    Ok(BenchCell {
                        t,
                        mean_pct: parse_opt(&rec[4 + 2 * j])?,
                        sd_pct: parse_opt(&rec[5 + 2 * j])?,
                        degenerate_runs: 0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(BenchRow {
                method,
                n: parse_opt(&rec[1])?.map(|v| v as usize),
                n0: parse_opt(&rec[2])?.map(|v| v as usize),
                runtime_s: parse_opt(&rec[3])?.unwrap_or(0.0),
                cells,
            });
        }
        Ok(Self {
            t_values,
            rows,
            runs: Vec::new(),
        })
    }
}
