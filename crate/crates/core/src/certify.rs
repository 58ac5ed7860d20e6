//! The ACE certification pipeline.
//!
//! 1. Draw `N` nominal samples and, for each, `M` uniform perturbations;
//!    summarise their margins by `(mu_z, sigma_z)`.
//! 2. Run splitting on the first `N0` samples to get `ln p_i`.
//! 3. Regress `ln p_i` on `x_i = ln P(N(0,1) > -mu_z / sigma_z)`.
//! 4. Predict `ln p_i` for the remaining samples and attach a spread to every
//!    sample, giving the curve `R(t)`.
//!
//! Per-sample work runs in parallel on the current rayon pool. Every sample
//! draws from RNG streams keyed by its index, so the output does not depend
//! on the number of workers.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{CumulativeRobustnessCurve, CurveEntry, EntryMethod, DEFAULT_T_VALUES};
use crate::distribution::{ClassSelector, GeneratorSpec, PerturbationBall};
use crate::error::{Error, Result};
use crate::local_risk::{
    local_amls, margin_stats, variance_estimator, AmlsConfig, AmlsResult, Counterexample, MarginStats, Termination,
    VarianceContext,
};
use crate::model::{Classifier, CountingClassifier, GroundTruth, Label, RobustnessMetric};
use crate::normal::log_upper_tail;
use crate::regression::{fit_log_regression, RegressionModel};
use crate::rng::{Domain, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationConfig {
    /// Nominal samples `N`.
    pub n: usize,
    /// Perturbations per nominal sample `M`.
    pub m: usize,
    /// Samples calibrated by splitting, `N0`.
    pub n0: usize,
    pub radius: f64,
    pub metric: RobustnessMetric,
    pub amls: AmlsConfig,
    pub seed: u64,
    /// Acceptable error `rho` in the relaxed criterion.
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub t_values: Vec<f64>,
    /// Use censored splitting results in the regression.
    pub include_censored: bool,
    /// Independent splitting runs per calibration sample.
    pub amls_replicates: usize,
    pub class: ClassSelector,
    /// Optional input box intersected with every perturbation ball.
    pub domain: Option<(f64, f64)>,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self {
            n: 200,
            m: 200,
            n0: 40,
            radius: 0.1,
            metric: RobustnessMetric::M2,
            amls: AmlsConfig::default(),
            seed: 0,
            rho: 0.05,
            epsilon: 0.05,
            delta: 0.05,
            t_values: DEFAULT_T_VALUES.to_vec(),
            include_censored: false,
            amls_replicates: 1,
            class: ClassSelector::All,
            domain: None,
        }
    }
}

impl CertificationConfig {
    /// Checks every precondition that can be checked without sampling.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if self.n0 > self.n {
            return Err(Error::Config(format!("N0 ({}) must not exceed N ({})", self.n0, self.n)));
        }
        if self.n0 < 3 {
            return Err(Error::InsufficientData(format!(
                "N0 = {} calibration samples; the regression needs at least 3",
                self.n0
            )));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("M must be at least 2, got {}", self.m)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if let Some(t) = self.t_values.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!("t values must be in (0, 1], got {t}")));
        }
        if self.amls_replicates == 0 {
            return Err(Error::Config("amls_replicates must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.domain {
            if !(lo < hi) {
                return Err(Error::Config(format!("domain needs lo < hi, got [{lo}, {hi}]")));
            }
        }
        self.amls.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What the pipeline needs besides the configuration.
pub(crate) struct Context<'a, C: ?Sized> {
    pub model: &'a C,
    pub generator: &'a GeneratorSpec,
    pub seeds: SeedStream,
    pub radius: f64,
    pub metric: RobustnessMetric,
    pub class: ClassSelector,
    pub domain: Option<(f64, f64)>,
}

impl<'a, C: Classifier + ?Sized> Context<'a, C> {
    /// The same context evaluating a different model.
    pub fn with_model<'b, D: Classifier + ?Sized>(&self, model: &'b D) -> Context<'b, D>
    where
        'a: 'b,
    {
        Context {
            model,
            generator: self.generator,
            seeds: self.seeds,
            radius: self.radius,
            metric: self.metric,
            class: self.class,
            domain: self.domain,
        }
    }

    pub fn oracle(&self) -> Option<&dyn GroundTruth> {
        self.generator.has_oracle().then_some(self.generator as &dyn GroundTruth)
    }

    pub fn check_metric(&self) -> Result<()> {
        if self.metric.needs_oracle() && !self.generator.has_oracle() {
            return Err(Error::UnsupportedMetric {
                metric: self.metric,
                reason: "the generator declares no ground-truth oracle",
            });
        }
        if self.generator.output_dim != self.model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.input_dim(),
                got: self.generator.output_dim,
            });
        }
        Ok(())
    }

    pub fn nominal(&self, index: usize) -> Result<(Vec<f64>, Label)> {
        self.generator.sample_at(self.class, &self.seeds, index as u64)
    }

    pub fn ball(&self, center: Vec<f64>) -> Result<PerturbationBall> {
        let ball = PerturbationBall::new(center, self.radius)?;
        match self.domain {
            Some((lo, hi)) => ball.with_domain(lo, hi),
            None => Ok(ball),
        }
    }

    /// Splitting run number `replicate` for sample `index`.
    pub fn amls(&self, ball: &PerturbationBall, cfg: &AmlsConfig, index: usize, replicate: usize) -> Result<AmlsResult> {
        let seeds = if replicate == 0 { self.seeds } else { self.seeds.child(replicate as u64) };
        let mut rng = seeds.rng(Domain::Amls, index as u64);
        local_amls(self.model, ball, self.metric, self.oracle(), cfg, &mut rng)
    }
}

/// Splitting outcome for one calibration sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    /// `ln` of the mean risk over replicates.
    pub log_risk: f64,
    pub replicate_log_risks: Vec<f64>,
    /// `ReachedZero` only if every replicate reached it.
    pub terminated: Termination,
    pub forward_passes: u64,
    #[serde(skip)]
    pub counterexamples: Vec<Counterexample>,
}

impl CalibrationRun {
    pub fn is_censored(&self) -> bool {
        self.terminated != Termination::ReachedZero
    }
}

/// Everything measured for one nominal sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub class: Label,
    pub prediction: Label,
    pub ground_truth: Option<Label>,
    pub mu_z: f64,
    pub sigma_z: f64,
    /// `ln P(N(0,1) > -mu_z / sigma_z)`; non-finite when `sigma_z = 0`.
    pub x: f64,
    pub amls: Option<CalibrationRun>,
}

impl SampleOutcome {
    pub fn misclassified(&self) -> Option<bool> {
        self.ground_truth.map(|c| c != self.prediction)
    }
}

/// `ln` of the mean of `exp(v)`, stable for very negative `v`.
fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (v.iter().map(|x| (x - max).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Forward-pass counts by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// One prediction per nominal sample, used for the optimal risk.
    pub nominal_predictions: u64,
    /// Margin statistics, including the reference-class pass for `m2`.
    pub margin_stat_passes: u64,
    pub amls_passes: u64,
    pub total: u64,
}

impl Budget {
    pub fn add(&mut self, other: Budget) {
        self.nominal_predictions += other.nominal_predictions;
        self.margin_stat_passes += other.margin_stat_passes;
        self.amls_passes += other.amls_passes;
        self.total += other.total;
    }
}

/// Computes margin statistics (and splitting, if `calibrate`) for the
/// samples in `range`, counting forward passes per phase.
pub(crate) fn process_samples<C: Classifier + ?Sized>(
    ctx: &Context<'_, C>,
    range: Range<usize>,
    m: usize,
    amls: Option<(&AmlsConfig, usize)>,
) -> Result<(Vec<SampleOutcome>, Budget)> {
    let nominal = CountingClassifier::new(ctx.model);
    let stats = CountingClassifier::new(ctx.model);
    let split = CountingClassifier::new(ctx.model);
    let split_ctx = ctx.with_model(&split);
    let outcomes = range
        .into_par_iter()
        .map(|i| {
            let (x, class) = ctx.nominal(i)?;
            let prediction = nominal.predict(&x)?;
            let ground_truth = ctx.oracle().map(|o| o.ground_truth(&x)).transpose()?;
            let ball = ctx.ball(x)?;
            let mut rng = ctx.seeds.rng(Domain::Ball, i as u64);
            let ms: MarginStats = margin_stats(&stats, &ball, ctx.metric, ctx.oracle(), m, false, &mut rng)?;
            let xi = if ms.std > 0.0 { log_upper_tail(ms.z_score()) } else { f64::NAN };
            let amls = match amls {
                None => None,
                Some((cfg, replicates)) => {
                    let runs = (0..replicates)
                        .map(|k| split_ctx.amls(&ball, cfg, i, k))
                        .collect::<Result<Vec<_>>>()?;
                    let logs: Vec<f64> = runs.iter().map(|r| r.log_risk).collect();
                    let terminated = runs
                        .iter()
                        .map(|r| r.terminated)
                        .find(|t| *t != Termination::ReachedZero)
                        .unwrap_or(Termination::ReachedZero);
                    Some(CalibrationRun {
                        log_risk: log_mean_exp(&logs),
                        replicate_log_risks: logs,
                        terminated,
                        forward_passes: runs.iter().map(|r| r.forward_passes).sum(),
                        counterexamples: runs.into_iter().flat_map(|r| r.counterexamples).collect(),
                    })
                }
            };
            Ok(SampleOutcome {
                index: i,
                class,
                prediction,
                ground_truth,
                mu_z: ms.mean,
                sigma_z: ms.std,
                x: xi,
                amls,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let budget = Budget {
        nominal_predictions: nominal.passes(),
        margin_stat_passes: stats.passes(),
        amls_passes: split.passes(),
        total: nominal.passes() + stats.passes() + split.passes(),
    };
    Ok((outcomes, budget))
}

/// Regression of `ln p` on `x` over the calibration samples.
pub(crate) fn calibrate(samples: &[SampleOutcome], include_censored: bool) -> Result<(RegressionModel, usize)> {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| s.amls.as_ref().map(|a| (s.x, a)))
        .filter(|(x, a)| x.is_finite() && a.log_risk.is_finite() && (include_censored || !a.is_censored()))
        .map(|(x, a)| (x, a.log_risk))
        .collect();
    let used = points.len();
    fit_log_regression(&points)
        .map(|r| (r, used))
        .map_err(|e| {
            Error::Calibration(format!(
                "the calibration subset is uninformative ({used} usable of {} samples): {e}",
                samples.len()
            ))
        })
}

/// The curve entry for one sample given the calibration line.
pub(crate) fn curve_entry(sample: &SampleOutcome, regression: &RegressionModel) -> Result<CurveEntry> {
    if let Some(a) = &sample.amls {
        let sigma = variance_estimator(VarianceContext::Amls {
            regression,
            replicate_log_risks: &a.replicate_log_risks,
        })?;
        let method = if a.is_censored() { EntryMethod::AmlsCensored } else { EntryMethod::Amls };
        return Ok(CurveEntry::new(a.log_risk, sigma, method));
    }
    if !sample.x.is_finite() {
        // every sampled margin was equal: the parametric estimate is a point mass
        let mu = if sample.mu_z >= 0.0 { 0.0 } else { f64::NEG_INFINITY };
        return Ok(CurveEntry::new(mu, 0.0, EntryMethod::ParamEst));
    }
    let sigma = variance_estimator(VarianceContext::Predicted {
        regression,
        x: sample.x,
    })?;
    Ok(CurveEntry::new(regression.predict(sample.x).min(0.0), sigma, EntryMethod::Predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub t: f64,
    pub rho: f64,
    /// `1 - R(t)`.
    pub thresholded_risk: f64,
    pub curve_value: f64,
    pub curve_std_error: Option<f64>,
    pub satisfied: bool,
}

/// `R_rob(t) <= R* + rho`.
pub fn criterion_holds(thresholded_risk: f64, r_star: f64, rho: f64) -> bool {
    thresholded_risk <= r_star + rho
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRef {
    pub path: Option<String>,
    pub entries: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleManifest {
    pub total: usize,
    /// `(sample index, count)` for calibration samples with any.
    pub per_sample: Vec<(usize, usize)>,
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub config: CertificationConfig,
    /// Optimal risk: `0` for `m2`, the measured classification risk otherwise.
    pub r_star: f64,
    pub r_star_std_error: f64,
    pub criterion_results: Vec<CriterionResult>,
    pub budget: Budget,
    pub regression: RegressionModel,
    pub calibration_points_used: usize,
    pub censored_calibration_samples: usize,
    /// Sample size for the requested `(epsilon, delta)`.
    pub pac_sample_size: u64,
    pub curve_ref: CurveRef,
    pub counterexamples: CounterexampleManifest,
    pub samples: Vec<SampleOutcome>,
    #[serde(skip)]
    pub curve: CumulativeRobustnessCurve,
}

impl CertificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("report JSON: {e}")))
    }

    /// Splitting counterexamples found during calibration, by sample index.
    pub fn calibration_counterexamples(&self) -> impl Iterator<Item = (usize, &Counterexample)> {
        self.samples
            .iter()
            .filter_map(|s| s.amls.as_ref().map(|a| (s.index, a)))
            .flat_map(|(i, a)| a.counterexamples.iter().map(move |c| (i, c)))
    }
}

/// Runs the ACE pipeline.
pub fn run_certification<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    cfg: &CertificationConfig,
) -> Result<CertificationReport> {
    cfg.validate()?;
    let ctx = Context {
        model,
        generator,
        seeds: SeedStream::new(cfg.seed),
        radius: cfg.radius,
        metric: cfg.metric,
        class: cfg.class,
        domain: cfg.domain,
    };
    ctx.check_metric()?;

    let (mut samples, mut budget) = process_samples(&ctx, 0..cfg.n0, cfg.m, Some((&cfg.amls, cfg.amls_replicates)))?;
    let (regression, used) = calibrate(&samples, cfg.include_censored)?;
    let (rest, b) = process_samples(&ctx, cfg.n0..cfg.n, cfg.m, None)?;
    samples.extend(rest);
    budget.add(b);

    let fingerprint = cfg.fingerprint();
    let entries = samples
        .iter()
        .map(|s| curve_entry(s, &regression))
        .collect::<Result<Vec<_>>>()?;
    let curve = CumulativeRobustnessCurve {
        entries,
        metric: Some(cfg.metric),
        radius: Some(cfg.radius),
        fingerprint: Some(fingerprint.clone()),
    };

    let (r_star, r_star_std_error) = optimal_risk(cfg.metric, &samples);
    let criterion_results = cfg
        .t_values
        .iter()
        .map(|&t| {
            let curve_value = curve.evaluate(t)?;
            let thresholded_risk = 1.0 - curve_value;
            Ok(CriterionResult {
                t,
                rho: cfg.rho,
                thresholded_risk,
                curve_value,
                curve_std_error: curve.standard_error(t)?,
                satisfied: criterion_holds(thresholded_risk, r_star, cfg.rho),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_sample: Vec<(usize, usize)> = samples
        .iter()
        .filter_map(|s| s.amls.as_ref().map(|a| (s.index, a.counterexamples.len())))
        .filter(|(_, k)| *k > 0)
        .collect();
    Ok(CertificationReport {
        config: cfg.clone(),
        r_star,
        r_star_std_error,
        criterion_results,
        budget,
        regression,
        calibration_points_used: used,
        censored_calibration_samples: samples.iter().filter(|s| s.amls.as_ref().is_some_and(|a| a.is_censored())).count(),
        pac_sample_size: crate::pac::pac_sample_size(cfg.epsilon, cfg.delta)?,
        curve_ref: CurveRef {
            path: None,
            entries: curve.len(),
            fingerprint,
        },
        counterexamples: CounterexampleManifest {
            total: per_sample.iter().map(|(_, k)| k).sum(),
            per_sample,
            path: None,
        },
        samples,
        curve,
    })
}

/// `R*` and its standard error from the nominal samples.
fn optimal_risk(metric: RobustnessMetric, samples: &[SampleOutcome]) -> (f64, f64) {
    if metric == RobustnessMetric::M2 {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let wrong = samples.iter().filter(|s| s.misclassified() == Some(true)).count() as f64;
    let p = wrong / n;
    (p, (p * (1.0 - p) / n).sqrt())
}
