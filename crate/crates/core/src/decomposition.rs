//! Classification, boundary and ground-truth boundary risks, and an
//! empirical check of how they add up to the robustness risks.
//!
//! Membership of `x` in the `r`-neighbourhood of a decision boundary is
//! decided by probing: `x` is near the model boundary iff some probe in
//! `B(x, r)` flips the prediction, and near the true boundary iff some probe
//! flips the oracle. The centre itself is always probe 0. Robustness risks
//! here are the strict (`t = 0`) ones: a nominal counts if any probe violates
//! the metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{ClassSelector, GeneratorSpec, PerturbationBall};
use crate::error::{Error, Result};
use crate::local_risk::{local_amls, AmlsConfig, Termination};
use crate::model::{is_violation, Classifier, CountingClassifier, Label, RobustnessMetric};
use crate::rng::{Domain, SeedStream};

/// How to decide whether a ball contains a prediction flip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Detector {
    /// Fires if any of `draws` uniform probes (plus the centre) flips.
    NaiveMc { draws: usize },
    /// Fires if splitting on the `m2` margin reaches the violation set.
    Amls { config: AmlsConfig },
}

/// A Monte Carlo proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl RiskEstimate {
    fn from_flags(flags: impl Iterator<Item = bool>) -> Self {
        let (mut hits, mut n) = (0usize, 0usize);
        for f in flags {
            n += 1;
            hits += usize::from(f);
        }
        let value = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        let std_error = if n == 0 { 0.0 } else { (value * (1.0 - value) / n as f64).sqrt() };
        Self {
            value,
            std_error,
            samples: n,
        }
    }
}

fn require_oracle(generator: &GeneratorSpec) -> Result<()> {
    if generator.has_oracle() {
        Ok(())
    } else {
        Err(Error::UnsupportedMetric {
            metric: RobustnessMetric::M0,
            reason: "risk decomposition needs the generator's ground-truth oracle",
        })
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("radius must be non-negative, got {r}")))
    }
}

/// The centre followed by `count` uniform draws from `B(x, r)`; just the
/// centre when `r = 0`.
fn probes(x: &[f64], r: f64, count: usize, seeds: &SeedStream, domain: Domain, index: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![x.to_vec()];
    if r > 0.0 {
        let ball = PerturbationBall::new(x.to_vec(), r)?;
        let mut rng = seeds.rng(domain, index as u64);
        out.extend((0..count).map(|_| ball.sample(&mut rng)));
    }
    Ok(out)
}

struct Nominal {
    x: Vec<f64>,
    truth: Label,
    prediction: Label,
}

impl Nominal {
    fn correct(&self) -> bool {
        self.truth == self.prediction
    }
}

fn nominal<C: Classifier + ?Sized>(model: &C, generator: &GeneratorSpec, seeds: &SeedStream, i: usize) -> Result<Nominal> {
    let (x, _) = generator.sample_at(ClassSelector::All, seeds, i as u64)?;
    Ok(Nominal {
        truth: generator.ground_truth(&x)?,
        prediction: model.predict(&x)?,
        x,
    })
}

/// Whether the detector finds a prediction flip in `B(x, r)`.
fn detect_flip<C: Classifier + ?Sized>(
    model: &C,
    nom: &Nominal,
    r: f64,
    detector: &Detector,
    seeds: &SeedStream,
    i: usize,
) -> Result<bool> {
    if r == 0.0 {
        return Ok(false);
    }
    match detector {
        Detector::NaiveMc { draws } => {
            for p in probes(&nom.x, r, *draws, seeds, Domain::Detector, i)?.iter().skip(1) {
                if is_violation(model.scores(p)?.margin_against(nom.prediction)) {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Detector::Amls { config } => {
            let ball = PerturbationBall::new(nom.x.clone(), r)?;
            let mut rng = seeds.rng(Domain::Detector, i as u64);
            let res = local_amls(model, &ball, RobustnessMetric::M2, None, config, &mut rng)?;
            Ok(res.terminated == Termination::ReachedZero)
        }
    }
}

/// `R_c`: the fraction of nominal samples the model misclassifies.
pub fn classification_risk<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    n: usize,
    seeds: &SeedStream,
) -> Result<RiskEstimate> {
    require_oracle(generator)?;
    let flags = (0..n)
        .into_par_iter()
        .map(|i| nominal(model, generator, seeds, i).map(|nom| !nom.correct()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskEstimate::from_flags(flags.into_iter()))
}

/// `R_b`: correctly classified nominals whose ball contains a flip.
pub fn boundary_risk<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    n: usize,
    r: f64,
    detector: &Detector,
    seeds: &SeedStream,
) -> Result<RiskEstimate> {
    require_oracle(generator)?;
    check_radius(r)?;
    let flags = (0..n)
        .into_par_iter()
        .map(|i| {
            let nom = nominal(model, generator, seeds, i)?;
            Ok(nom.correct() && detect_flip(model, &nom, r, detector, seeds, i)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskEstimate::from_flags(flags.into_iter()))
}

/// Per-nominal outcome of the ground-truth boundary test.
fn truth_boundary_flag<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    nom: &Nominal,
    r: f64,
    probe_count: usize,
    seeds: &SeedStream,
    i: usize,
) -> Result<bool> {
    if !nom.correct() || r == 0.0 {
        return Ok(false);
    }
    let mut truth_flip = false;
    for p in probes(&nom.x, r, probe_count, seeds, Domain::GroundTruthProbe, i)?.iter().skip(1) {
        if is_violation(model.scores(p)?.margin_against(nom.prediction)) {
            return Ok(false);
        }
        truth_flip |= generator.ground_truth(p)? != nom.truth;
    }
    Ok(truth_flip)
}

/// `R_gb`: correctly classified nominals near the true boundary but not near
/// the model boundary, both judged on the same probe set.
pub fn ground_truth_boundary_risk<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    n: usize,
    r: f64,
    probe_count: usize,
    seeds: &SeedStream,
) -> Result<RiskEstimate> {
    require_oracle(generator)?;
    check_radius(r)?;
    let flags = (0..n)
        .into_par_iter()
        .map(|i| {
            let nom = nominal(model, generator, seeds, i)?;
            truth_boundary_flag(model, generator, &nom, r, probe_count, seeds, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskEstimate::from_flags(flags.into_iter()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `R_rob(m1) - (R_c + R_b)`; zero in expectation.
    pub m1_equality: f64,
    /// `R_rob(m2) - (R_c + R_b)`; non-positive in expectation.
    pub m2_inequality: f64,
    /// `R_rob(m0) - (R_c + R_b + R_gb)`; small when the two boundary bands
    /// do not overlap. Reported without a threshold.
    pub m0_approx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub r_c: f64,
    pub r_b: f64,
    pub r_gb: f64,
    pub r_rob_m0: f64,
    pub r_rob_m1: f64,
    pub r_rob_m2: f64,
    /// Combined error of the `m1` residual's terms.
    pub m1_equality: f64,
    pub m2_inequality: f64,
    pub m0_approx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub r_c: f64,
    pub r_b: f64,
    pub r_gb: f64,
    pub r_rob_m0: f64,
    pub r_rob_m1: f64,
    pub r_rob_m2: f64,
    pub residuals: Residuals,
    pub standard_errors: StandardErrors,
    pub detector: Detector,
    /// Forward passes.
    pub budget: u64,
    pub samples: usize,
    pub radius: f64,
}

impl DecompositionReport {
    /// `|R_rob(m1) - (R_c + R_b)| <= k` combined standard errors.
    pub fn m1_equality_holds(&self, k: f64) -> bool {
        self.residuals.m1_equality.abs() <= k * self.standard_errors.m1_equality
    }

    /// `R_rob(m2) - (R_c + R_b) <= k` combined standard errors.
    pub fn m2_inequality_holds(&self, k: f64) -> bool {
        self.residuals.m2_inequality <= k * self.standard_errors.m2_inequality
    }
}

struct Flags {
    misclassified: bool,
    boundary: bool,
    truth_boundary: bool,
    rob: [bool; 3],
}

/// Estimates every term on the same `n` nominals with `m` probes per ball
/// and reports the residuals of the decomposition relations.
pub fn decomposition_check<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    n: usize,
    m: usize,
    r: f64,
    seeds: &SeedStream,
) -> Result<DecompositionReport> {
    require_oracle(generator)?;
    check_radius(r)?;
    if n == 0 {
        return Err(Error::Config("decomposition needs at least one nominal sample".into()));
    }
    let counted = CountingClassifier::new(model);
    let detector = Detector::NaiveMc { draws: m };
    let flags = (0..n)
        .into_par_iter()
        .map(|i| {
            let nom = nominal(&counted, generator, seeds, i)?;
            let mut rob = [false; 3];
            for p in probes(&nom.x, r, m, seeds, Domain::Probe, i)? {
                let scores = counted.scores(&p)?;
                let truth_p = generator.ground_truth(&p)?;
                rob[0] |= is_violation(scores.margin_against(truth_p));
                rob[1] |= is_violation(scores.margin_against(nom.truth));
                rob[2] |= is_violation(scores.margin_against(nom.prediction));
            }
            Ok(Flags {
                misclassified: !nom.correct(),
                boundary: nom.correct() && detect_flip(&counted, &nom, r, &detector, seeds, i)?,
                truth_boundary: truth_boundary_flag(&counted, generator, &nom, r, m, seeds, i)?,
                rob,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let est = |f: &dyn Fn(&Flags) -> bool| RiskEstimate::from_flags(flags.iter().map(f));
    let r_c = est(&|f| f.misclassified);
    let r_b = est(&|f| f.boundary);
    let r_gb = est(&|f| f.truth_boundary);
    let rob: Vec<RiskEstimate> = (0..3).map(|k| est(&|f| f.rob[k])).collect();
    let combine = |terms: &[f64]| terms.iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(DecompositionReport {
        r_c: r_c.value,
        r_b: r_b.value,
        r_gb: r_gb.value,
        r_rob_m0: rob[0].value,
        r_rob_m1: rob[1].value,
        r_rob_m2: rob[2].value,
        residuals: Residuals {
            m1_equality: rob[1].value - (r_c.value + r_b.value),
            m2_inequality: rob[2].value - (r_c.value + r_b.value),
            m0_approx: rob[0].value - (r_c.value + r_b.value + r_gb.value),
        },
        standard_errors: StandardErrors {
            r_c: r_c.std_error,
            r_b: r_b.std_error,
            r_gb: r_gb.std_error,
            r_rob_m0: rob[0].std_error,
            r_rob_m1: rob[1].std_error,
            r_rob_m2: rob[2].std_error,
            m1_equality: combine(&[rob[1].std_error, r_c.std_error, r_b.std_error]),
            m2_inequality: combine(&[rob[2].std_error, r_c.std_error, r_b.std_error]),
            m0_approx: combine(&[rob[0].std_error, r_c.std_error, r_b.std_error, r_gb.std_error]),
        },
        detector,
        budget: counted.passes(),
        samples: n,
        radius: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnClassifier;
    use crate::synthetic::{linear_1d_generator, linear_1d_model};

    #[test]
    fn always_zero_classifier_is_wrong_half_the_time() {
        let model = FnClassifier::new(1, 2, |_: &[f64]| vec![1.0, 0.0]);
        let rc = classification_risk(&model, &linear_1d_generator(), 4000, &SeedStream::new(1)).unwrap();
        assert!((rc.value - 0.5).abs() < 3.0 * rc.std_error, "{rc:?}");
        let rb = boundary_risk(&model, &linear_1d_generator(), 500, 0.1, &Detector::NaiveMc { draws: 20 }, &SeedStream::new(1))
            .unwrap();
        assert_eq!(rb.value, 0.0);
    }

    #[test]
    fn boundary_band_matches_interval_length() {
        // correct points within 0.1 of x = 0: measure 0.2 of [-1, 1]
        let rb = boundary_risk(
            &linear_1d_model(0.0),
            &linear_1d_generator(),
            4000,
            0.1,
            &Detector::NaiveMc { draws: 200 },
            &SeedStream::new(2),
        )
        .unwrap();
        assert!((rb.value - 0.1).abs() < 4.0 * rb.std_error + 0.005, "{rb:?}");
    }

    #[test]
    fn matching_boundaries_leave_no_truth_band() {
        let g = linear_1d_generator();
        let rgb = ground_truth_boundary_risk(&linear_1d_model(0.0), &g, 2000, 0.1, 50, &SeedStream::new(3)).unwrap();
        assert_eq!(rgb.value, 0.0);
        let rgb0 = ground_truth_boundary_risk(&linear_1d_model(0.3), &g, 500, 0.0, 50, &SeedStream::new(3)).unwrap();
        assert_eq!(rgb0.value, 0.0);
    }

    #[test]
    fn zero_radius_reduces_to_classification_risk() {
        let rep = decomposition_check(&linear_1d_model(0.2), &linear_1d_generator(), 3000, 10, 0.0, &SeedStream::new(4)).unwrap();
        assert_eq!(rep.r_b, 0.0);
        assert_eq!(rep.r_gb, 0.0);
        assert_eq!(rep.r_rob_m0, rep.r_c);
        assert_eq!(rep.r_rob_m1, rep.r_c);
        // the nominal point never violates m2 against its own prediction
        assert_eq!(rep.r_rob_m2, 0.0);
        assert!((rep.r_c - 0.1).abs() < 4.0 * rep.standard_errors.r_c);
    }

    #[test]
    fn report_serialises_with_expected_keys() {
        let rep = decomposition_check(&linear_1d_model(0.3), &linear_1d_generator(), 200, 20, 0.1, &SeedStream::new(5)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for key in ["r_c", "r_b", "r_gb", "r_rob_m0", "r_rob_m1", "r_rob_m2", "residuals", "standard_errors", "detector", "budget"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
