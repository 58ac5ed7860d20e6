//! Counterexample mining from AMLS runs.
//!
//! Each nominal gets one AMLS run; when it reaches the violation set, its
//! final particles are the candidates. Near-duplicates are merged, the
//! `per_nominal` strongest violations are kept, and the archive is ordered by
//! the nominal's estimated local risk so its two ends are the least and the
//! most fragile nominals.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{ClassSelector, GeneratorSpec, PerturbationBall};
use crate::error::{Error, Result};
use crate::local_risk::{local_amls, AmlsConfig, Counterexample, Termination};
use crate::model::{Classifier, GroundTruth, Label, RobustnessMetric};
use crate::rng::{Domain, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    pub radius: f64,
    pub metric: RobustnessMetric,
    pub amls: AmlsConfig,
    /// Records kept per nominal.
    pub per_nominal: usize,
    /// Candidates closer than this in the l-infinity norm are merged.
    pub merge_radius: f64,
    pub domain: Option<(f64, f64)>,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            metric: RobustnessMetric::M2,
            amls: AmlsConfig::default(),
            per_nominal: 5,
            merge_radius: 1e-3,
            domain: None,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.per_nominal == 0 {
            return Err(Error::Config("per_nominal must be at least 1".into()));
        }
        if !(self.merge_radius >= 0.0 && self.merge_radius.is_finite()) {
            return Err(Error::Config("merge_radius must be non-negative".into()));
        }
        self.amls.validate()
    }
}

/// Marks records of the nominal with the least or the greatest estimated
/// local risk in the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extreme {
    Least,
    Greatest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRecord {
    pub nominal_index: usize,
    pub nominal: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub nominal_prediction: Label,
    pub perturbed_prediction: Label,
    pub ground_truth_nominal: Option<Label>,
    pub ground_truth_perturbed: Option<Label>,
    pub margin: f64,
    /// AMLS estimate of the nominal's local risk.
    pub nominal_p: f64,
    pub nominal_log_p: f64,
    pub metric: RobustnessMetric,
    pub radius: f64,
    pub extreme: Option<Extreme>,
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mine_one<C: Classifier + ?Sized>(
    model: &C,
    oracle: Option<&dyn GroundTruth>,
    index: usize,
    x: &[f64],
    cfg: &MineConfig,
    seeds: &SeedStream,
) -> Result<Vec<CounterexampleRecord>> {
    let mut ball = PerturbationBall::new(x.to_vec(), cfg.radius)?;
    if let Some((lo, hi)) = cfg.domain {
        ball = ball.with_domain(lo, hi)?;
    }
    let mut rng = seeds.rng(Domain::Amls, index as u64);
    let run = local_amls(model, &ball, cfg.metric, oracle, &cfg.amls, &mut rng)?;
    if run.terminated != Termination::ReachedZero {
        return Ok(Vec::new());
    }

    let mut candidates = run.counterexamples;
    candidates.sort_by(|a, b| b.margin.total_cmp(&a.margin));
    let mut kept: Vec<_> = Vec::new();
    for c in candidates {
        if kept.len() == cfg.per_nominal {
            break;
        }
        if kept.iter().all(|k: &Counterexample| linf(&k.x, &c.x) >= cfg.merge_radius) {
            kept.push(c);
        }
    }

    let nominal_prediction = model.predict(x)?;
    let ground_truth_nominal = oracle.map(|o| o.ground_truth(x)).transpose()?;
    kept.into_iter()
        .map(|c| {
            Ok(CounterexampleRecord {
                nominal_index: index,
                nominal: x.to_vec(),
                perturbed_prediction: model.predict(&c.x)?,
                ground_truth_perturbed: oracle.map(|o| o.ground_truth(&c.x)).transpose()?,
                perturbed: c.x,
                nominal_prediction,
                ground_truth_nominal,
                margin: c.margin,
                nominal_p: run.log_risk.exp(),
                nominal_log_p: run.log_risk,
                metric: cfg.metric,
                radius: cfg.radius,
                extreme: None,
            })
        })
        .collect()
}

/// Mines the given nominal points. Nominal `i` uses the AMLS stream at index
/// `i`, so the result does not depend on the worker count.
pub fn mine_counterexamples<C: Classifier + ?Sized>(
    model: &C,
    oracle: Option<&dyn GroundTruth>,
    nominals: &[Vec<f64>],
    cfg: &MineConfig,
    seeds: &SeedStream,
) -> Result<Vec<CounterexampleRecord>> {
    cfg.validate()?;
    let per: Vec<Vec<CounterexampleRecord>> = nominals
        .par_iter()
        .enumerate()
        .map(|(i, x)| mine_one(model, oracle, i, x, cfg, seeds))
        .collect::<Result<_>>()?;
    let mut records: Vec<_> = per.into_iter().flatten().collect();
    records.sort_by(|a, b| a.nominal_log_p.total_cmp(&b.nominal_log_p).then(a.nominal_index.cmp(&b.nominal_index)));
    if let (Some(first), Some(last)) = (records.first().map(|r| r.nominal_index), records.last().map(|r| r.nominal_index)) {
        for r in &mut records {
            if r.nominal_index == first {
                r.extreme = Some(Extreme::Least);
            } else if r.nominal_index == last {
                r.extreme = Some(Extreme::Greatest);
            }
        }
    }
    Ok(records)
}

/// Draws `n` nominals from the generator and mines them.
pub fn mine_generator<C: Classifier + ?Sized>(
    model: &C,
    generator: &GeneratorSpec,
    n: usize,
    class: ClassSelector,
    cfg: &MineConfig,
    seeds: &SeedStream,
) -> Result<Vec<CounterexampleRecord>> {
    if cfg.metric.needs_oracle() && !generator.has_oracle() {
        return Err(Error::UnsupportedMetric {
            metric: cfg.metric,
            reason: "the generator has no ground-truth oracle",
        });
    }
    let nominals = (0..n)
        .map(|i| generator.sample_at(class, seeds, i as u64).map(|(x, _)| x))
        .collect::<Result<Vec<_>>>()?;
    let oracle = generator.has_oracle().then_some(generator as &dyn GroundTruth);
    mine_counterexamples(model, oracle, &nominals, cfg, seeds)
}

pub fn write_jsonl<W: Write>(records: &[CounterexampleRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: std::io::Read>(input: R, origin: &Path) -> Result<Vec<CounterexampleRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: origin.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<CounterexampleRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_jsonl(file, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{margin, FnClassifier};
    use crate::synthetic::{linear_1d_generator, linear_1d_model};

    #[test]
    fn deep_interior_yields_nothing() {
        let cfg = MineConfig {
            radius: 0.1,
            amls: AmlsConfig { max_levels: 5, ..AmlsConfig::default() },
            ..MineConfig::default()
        };
        let recs = mine_counterexamples(&linear_1d_model(0.0), None, &[vec![-0.8]], &cfg, &SeedStream::new(1)).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn records_respect_ball_and_margin() {
        let model = linear_1d_model(0.0);
        let g = linear_1d_generator();
        let cfg = MineConfig {
            radius: 0.1,
            per_nominal: 3,
            ..MineConfig::default()
        };
        let recs = mine_generator(&model, &g, 10, ClassSelector::All, &cfg, &SeedStream::new(2)).unwrap();
        assert!(recs.len() <= 30);
        for r in &recs {
            assert!(linf(&r.nominal, &r.perturbed) <= r.radius);
            let h = margin(&model, &r.nominal, &r.perturbed, r.metric, None).unwrap();
            assert_eq!(h, r.margin);
            assert!(h >= 0.0);
        }
        assert!(recs.windows(2).all(|w| w[0].nominal_log_p <= w[1].nominal_log_p));
    }

    #[test]
    fn merge_radius_thins_candidates() {
        let model = FnClassifier::new(1, 2, |x: &[f64]| vec![0.0, x[0] - 0.95]);
        let mk = |merge_radius| MineConfig {
            radius: 0.1,
            per_nominal: 50,
            merge_radius,
            domain: Some((0.0, 1.0)),
            ..MineConfig::default()
        };
        let loose = mine_counterexamples(&model, None, &[vec![0.9]], &mk(0.0), &SeedStream::new(3)).unwrap();
        let tight = mine_counterexamples(&model, None, &[vec![0.9]], &mk(0.01), &SeedStream::new(3)).unwrap();
        assert!(!tight.is_empty() && tight.len() < loose.len());
        for (i, a) in tight.iter().enumerate() {
            for b in &tight[i + 1..] {
                assert!(linf(&a.perturbed, &b.perturbed) >= 0.01);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = MineConfig { radius: 0.2, ..MineConfig::default() };
        let recs = mine_counterexamples(&linear_1d_model(0.0), None, &[vec![0.1], vec![-0.05]], &cfg, &SeedStream::new(4)).unwrap();
        assert!(!recs.is_empty());
        assert_eq!(recs[0].extreme, Some(Extreme::Least));
        assert_eq!(recs.last().unwrap().extreme, Some(Extreme::Greatest));
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        assert_eq!(read_jsonl(&buf[..], Path::new("mem")).unwrap(), recs);
    }
}
