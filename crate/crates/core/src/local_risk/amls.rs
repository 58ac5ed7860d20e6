//! Adaptive multi-level splitting for rare violations.
//!
//! A population of perturbations is pushed towards the violation set
//! `{h >= 0}` through a sequence of adaptively chosen margin levels. At each
//! level only the top `quantile` share of particles survives; survivors are
//! resampled back to full size and decorrelated with Metropolis-Hastings moves
//! that keep the uniform distribution on `{x' in B(x, r) : h(x') > level}`
//! invariant. The risk estimate is the product of the realised survival
//! fractions.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::PerturbationBall;
use crate::error::{Error, Result};
use crate::model::{is_violation, Classifier, GroundTruth, MarginFn, RobustnessMetric};

/// A level must beat the previous one by more than this to count as progress.
const STUCK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmlsConfig {
    pub quantile: f64,
    pub particles: usize,
    pub max_levels: usize,
    pub mh_updates_per_level: usize,
    /// Initial proposal half-width as a fraction of the ball radius.
    pub initial_width: f64,
    /// After each sweep the width is scaled by `rate / target_acceptance`,
    /// clamped to `[0.5, 2]`.
    pub target_acceptance: f64,
}

impl Default for AmlsConfig {
    fn default() -> Self {
        Self {
            quantile: 0.1,
            particles: 200,
            max_levels: 20,
            mh_updates_per_level: 10,
            initial_width: 0.5,
            target_acceptance: 0.3,
        }
    }
}

impl AmlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::Config(format!("AMLS quantile must be in (0, 1), got {}", self.quantile)));
        }
        if self.particles < 10 {
            return Err(Error::Config(format!("AMLS needs at least 10 particles, got {}", self.particles)));
        }
        if self.max_levels == 0 || self.mh_updates_per_level == 0 {
            return Err(Error::Config("AMLS max_levels and mh_updates_per_level must be at least 1".into()));
        }
        if !(self.initial_width > 0.0 && self.initial_width.is_finite()) {
            return Err(Error::Config("AMLS initial_width must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("AMLS target_acceptance must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Particles kept above each intermediate level.
    fn survivors_per_level(&self) -> usize {
        ((self.quantile * self.particles as f64).round() as usize).clamp(1, self.particles - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedZero,
    MaxLevels,
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub margin: f64,
}

/// Diagnostic record for one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: f64,
    pub survival_fraction: f64,
    pub acceptance_rate: Option<f64>,
    pub proposal_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmlsResult {
    /// `ln p`; an upper bound rather than an estimate unless
    /// `terminated == ReachedZero`.
    pub log_risk: f64,
    pub levels: Vec<f64>,
    pub survival_fractions: Vec<f64>,
    pub terminated: Termination,
    pub counterexamples: Vec<Counterexample>,
    pub acceptance_rates: Vec<f64>,
    pub diagnostics: Vec<LevelRecord>,
    pub forward_passes: u64,
}

impl AmlsResult {
    pub fn risk(&self) -> f64 {
        self.log_risk.exp()
    }

    pub fn is_censored(&self) -> bool {
        self.terminated != Termination::ReachedZero
    }
}

struct Population {
    points: Vec<Vec<f64>>,
    margins: Vec<f64>,
}

/// Runs adaptive multi-level splitting on the ball around `ball.center()`.
pub fn local_amls<C, R>(
    model: &C,
    ball: &PerturbationBall,
    metric: RobustnessMetric,
    oracle: Option<&dyn GroundTruth>,
    cfg: &AmlsConfig,
    rng: &mut R,
) -> Result<AmlsResult>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let h = MarginFn::new(model, ball.center(), metric, oracle)?;
    let mut passes: u64 = if metric == RobustnessMetric::M2 { 1 } else { 0 };

    let n = cfg.particles;
    let keep = cfg.survivors_per_level();
    let mut pop = Population {
        points: Vec::with_capacity(n),
        margins: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x = ball.sample(rng);
        pop.margins.push(h.eval(&x)?);
        pop.points.push(x);
    }
    passes += n as u64;

    let mut width = cfg.initial_width * ball.radius();
    let mut log_risk = 0.0;
    let mut levels = Vec::new();
    let mut fractions = Vec::new();
    let mut acceptance_rates = Vec::new();
    let mut diagnostics = Vec::new();
    let mut counterexamples = Vec::new();
    let mut terminated = Termination::MaxLevels;
    let mut sorted = Vec::with_capacity(n);

    for _ in 0..cfg.max_levels {
        sorted.clear();
        sorted.extend_from_slice(&pop.margins);
        sorted.sort_by(f64::total_cmp);
        let level = sorted[n - keep - 1];

        if is_violation(level) {
            let hits: Vec<usize> = (0..n).filter(|&i| is_violation(pop.margins[i])).collect();
            let frac = hits.len() as f64 / n as f64;
            log_risk += frac.ln();
            levels.push(0.0);
            fractions.push(frac);
            diagnostics.push(LevelRecord {
                level: 0.0,
                survival_fraction: frac,
                acceptance_rate: None,
                proposal_width: width,
            });
            counterexamples = hits
                .into_iter()
                .map(|i| Counterexample {
                    x: pop.points[i].clone(),
                    margin: pop.margins[i],
                })
                .collect();
            terminated = Termination::ReachedZero;
            break;
        }
        if levels.last().is_some_and(|&prev: &f64| level <= prev + STUCK_TOLERANCE) {
            terminated = Termination::Stuck;
            break;
        }
        let survivors: Vec<usize> = (0..n).filter(|&i| pop.margins[i] > level).collect();
        if survivors.is_empty() {
            terminated = Termination::Stuck;
            break;
        }
        let frac = survivors.len() as f64 / n as f64;
        log_risk += frac.ln();
        levels.push(level);
        fractions.push(frac);

        // split: resample survivors back to a full population
        let mut next = Population {
            points: Vec::with_capacity(n),
            margins: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let j = survivors[rng.random_range(0..survivors.len())];
            next.points.push(pop.points[j].clone());
            next.margins.push(pop.margins[j]);
        }
        pop = next;

        let mut accepted_total = 0usize;
        let mut proposal = vec![0.0; ball.dim()];
        for _ in 0..cfg.mh_updates_per_level {
            let mut accepted = 0usize;
            for i in 0..n {
                for (k, p) in proposal.iter_mut().enumerate() {
                    *p = ball.reflect(k, pop.points[i][k] + rng.random_range(-width..=width));
                }
                let m = h.eval(&proposal)?;
                passes += 1;
                if m > level {
                    pop.points[i].copy_from_slice(&proposal);
                    pop.margins[i] = m;
                    accepted += 1;
                }
            }
            accepted_total += accepted;
            let rate = accepted as f64 / n as f64;
            width *= (rate / cfg.target_acceptance).clamp(0.5, 2.0);
            width = width.clamp(ball.radius() * 1e-9, 2.0 * ball.radius());
        }
        let rate = accepted_total as f64 / (n * cfg.mh_updates_per_level) as f64;
        acceptance_rates.push(rate);
        diagnostics.push(LevelRecord {
            level,
            survival_fraction: frac,
            acceptance_rate: Some(rate),
            proposal_width: width,
        });
    }

    Ok(AmlsResult {
        log_risk,
        levels,
        survival_fractions: fractions,
        terminated,
        counterexamples,
        acceptance_rates,
        diagnostics,
        forward_passes: passes,
    })
}

/// Writes one JSON object per level.
pub fn write_diagnostics<W: Write>(result: &AmlsResult, mut out: W) -> std::io::Result<()> {
    for rec in &result.diagnostics {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
