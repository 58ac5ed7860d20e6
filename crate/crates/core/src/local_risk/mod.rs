//! Local robustness risk: the probability that a uniform draw from `B(x, r)`
//! violates the robustness metric.

mod amls;
mod naive;
mod param;
mod variance;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::PerturbationBall;
use crate::error::{Error, Result};
use crate::model::{Classifier, GroundTruth, MarginFn, RobustnessMetric};

pub use amls::{local_amls, write_diagnostics, AmlsConfig, AmlsResult, Counterexample, LevelRecord, Termination};
pub use naive::naive_mc_local_risk;
pub use param::param_est_local_risk;
pub use variance::{variance_estimator, VarianceContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    NaiveMc,
    ParamEst,
    Amls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRiskEstimate {
    /// Estimated risk in `[0, 1]`; may underflow to zero for extreme tails.
    pub value: f64,
    /// Natural log of the estimate, finite wherever the estimate is positive.
    pub log_value: f64,
    pub method: EstimationMethod,
    pub std_error: Option<f64>,
}

/// Mean and standard deviation of the margins `z_1 .. z_M` around one
/// nominal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<f64>>,
}

impl MarginStats {
    /// Sample mean and (n-1)-normalised standard deviation.
    pub fn from_margins(margins: &[f64], keep: bool) -> Result<Self> {
        let n = margins.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "margin statistics need at least 2 margins, got {n}"
            )));
        }
        let mean = margins.iter().sum::<f64>() / n as f64;
        let var = margins.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            std: var.sqrt(),
            count: n,
            margins: keep.then(|| margins.to_vec()),
        })
    }

    /// `-mean / std`, the standardised distance of the mean margin from zero.
    pub fn z_score(&self) -> f64 {
        -self.mean / self.std
    }
}

/// Draws `count` perturbations from `ball` and summarises their margins.
#[allow(clippy::too_many_arguments)]
pub fn margin_stats<C, R>(
    model: &C,
    ball: &PerturbationBall,
    metric: RobustnessMetric,
    oracle: Option<&dyn GroundTruth>,
    count: usize,
    keep_margins: bool,
    rng: &mut R,
) -> Result<MarginStats>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    let h = MarginFn::new(model, ball.center(), metric, oracle)?;
    let margins = (0..count)
        .map(|_| h.eval(&ball.sample(rng)))
        .collect::<Result<Vec<_>>>()?;
    MarginStats::from_margins(&margins, keep_margins)
}
