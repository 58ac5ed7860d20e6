use rand::Rng;

use super::{EstimationMethod, LocalRiskEstimate};
use crate::distribution::PerturbationBall;
use crate::error::{Error, Result};
use crate::model::{is_violation, Classifier, GroundTruth, MarginFn, RobustnessMetric};

/// Fraction of `samples` uniform ball draws whose margin is non-negative.
pub fn naive_mc_local_risk<C, R>(
    model: &C,
    ball: &PerturbationBall,
    metric: RobustnessMetric,
    oracle: Option<&dyn GroundTruth>,
    samples: usize,
    rng: &mut R,
) -> Result<LocalRiskEstimate>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    if samples == 0 {
        return Err(Error::Config("naive Monte Carlo needs at least one draw".into()));
    }
    let h = MarginFn::new(model, ball.center(), metric, oracle)?;
    let mut hits = 0usize;
    for _ in 0..samples {
        if is_violation(h.eval(&ball.sample(rng))?) {
            hits += 1;
        }
    }
    let value = hits as f64 / samples as f64;
    Ok(LocalRiskEstimate {
        value,
        log_value: value.ln(),
        method: EstimationMethod::NaiveMc,
        std_error: Some((value * (1.0 - value) / samples as f64).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, DenseLayer, MlpModel};
    use crate::rng::{Domain, SeedStream};

    fn linear_split() -> MlpModel {
        // y = (x1, -x1)
        MlpModel::new(
            2,
            2,
            vec![DenseLayer::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 0.0], Activation::Identity)],
        )
        .unwrap()
    }

    #[test]
    fn constant_classifier_never_violates() {
        let constant = MlpModel::new(
            2,
            2,
            vec![DenseLayer::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 0.0], Activation::Identity)],
        )
        .unwrap();
        let ball = PerturbationBall::new(vec![0.3, -0.2], 1.0).unwrap();
        let mut rng = SeedStream::new(1).rng(Domain::Ball, 0);
        let est = naive_mc_local_risk(&constant, &ball, RobustnessMetric::M2, None, 1000, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, Some(0.0));
    }

    #[test]
    fn half_ball_violation() {
        // center predicts class 0 by tie-break; violation iff -2 x1 >= 0, i.e. x1 <= 0
        let ball = PerturbationBall::new(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = SeedStream::new(2).rng(Domain::Ball, 0);
        let est = naive_mc_local_risk(&linear_split(), &ball, RobustnessMetric::M2, None, 10_000, &mut rng).unwrap();
        let se = est.std_error.unwrap();
        assert!((est.value - 0.5).abs() <= 3.0 * se, "{} +- {}", est.value, se);
    }

    #[test]
    fn deep_interior_sees_nothing() {
        let ball = PerturbationBall::new(vec![50.0, 0.0], 1.0).unwrap();
        let mut rng = SeedStream::new(3).rng(Domain::Ball, 0);
        let est = naive_mc_local_risk(&linear_split(), &ball, RobustnessMetric::M2, None, 5000, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.log_value, f64::NEG_INFINITY);
    }
}
