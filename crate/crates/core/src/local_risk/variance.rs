use crate::error::{Error, Result};
use crate::regression::RegressionModel;

/// Where a per-sample log-risk came from, and what is known about its spread.
#[derive(Debug, Clone, Copy)]
pub enum VarianceContext<'a> {
    /// Predicted by the calibration line at regressor value `x`.
    Predicted { regression: &'a RegressionModel, x: f64 },
    /// Measured by AMLS, possibly replicated over independent seeds.
    Amls {
        regression: &'a RegressionModel,
        replicate_log_risks: &'a [f64],
    },
}

/// Standard deviation (in log-risk units) attached to a curve entry.
///
/// Predicted entries get the regression prediction-interval standard deviation
/// `s * sqrt(1 + 1/n + (x - x_mean)^2 / S_xx)`. AMLS entries get the sample
/// standard deviation of their seed replicates, or the residual standard
/// deviation `s` when there is a single run.
pub fn variance_estimator(ctx: VarianceContext<'_>) -> Result<f64> {
    let regression = match ctx {
        VarianceContext::Predicted { regression, .. } | VarianceContext::Amls { regression, .. } => regression,
    };
    if regression.n_points < 3 {
        return Err(Error::InsufficientData(format!(
            "residual variance needs at least 3 calibration points, got {}",
            regression.n_points
        )));
    }
    match ctx {
        VarianceContext::Predicted { regression: r, x } => {
            let n = r.n_points as f64;
            let lever = if r.s_xx > 0.0 { (x - r.x_mean).powi(2) / r.s_xx } else { 0.0 };
            Ok(r.residual_std * (1.0 + 1.0 / n + lever).sqrt())
        }
        VarianceContext::Amls {
            regression: r,
            replicate_log_risks: reps,
        } => {
            if reps.len() >= 2 {
                let n = reps.len() as f64;
                let mean = reps.iter().sum::<f64>() / n;
                Ok((reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            } else {
                Ok(r.residual_std)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::fit_log_regression;

    #[test]
    fn perfect_fit_has_zero_spread() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let r = fit_log_regression(&pts).unwrap();
        let v = variance_estimator(VarianceContext::Predicted { regression: &r, x: 17.0 }).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn replicate_branch_is_sample_sd() {
        let pts = [(0.0, 0.0), (1.0, 1.1), (2.0, 1.9), (3.0, 3.2)];
        let r = fit_log_regression(&pts).unwrap();
        let reps = [-10.0, -11.0, -9.5, -10.5, -12.0];
        let v = variance_estimator(VarianceContext::Amls {
            regression: &r,
            replicate_log_risks: &reps,
        })
        .unwrap();
        let mean = -10.6;
        let expected = (reps.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0).sqrt();
        assert!((v - expected).abs() < 1e-12);
        let single = variance_estimator(VarianceContext::Amls {
            regression: &r,
            replicate_log_risks: &reps[..1],
        })
        .unwrap();
        assert_eq!(single, r.residual_std);
    }

    #[test]
    fn too_few_points() {
        let mut r = fit_log_regression(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.5)]).unwrap();
        r.n_points = 2;
        assert!(matches!(
            variance_estimator(VarianceContext::Predicted { regression: &r, x: 0.0 }),
            Err(Error::InsufficientData(_))
        ));
    }
}
