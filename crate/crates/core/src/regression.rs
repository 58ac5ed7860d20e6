//! Ordinary least squares for the log-log calibration line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = intercept + slope * x + e`, with the statistics needed for
/// prediction intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub residual_std: f64,
    pub x_mean: f64,
    pub s_xx: f64,
    pub n_points: usize,
}

impl RegressionModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn fit_log_regression(points: &[(f64, f64)]) -> Result<RegressionModel> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Calibration(format!(
            "regression needs at least 3 points, got {n}"
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Calibration("regression points must be finite".into()));
    }
    let nf = n as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let s_xx: f64 = points.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    let s_xy: f64 = points.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    let s_yy: f64 = points.iter().map(|p| (p.1 - y_mean).powi(2)).sum();
    if !(s_xx > 0.0) {
        return Err(Error::Calibration("regressor has zero variance".into()));
    }
    let slope = s_xy / s_xx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if s_yy > 0.0 { (1.0 - ss_res / s_yy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RegressionModel {
        intercept,
        slope,
        r_squared,
        residual_std: (ss_res / (nf - 2.0)).sqrt(),
        x_mean,
        s_xx,
        n_points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line() {
        let pts: Vec<_> = (0..6).map(|i| (i as f64 * 0.5, i as f64 * 0.5)).collect();
        let r = fit_log_regression(&pts).unwrap();
        assert!(r.intercept.abs() < 1e-12);
        assert!((r.slope - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!(r.residual_std < 1e-12);
    }

    #[test]
    fn exact_line_through_three_points() {
        let r = fit_log_regression(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((r.intercept - 1.0).abs() < 1e-12);
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_log_regression(&[(0.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(fit_log_regression(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(fit_log_regression(&[(0.0, 1.0), (1.0, f64::NEG_INFINITY), (2.0, 3.0)]).is_err());
    }
}
