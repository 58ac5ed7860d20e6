use super::{EstimationMethod, LocalRiskEstimate, MarginStats};
use crate::normal;

/// Local risk under the assumption that margins are `N(mean, std^2)`:
/// `P(N(0,1) > -mean/std)`, with the log computed directly so that extreme
/// tails stay finite. A zero `std` is treated as a point mass at `mean`.
pub fn param_est_local_risk(stats: &MarginStats) -> LocalRiskEstimate {
    let (value, log_value) = if stats.std == 0.0 {
        if stats.mean < 0.0 {
            (0.0, f64::NEG_INFINITY)
        } else {
            (1.0, 0.0)
        }
    } else {
        let k = stats.z_score();
        let log_value = normal::log_upper_tail(k);
        (log_value.exp(), log_value)
    };
    LocalRiskEstimate {
        value,
        log_value,
        method: EstimationMethod::ParamEst,
        std_error: None,
    }
}
