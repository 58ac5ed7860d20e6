//! Hoeffding sample sizes for PAC risk estimates.

use crate::error::{Error, Result};

/// Smallest `N` with `P(|p_hat - p| > epsilon) <= delta` for the mean of `N`
/// i.i.d. `[0, 1]`-valued draws: `ceil(ln(2 / delta) / (2 epsilon^2))`.
pub fn pac_sample_size(epsilon: f64, delta: f64) -> Result<u64> {
    for (name, v) in [("epsilon", epsilon), ("delta", delta)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Domain(format!("{name} must be in (0, 1], got {v}")));
        }
    }
    let n = (2.0 / delta).ln() / (2.0 * epsilon * epsilon);
    Ok(n.ceil() as u64)
}
