//! Runs the full certification pipeline on the synthetic problem and prints
//! the cumulative robustness curve at a few thresholds.

use ace_cert::certify::{run_certification, CertificationConfig};
use ace_cert::synthetic::SyntheticSetup;

fn main() -> ace_cert::error::Result<()> {
    let setup = SyntheticSetup::default();
    let cfg = CertificationConfig {
        n: 300,
        n0: 40,
        radius: SyntheticSetup::DEFAULT_RADIUS,
        t_values: vec![1e-2, 1e-5, 1e-10],
        seed: 1,
        ..CertificationConfig::default()
    };
    let report = run_certification(&setup.model(), &setup.generator(), &cfg)?;

    let r = &report.regression;
    println!("calibration: ln p = {:.3} + {:.3} x, r2 = {:.3}", r.intercept, r.slope, r.r_squared);
    for c in &report.criterion_results {
        println!(
            "R({:e}) = {:.4}  (se {:.1e})  criterion {}",
            c.t,
            c.curve_value,
            c.curve_std_error.unwrap_or(f64::NAN),
            if c.satisfied { "met" } else { "not met" }
        );
    }
    println!("{} forward passes", report.budget.total);
    Ok(())
}
