//! Splits the robustness risk into classification and boundary parts on the
//! one-dimensional construction, where the model boundary sits at 0.2 and
//! the true one at 0.

use ace_cert::decomposition::decomposition_check;
use ace_cert::rng::SeedStream;
use ace_cert::synthetic::{linear_1d_generator, linear_1d_model};

fn main() -> ace_cert::error::Result<()> {
    let report = decomposition_check(&linear_1d_model(0.2), &linear_1d_generator(), 5000, 100, 0.1, &SeedStream::new(3))?;
    println!("R_c  = {:.4}", report.r_c);
    println!("R_b  = {:.4}", report.r_b);
    println!("R_gb = {:.4}", report.r_gb);
    for (name, v) in [("m0", report.r_rob_m0), ("m1", report.r_rob_m1), ("m2", report.r_rob_m2)] {
        println!("R_rob({name}) = {v:.4}");
    }
    println!(
        "m1 residual {:+.4} (se {:.4}), m2 residual {:+.4}",
        report.residuals.m1_equality, report.standard_errors.m1_equality, report.residuals.m2_inequality
    );
    println!("equality holds: {}, inequality holds: {}", report.m1_equality_holds(3.0), report.m2_inequality_holds(3.0));
    Ok(())
}
