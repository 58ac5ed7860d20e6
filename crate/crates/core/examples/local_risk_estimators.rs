//! Estimates one local risk three ways: naive Monte Carlo, the Gaussian
//! approximation of the margin, and adaptive multi-level splitting.

use ace_cert::distribution::{ClassSelector, PerturbationBall};
use ace_cert::local_risk::{local_amls, margin_stats, naive_mc_local_risk, param_est_local_risk, AmlsConfig};
use ace_cert::model::RobustnessMetric;
use ace_cert::rng::{Domain, SeedStream};
use ace_cert::synthetic::SyntheticSetup;

fn main() -> ace_cert::error::Result<()> {
    let setup = SyntheticSetup::default();
    let (model, generator) = (setup.model(), setup.generator());
    let seeds = SeedStream::new(5);
    let (x, _) = generator.sample_at(ClassSelector::All, &seeds, 0)?;
    let ball = PerturbationBall::new(x, 0.4)?;
    let m2 = RobustnessMetric::M2;

    let naive = naive_mc_local_risk(&model, &ball, m2, None, 100_000, &mut seeds.rng(Domain::Ball, 0))?;
    println!("naive MC (100k draws): p = {:.3e} +- {:.1e}", naive.value, naive.std_error.unwrap_or(0.0));

    let stats = margin_stats(&model, &ball, m2, None, 200, false, &mut seeds.rng(Domain::Ball, 1))?;
    let param = param_est_local_risk(&stats);
    println!("Gaussian margin (200 draws): mean {:.3}, sd {:.3}, p = {:.3e}", stats.mean, stats.std, param.value);

    let amls = local_amls(&model, &ball, m2, None, &AmlsConfig::default(), &mut seeds.rng(Domain::Amls, 0))?;
    println!(
        "AMLS: p = {:.3e} after {} levels ({:?}, {} forward passes)",
        amls.risk(),
        amls.levels.len(),
        amls.terminated,
        amls.forward_passes
    );
    Ok(())
}
