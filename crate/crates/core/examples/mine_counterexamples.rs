//! Mines counterexamples with AMLS and re-checks every one of them.

use ace_cert::distribution::ClassSelector;
use ace_cert::mine::{mine_generator, MineConfig};
use ace_cert::model::margin;
use ace_cert::rng::SeedStream;
use ace_cert::synthetic::SyntheticSetup;

fn main() -> ace_cert::error::Result<()> {
    let setup = SyntheticSetup::default();
    let (model, generator) = (setup.model(), setup.generator());
    let cfg = MineConfig {
        radius: 0.4,
        per_nominal: 3,
        ..MineConfig::default()
    };
    let records = mine_generator(&model, &generator, 20, ClassSelector::All, &cfg, &SeedStream::new(8))?;
    println!("{} counterexamples", records.len());
    for r in &records {
        let h = margin(&model, &r.nominal, &r.perturbed, r.metric, None)?;
        println!(
            "nominal {:>2}  ln p = {:>8.3}  class {} -> {}  h = {:.4}{}",
            r.nominal_index,
            r.nominal_log_p,
            r.nominal_prediction.index(),
            r.perturbed_prediction.index(),
            h,
            r.extreme.map(|e| format!("  [{e:?}]")).unwrap_or_default()
        );
    }
    Ok(())
}
