//! A small equal-budget comparison of naive Monte Carlo, AMLS alone and ACE.
//! The full 30-repetition run is `ace bench --config assets/bench.toml`.

use ace_cert::bench::{run_bench, BenchConfig};
use ace_cert::synthetic::SyntheticSetup;

fn main() -> ace_cert::error::Result<()> {
    let setup = SyntheticSetup::default();
    let cfg = BenchConfig {
        repetitions: 5,
        budget: 300_000,
        ..BenchConfig::default()
    };
    let table = run_bench(&setup.model(), &setup.generator(), &cfg)?;
    table.write_csv(std::io::stdout())?;
    Ok(())
}
