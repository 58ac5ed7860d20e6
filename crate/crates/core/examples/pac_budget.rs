//! Sample sizes for PAC guarantees on the global risk.

use ace_cert::pac::pac_sample_size;

fn main() -> ace_cert::error::Result<()> {
    println!("{:>8} {:>8} {:>10}", "epsilon", "delta", "N");
    for (eps, delta) in [(0.1, 0.05), (0.05, 0.05), (0.05, 0.01), (0.01, 0.05)] {
        println!("{eps:>8} {delta:>8} {:>10}", pac_sample_size(eps, delta)?);
    }
    Ok(())
}
