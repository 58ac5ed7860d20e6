//! Writes the built-in synthetic generator and network as JSON, ready for
//! the `ace` command line.
//!
//! ```bash
//! cargo run --example export_synthetic_assets -- crates/core/assets
//! ```

use std::path::PathBuf;

use ace_cert::synthetic::{linear_1d_generator, linear_1d_model, SyntheticSetup};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets".into()));
    std::fs::create_dir_all(&dir)?;
    let setup = SyntheticSetup::default();
    std::fs::write(dir.join("generator.json"), setup.generator().to_json())?;
    std::fs::write(dir.join("toy_mlp.json"), setup.model().to_json())?;
    std::fs::write(dir.join("line_generator.json"), linear_1d_generator().to_json())?;
    std::fs::write(dir.join("line_model.json"), linear_1d_model(0.0).to_json())?;
    println!("wrote synthetic assets to {}", dir.display());
    Ok(())
}
