//! Loads a network, runs a forward pass and evaluates the margin under each
//! robustness metric.

use ace_cert::model::{margin, Classifier, RobustnessMetric};
use ace_cert::synthetic::SyntheticSetup;

fn main() -> ace_cert::error::Result<()> {
    let setup = SyntheticSetup::default();
    let (model, generator) = (setup.model(), setup.generator());

    let mut x = vec![0.0; setup.dim];
    x[0] = 0.4;
    let scores = model.scores(&x)?;
    println!("scores {:?} -> class {}", scores.as_slice(), scores.argmax().index());

    let mut nudged = x.clone();
    nudged[0] -= 0.7;
    for metric in RobustnessMetric::ALL {
        let h = margin(&model, &x, &nudged, metric, Some(&generator))?;
        println!("{metric}: h = {h:+.4}{}", if h >= 0.0 { "  (violation)" } else { "" });
    }
    Ok(())
}
