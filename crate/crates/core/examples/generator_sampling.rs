//! Draws nominal samples from the hierarchical generator and checks them
//! against its ground-truth oracle.

use ace_cert::distribution::{sample_nominal, ClassSelector, PerturbationBall};
use ace_cert::model::Label;
use ace_cert::rng::{Domain, SeedStream};
use ace_cert::synthetic::SyntheticSetup;

fn main() -> ace_cert::error::Result<()> {
    let generator = SyntheticSetup::default().generator();
    let seeds = SeedStream::new(11);

    let batch = sample_nominal(&generator, ClassSelector::Class(Label(1)), 5, &seeds)?;
    for (x, class) in &batch.nominals {
        println!("class {} x0 = {:+.3} oracle = {}", class.index(), x[0], generator.ground_truth(x)?.index());
    }

    // Perturbations live in an l-infinity ball around a nominal point.
    let (x, _) = &batch.nominals[0];
    let ball = PerturbationBall::new(x.clone(), 0.3)?;
    let mut rng = seeds.rng(Domain::Ball, 0);
    let p = ball.sample(&mut rng);
    let dist = p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("perturbation at l-inf distance {dist:.3}, inside: {}", ball.contains(&p));
    Ok(())
}
