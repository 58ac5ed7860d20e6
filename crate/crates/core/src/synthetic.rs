//! Built-in synthetic problems.
//!
//! [`SyntheticSetup`] is a two-class hierarchical generator with a
//! nearest-template oracle, plus a small tanh network whose decision
//! direction only partly follows the true class signal. Its local risks
//! spread over many orders of magnitude, which is what the estimators are
//! compared on. Everything is built deterministically from `seed`; nothing is
//! trained.
//!
//! The one-dimensional constructions are used where exact answers are
//! needed: the generator is uniform on `[-1, 1]` with the true boundary at 0
//! and the model boundary at `b`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distribution::{ClassProgram, GeneratorSpec, Oracle, Stage};
use crate::model::{Activation, DenseLayer, MlpModel};
use crate::rng::{Domain, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSetup {
    pub dim: usize,
    pub latent_dim: usize,
    /// Class templates sit at `+-template_offset` on the first coordinate.
    pub template_offset: f64,
    /// Noise on the class coordinate.
    pub signal_noise: f64,
    /// Standard deviation of the latent style factors' effect per coordinate.
    pub style_scale: f64,
    /// Independent noise on the other coordinates.
    pub feature_noise: f64,
    pub hidden: usize,
    /// Share of the network's decision direction on the class coordinate.
    pub signal_share: f64,
    /// Spread of the hidden units' directions around the decision direction.
    pub jitter: f64,
    /// Scale of the hidden pre-activations.
    pub gain: f64,
    pub seed: u64,
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        Self {
            dim: 24,
            latent_dim: 4,
            template_offset: 1.0,
            signal_noise: 0.15,
            style_scale: 0.25,
            feature_noise: 0.05,
            hidden: 16,
            signal_share: 0.5,
            jitter: 0.3,
            gain: 1.0,
            seed: 2024,
        }
    }
}

impl SyntheticSetup {
    /// Radius at which the shipped configurations are run.
    pub const DEFAULT_RADIUS: f64 = 0.3;

    fn seeds(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    fn template(&self, class: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.dim];
        t[0] = if class == 0 { -self.template_offset } else { self.template_offset };
        t
    }

    /// Latent style `z ~ N(0, I)`, mapped into every coordinate but the first,
    /// shifted by the class template, plus independent noise.
    pub fn generator(&self) -> GeneratorSpec {
        let mut rng = self.seeds().rng(Domain::Validation, 0);
        let scale = self.style_scale / (self.latent_dim as f64).sqrt();
        let loadings: Vec<Vec<f64>> = (0..self.dim)
            .map(|k| {
                (0..self.latent_dim)
                    .map(|_| if k == 0 { 0.0 } else { scale * rng.sample::<f64, _>(StandardNormal) })
                    .collect()
            })
            .collect();
        let mut noise = vec![self.feature_noise; self.dim];
        noise[0] = self.signal_noise;
        let classes = (0..2)
            .map(|c| ClassProgram {
                stages: vec![
                    Stage::Gaussian {
                        mean: vec![0.0; self.latent_dim],
                        std: vec![1.0; self.latent_dim],
                    },
                    Stage::Affine {
                        matrix: loadings.clone(),
                        offset: self.template(c),
                    },
                    Stage::Gaussian {
                        mean: vec![0.0; self.dim],
                        std: noise.clone(),
                    },
                ],
            })
            .collect();
        GeneratorSpec::new(
            2,
            self.dim,
            classes,
            Some(Oracle::NearestTemplate {
                templates: vec![self.template(0), self.template(1)],
            }),
            (self.template_offset - 4.0 * self.signal_noise).max(0.0),
            None,
        )
        .expect("synthetic generator is valid")
    }

    /// One tanh layer around a fixed decision direction `w`, then a linear
    /// read-out with `y1 - y0` equal to the mean hidden activation.
    pub fn model(&self) -> MlpModel {
        let mut rng = self.seeds().rng(Domain::Validation, 1);
        let mut w: Vec<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        w[0] = 0.0;
        let rest = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let off = (1.0 - self.signal_share * self.signal_share).sqrt() / rest;
        w.iter_mut().for_each(|v| *v *= off);
        w[0] = self.signal_share;

        let mut weights = Vec::with_capacity(self.hidden);
        let mut bias = Vec::with_capacity(self.hidden);
        for _ in 0..self.hidden {
            let row: Vec<f64> = w
                .iter()
                .map(|wk| self.gain * (wk + self.jitter / (self.dim as f64).sqrt() * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            weights.push(row);
            bias.push(0.1 * self.gain * rng.sample::<f64, _>(StandardNormal));
        }
        let a = 0.5 / self.hidden as f64;
        let readout = vec![vec![-a; self.hidden], vec![a; self.hidden]];
        MlpModel::new(
            self.dim,
            2,
            vec![
                DenseLayer::new(weights, bias, Activation::Tanh),
                DenseLayer::new(readout, vec![0.0, 0.0], Activation::Identity),
            ],
        )
        .expect("synthetic model is valid")
    }
}

/// Class 0 uniform on `[-1, 0]`, class 1 uniform on `[0, 1]`, true boundary
/// at 0.
pub fn linear_1d_generator() -> GeneratorSpec {
    let class = |lo: f64, hi: f64| ClassProgram {
        stages: vec![Stage::Uniform { lo: vec![lo], hi: vec![hi] }],
    };
    GeneratorSpec::new(
        2,
        1,
        vec![class(-1.0, 0.0), class(0.0, 1.0)],
        Some(Oracle::NearestTemplate {
            templates: vec![vec![-1.0], vec![1.0]],
        }),
        0.0,
        None,
    )
    .expect("1-D generator is valid")
}

/// Scores `(b - x, x - b)`: predicts class 1 for `x > b`.
pub fn linear_1d_model(b: f64) -> MlpModel {
    MlpModel::new(
        1,
        2,
        vec![DenseLayer::new(vec![vec![-1.0], vec![1.0]], vec![b, -b], Activation::Identity)],
    )
    .expect("1-D model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{sample_nominal, ClassSelector};
    use crate::model::{Classifier, Label};

    #[test]
    fn deterministic_construction() {
        let s = SyntheticSetup::default();
        assert_eq!(s.model(), s.model());
        assert_eq!(s.generator(), s.generator());
        assert_ne!(s.model(), SyntheticSetup { seed: 1, ..s.clone() }.model());
    }

    #[test]
    fn nominals_stay_clear_of_the_true_boundary() {
        let s = SyntheticSetup::default();
        let g = s.generator();
        let batch = sample_nominal(&g, ClassSelector::All, 20_000, &SeedStream::new(3)).unwrap();
        let near = batch
            .nominals
            .iter()
            .filter(|(x, _)| g.ball_reaches_truth_boundary(x, SyntheticSetup::DEFAULT_RADIUS).unwrap())
            .count();
        assert!((near as f64) / 20_000.0 < 1e-3, "{near}");
        let agree = batch.nominals.iter().filter(|(x, c)| g.ground_truth(x).unwrap() == *c).count();
        assert!(agree as f64 / 20_000.0 > 0.999);
    }

    #[test]
    fn model_is_mostly_accurate() {
        let s = SyntheticSetup::default();
        let (g, m) = (s.generator(), s.model());
        let batch = sample_nominal(&g, ClassSelector::All, 2000, &SeedStream::new(4)).unwrap();
        let right = batch.nominals.iter().filter(|(x, c)| m.predict(x).unwrap() == *c).count();
        assert!(right as f64 / 2000.0 > 0.9, "{right}");
    }

    #[test]
    fn one_dimensional_construction() {
        let m = linear_1d_model(0.25);
        assert_eq!(m.predict(&[0.3]).unwrap(), Label(1));
        assert_eq!(m.predict(&[0.2]).unwrap(), Label(0));
        let g = linear_1d_generator();
        assert_eq!(g.ground_truth(&[-0.01]).unwrap(), Label(0));
        assert_eq!(g.ground_truth(&[0.01]).unwrap(), Label(1));
    }
}
