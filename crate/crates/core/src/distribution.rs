//! Generative input distributions and perturbation balls.
//!
//! A [`GeneratorSpec`] is a small hierarchical probabilistic program: each
//! class owns a list of stages that are executed in order, each one
//! transforming the latent state produced by the previous one. The generator also
//! carries an analytic ground-truth oracle so that accuracy-based metrics and
//! boundary risks can be evaluated exactly.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, Label};
use crate::rng::{Domain, SeedStream};

/// One step of a class program.
///
/// `Gaussian` and `Uniform` add noise to the current state (a zero vector of
/// their own dimension when they come first); `Affine` maps the state through
/// `matrix * state + offset`; `Clamp` bounds every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Stage {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    Clamp { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProgram {
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Oracle {
    /// `c(x)` is the index of the closest template in Euclidean distance,
    /// ties going to the lowest index.
    NearestTemplate { templates: Vec<Vec<f64>> },
}

/// Which class to draw nominal samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassSelector {
    #[default]
    All,
    Class(Label),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGenerator")]
pub struct GeneratorSpec {
    pub class_count: usize,
    pub output_dim: usize,
    pub classes: Vec<ClassProgram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Oracle>,
    pub separation_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawGenerator {
    class_count: usize,
    output_dim: usize,
    classes: Vec<ClassProgram>,
    #[serde(default)]
    oracle: Option<Oracle>,
    #[serde(default)]
    separation_margin: f64,
    #[serde(default)]
    class_weights: Option<Vec<f64>>,
}

impl TryFrom<RawGenerator> for GeneratorSpec {
    type Error = Error;

    fn try_from(r: RawGenerator) -> Result<Self> {
        GeneratorSpec::new(
            r.class_count,
            r.output_dim,
            r.classes,
            r.oracle,
            r.separation_margin,
            r.class_weights,
        )
    }
}

fn program_output_dim(k: usize, program: &ClassProgram) -> Result<usize> {
    let bad = |msg: String| Error::Config(format!("class {k}: {msg}"));
    let mut dim = 0usize;
    for (s, stage) in program.stages.iter().enumerate() {
        match stage {
            Stage::Gaussian { mean, std } => {
                if mean.len() != std.len() {
                    return Err(bad(format!("stage {s}: mean and std lengths differ")));
                }
                if let Some(v) = std.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(bad(format!("stage {s}: stddev {v} must be positive")));
                }
                if dim != 0 && mean.len() != dim {
                    return Err(bad(format!("stage {s}: expects dim {dim}, has {}", mean.len())));
                }
                dim = mean.len();
            }
            Stage::Uniform { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(bad(format!("stage {s}: lo and hi lengths differ")));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(bad(format!("stage {s}: every lo must be below hi")));
                }
                if dim != 0 && lo.len() != dim {
                    return Err(bad(format!("stage {s}: expects dim {dim}, has {}", lo.len())));
                }
                dim = lo.len();
            }
            Stage::Affine { matrix, offset } => {
                if matrix.len() != offset.len() {
                    return Err(bad(format!("stage {s}: matrix rows and offset differ")));
                }
                if matrix.iter().any(|row| row.len() != dim) {
                    return Err(bad(format!("stage {s}: matrix must have {dim} columns")));
                }
                dim = matrix.len();
            }
            Stage::Clamp { lo, hi } => {
                if !(lo < hi) {
                    return Err(bad(format!("stage {s}: clamp needs lo < hi")));
                }
            }
        }
        if dim == 0 {
            return Err(bad(format!("stage {s} leaves the state empty")));
        }
    }
    Ok(dim)
}

impl GeneratorSpec {
    pub fn new(
        class_count: usize,
        output_dim: usize,
        classes: Vec<ClassProgram>,
        oracle: Option<Oracle>,
        separation_margin: f64,
        class_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let spec = GeneratorSpec {
            class_count,
            output_dim,
            classes,
            oracle,
            separation_margin,
            class_weights,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.classes.len() != self.class_count {
            return Err(Error::Config(format!(
                "class_count is {} but {} class programs are given",
                self.class_count,
                self.classes.len()
            )));
        }
        for (k, program) in self.classes.iter().enumerate() {
            let dim = program_output_dim(k, program)?;
            if dim != self.output_dim {
                return Err(Error::Config(format!(
                    "class {k} produces dimension {dim}, expected {}",
                    self.output_dim
                )));
            }
        }
        if let Some(Oracle::NearestTemplate { templates }) = &self.oracle {
            if templates.len() != self.class_count {
                return Err(Error::Config("oracle needs one template per class".into()));
            }
            if templates.iter().any(|t| t.len() != self.output_dim) {
                return Err(Error::Config("oracle templates must match output_dim".into()));
            }
        }
        if !(self.separation_margin >= 0.0) {
            return Err(Error::Config("separation_margin must be nonnegative".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.class_count
                || w.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
                || w.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::Config("class_weights must be nonnegative, one per class".into()));
            }
        }
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("generator serializes")
    }

    pub fn has_oracle(&self) -> bool {
        self.oracle.is_some()
    }

    /// Runs class `class`'s program once.
    pub fn sample_class<R: Rng + ?Sized>(&self, class: Label, rng: &mut R) -> Result<Vec<f64>> {
        let program = self.classes.get(class.0).ok_or(Error::ClassOutOfRange {
            index: class.0,
            count: self.class_count,
        })?;
        let mut state: Vec<f64> = Vec::new();
        for stage in &program.stages {
            match stage {
                Stage::Gaussian { mean, std } => {
                    state.resize(mean.len(), 0.0);
                    for ((v, m), s) in state.iter_mut().zip(mean).zip(std) {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += m + s * z;
                    }
                }
                Stage::Uniform { lo, hi } => {
                    state.resize(lo.len(), 0.0);
                    for ((v, l), h) in state.iter_mut().zip(lo).zip(hi) {
                        *v += rng.random_range(*l..*h);
                    }
                }
                Stage::Affine { matrix, offset } => {
                    state = matrix
                        .iter()
                        .zip(offset)
                        .map(|(row, o)| row.iter().zip(&state).map(|(a, x)| a * x).sum::<f64>() + o)
                        .collect();
                }
                Stage::Clamp { lo, hi } => {
                    for v in state.iter_mut() {
                        *v = v.clamp(*lo, *hi);
                    }
                }
            }
        }
        Ok(state)
    }

    fn pick_class<R: Rng + ?Sized>(&self, rng: &mut R) -> Label {
        let u: f64 = rng.random();
        match &self.class_weights {
            None => Label(((u * self.class_count as f64) as usize).min(self.class_count - 1)),
            Some(w) => {
                let total: f64 = w.iter().sum();
                let mut acc = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk / total;
                    if u < acc {
                        return Label(k);
                    }
                }
                Label(w.iter().rposition(|v| *v > 0.0).unwrap_or(0))
            }
        }
    }

    /// Nominal sample number `index` of the stream, with its class.
    pub fn sample_at(&self, class: ClassSelector, seeds: &SeedStream, index: u64) -> Result<(Vec<f64>, Label)> {
        let mut rng = seeds.rng(Domain::Nominal, index);
        let label = match class {
            ClassSelector::All => self.pick_class(&mut rng),
            ClassSelector::Class(l) => l,
        };
        Ok((self.sample_class(label, &mut rng)?, label))
    }

    /// `c(x)` from the declared oracle.
    pub fn ground_truth(&self, x: &[f64]) -> Result<Label> {
        match &self.oracle {
            None => Err(Error::Config("generator declares no ground-truth oracle".into())),
            Some(Oracle::NearestTemplate { templates }) => {
                if x.len() != self.output_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.output_dim,
                        got: x.len(),
                    });
                }
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (k, t) in templates.iter().enumerate() {
                    let d: f64 = t.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best = k;
                        best_d = d;
                    }
                }
                Ok(Label(best))
            }
        }
    }

    /// Whether the l-infinity ball `B(x, r)` reaches a ground-truth boundary,
    /// decided exactly: the nearest-template regions are polyhedra, so each
    /// pairwise comparison is linear and its extreme over the box is attained
    /// at a corner.
    pub fn ball_reaches_truth_boundary(&self, x: &[f64], r: f64) -> Result<bool> {
        let Some(Oracle::NearestTemplate { templates }) = &self.oracle else {
            return Err(Error::Config("generator declares no ground-truth oracle".into()));
        };
        let i = self.ground_truth(x)?.0;
        let ti = &templates[i];
        for (j, tj) in templates.iter().enumerate() {
            if j == i {
                continue;
            }
            // |x'-ti|^2 - |x'-tj|^2 = 2 x'.(tj-ti) + |ti|^2 - |tj|^2 ; >= 0 means tj is at least as close
            let mut g = 0.0;
            let mut reach = 0.0;
            for k in 0..x.len() {
                let d = tj[k] - ti[k];
                g += 2.0 * x[k] * d + ti[k] * ti[k] - tj[k] * tj[k];
                reach += 2.0 * r * d.abs();
            }
            if g + reach >= 0.0 {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

impl GroundTruth for GeneratorSpec {
    fn ground_truth(&self, x: &[f64]) -> Result<Label> {
        GeneratorSpec::ground_truth(self, x)
    }
}

/// Nominal samples `g_1 .. g_N` with their generating classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub nominals: Vec<(Vec<f64>, Label)>,
    pub seed: u64,
}

/// Draws `count` i.i.d. nominal samples; sample `i` uses stream `i`.
pub fn sample_nominal(
    generator: &GeneratorSpec,
    class: ClassSelector,
    count: usize,
    seeds: &SeedStream,
) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if let ClassSelector::Class(l) = class {
        if l.0 >= generator.class_count {
            return Err(Error::ClassOutOfRange {
                index: l.0,
                count: generator.class_count,
            });
        }
    }
    let nominals = (0..count as u64)
        .map(|i| generator.sample_at(class, seeds, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleBatch {
        nominals,
        seed: seeds.master(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
}

/// The neighbourhood `B(x, r)`, optionally intersected with an input domain
/// box `[lo, hi]^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBall {
    center: Vec<f64>,
    radius: f64,
    norm: Norm,
    domain: Option<(f64, f64)>,
}

impl PerturbationBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("ball radius must be positive, got {radius}")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("ball center has non-finite entries".into()));
        }
        Ok(Self {
            center,
            radius,
            norm: Norm::Linf,
            domain: None,
        })
    }

    /// Restricts the ball to the box `[lo, hi]` in every coordinate.
    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config("domain needs lo < hi".into()));
        }
        if self.center.iter().any(|c| *c < lo || *c > hi) {
            return Err(Error::Domain("ball center lies outside the input domain".into()));
        }
        self.domain = Some((lo, hi));
        Ok(self)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Coordinate-wise support `[lo, hi]` of the ball.
    pub fn bounds(&self, k: usize) -> (f64, f64) {
        let c = self.center[k];
        let (mut lo, mut hi) = (c - self.radius, c + self.radius);
        if let Some((dlo, dhi)) = self.domain {
            lo = lo.max(dlo);
            hi = hi.min(dhi);
        }
        (lo, hi)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.center.len()
            && x.iter().zip(&self.center).all(|(v, c)| (v - c).abs() <= self.radius)
            && self
                .domain
                .is_none_or(|(lo, hi)| x.iter().all(|v| *v >= lo && *v <= hi))
    }

    /// Moves a coordinate that rounding pushed past the ball surface back
    /// inside, one ulp at a time.
    pub(crate) fn snap(&self, k: usize, mut v: f64) -> f64 {
        if let Some((lo, hi)) = self.domain {
            v = v.clamp(lo, hi);
        }
        let c = self.center[k];
        while (v - c).abs() > self.radius {
            v = if v > c { v.next_down() } else { v.next_up() };
        }
        v
    }

    /// Folds `v` back into coordinate `k`'s support by mirroring at its faces.
    /// A symmetric random-walk step followed by this fold is still symmetric.
    pub(crate) fn reflect(&self, k: usize, v: f64) -> f64 {
        let (lo, hi) = self.bounds(k);
        let width = hi - lo;
        if width <= 0.0 {
            return lo;
        }
        let mut y = (v - lo).rem_euclid(2.0 * width);
        if y > width {
            y = 2.0 * width - y;
        }
        self.snap(k, lo + y)
    }

    /// One uniform draw from the ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let (lo, hi) = self.bounds(k);
                let u: f64 = rng.random();
                self.snap(k, lo + (hi - lo) * u)
            })
            .collect()
    }
}

/// `count` i.i.d. uniform draws from the ball.
pub fn sample_ball<R: Rng + ?Sized>(ball: &PerturbationBall, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| ball.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_gaussian() -> GeneratorSpec {
        GeneratorSpec {
            class_count: 1,
            output_dim: 2,
            classes: vec![ClassProgram {
                stages: vec![Stage::Gaussian {
                    mean: vec![0.0, 0.0],
                    std: vec![1.0, 1.0],
                }],
            }],
            oracle: None,
            separation_margin: 0.0,
            class_weights: None,
        }
    }

    fn two_templates() -> GeneratorSpec {
        let class = |m: f64| ClassProgram {
            stages: vec![Stage::Gaussian {
                mean: vec![m, 0.0],
                std: vec![0.5, 0.5],
            }],
        };
        GeneratorSpec {
            class_count: 2,
            output_dim: 2,
            classes: vec![class(-5.0), class(5.0)],
            oracle: Some(Oracle::NearestTemplate {
                templates: vec![vec![-5.0, 0.0], vec![5.0, 0.0]],
            }),
            separation_margin: 5.0,
            class_weights: None,
        }
    }

    #[test]
    fn determinism_and_distinct_draws() {
        let g = single_gaussian();
        let s = SeedStream::new(9);
        let a = sample_nominal(&g, ClassSelector::All, 3, &s).unwrap();
        let b = sample_nominal(&g, ClassSelector::All, 3, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.nominals[0].0, a.nominals[1].0);
        assert_ne!(a.nominals[1].0, a.nominals[2].0);
    }

    #[test]
    fn clamp_stage_bounds_output() {
        let mut g = single_gaussian();
        g.classes[0].stages.push(Stage::Clamp { lo: 0.0, hi: 1.0 });
        let b = sample_nominal(&g, ClassSelector::All, 500, &SeedStream::new(1)).unwrap();
        assert!(b.nominals.iter().flat_map(|(x, _)| x).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn affine_stage_maps_dimension() {
        let g = GeneratorSpec {
            class_count: 1,
            output_dim: 3,
            classes: vec![ClassProgram {
                stages: vec![
                    Stage::Uniform { lo: vec![0.0], hi: vec![1.0] },
                    Stage::Affine {
                        matrix: vec![vec![1.0], vec![2.0], vec![0.0]],
                        offset: vec![0.0, 0.0, 7.0],
                    },
                ],
            }],
            oracle: None,
            separation_margin: 0.0,
            class_weights: None,
        };
        g.validate().unwrap();
        let (x, _) = g.sample_at(ClassSelector::All, &SeedStream::new(3), 0).unwrap();
        assert_eq!(x.len(), 3);
        assert!((x[1] - 2.0 * x[0]).abs() < 1e-15);
        assert_eq!(x[2], 7.0);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut g = single_gaussian();
        g.classes[0].stages = vec![Stage::Gaussian { mean: vec![0.0], std: vec![0.0] }];
        assert!(g.validate().is_err());
        let mut g = single_gaussian();
        g.output_dim = 3;
        assert!(g.validate().is_err());
        let mut g = single_gaussian();
        g.classes[0].stages = vec![Stage::Uniform { lo: vec![1.0, 0.0], hi: vec![1.0, 1.0] }];
        assert!(g.validate().is_err());
        let text = r#"{"class_count": 2, "output_dim": 1, "classes": [{"stages": []}]}"#;
        assert!(serde_json::from_str::<GeneratorSpec>(text).is_err());
    }

    #[test]
    fn class_out_of_range() {
        let g = two_templates();
        let err = sample_nominal(&g, ClassSelector::Class(Label(2)), 1, &SeedStream::new(0)).unwrap_err();
        assert!(matches!(err, Error::ClassOutOfRange { index: 2, count: 2 }));
    }

    #[test]
    fn ground_truth_examples() {
        let g = two_templates();
        assert_eq!(g.ground_truth(&[-5.0, 0.0]).unwrap(), Label(0));
        assert_eq!(g.ground_truth(&[0.0, 0.0]).unwrap(), Label(0));
        assert_eq!(g.ground_truth(&[0.1, 3.0]).unwrap(), Label(1));
    }

    #[test]
    fn class_conditioning() {
        let g = two_templates();
        let b = sample_nominal(&g, ClassSelector::Class(Label(1)), 200, &SeedStream::new(5)).unwrap();
        assert!(b.nominals.iter().all(|(x, l)| *l == Label(1) && x[0] > 0.0));
    }

    #[test]
    fn boundary_reach_is_exact_for_templates() {
        let g = two_templates();
        assert!(!g.ball_reaches_truth_boundary(&[-0.5, 0.0], 0.49).unwrap());
        assert!(g.ball_reaches_truth_boundary(&[-0.5, 0.0], 0.5).unwrap());
        assert!(g.ball_reaches_truth_boundary(&[0.3, 9.0], 0.31).unwrap());
    }

    #[test]
    fn ball_support_and_degenerate_radius() {
        let mut rng = SeedStream::new(2).rng(Domain::Ball, 0);
        let ball = PerturbationBall::new(vec![0.0, 0.0], 1.0).unwrap();
        for x in sample_ball(&ball, 1000, &mut rng) {
            assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let c = vec![1.0, -3.7, 12345.678];
        let tiny = PerturbationBall::new(c.clone(), 1e-12).unwrap();
        for x in sample_ball(&tiny, 1000, &mut rng) {
            assert!(tiny.contains(&x));
            assert!(x.iter().zip(&c).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
        assert!(PerturbationBall::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn domain_restricted_ball() {
        let ball = PerturbationBall::new(vec![0.05, 0.5], 0.1)
            .unwrap()
            .with_domain(0.0, 1.0)
            .unwrap();
        let mut rng = SeedStream::new(4).rng(Domain::Ball, 0);
        for x in sample_ball(&ball, 500, &mut rng) {
            assert!(ball.contains(&x));
            assert!(x[0] >= 0.0);
        }
    }
}
