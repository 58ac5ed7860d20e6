//! Black-box classifiers, the built-in MLP, and the margin function.
//!
//! A classifier maps an input vector to pre-softmax class scores. The margin
//! `h(x, x') = max_{j != i} y_j(x') - y_i(x')` compares the reference class
//! `i` against its strongest competitor; which class is the reference depends
//! on the robustness metric. A perturbed point violates the metric iff
//! `h >= 0`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A class index in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Pre-softmax scores `y_1(x) .. y_n(x)`: at least two entries, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidScores(format!(
                "need at least 2 classes, got {}",
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidScores(format!(
                "score {i} is not finite ({})",
                scores[i]
            )));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the greatest score; ties go to the lowest index.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        Label(best)
    }

    /// `max_{j != reference} y_j - y_reference`.
    pub fn margin_against(&self, reference: Label) -> f64 {
        let i = reference.0;
        let competitor = self
            .0
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        competitor - self.0[i]
    }
}

/// Anything that produces class scores for an input vector.
///
/// Implementations must be pure: the same input always yields the same
/// scores, and calls may come from many threads at once.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn scores(&self, x: &[f64]) -> Result<ScoreVector>;

    fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(self.scores(x)?.argmax())
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn scores(&self, x: &[f64]) -> Result<ScoreVector> {
        (**self).scores(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

/// Dense layer computing `activation(W x + b)`; `W` is stored row-major with
/// one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Self {
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    fn apply_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.iter().zip(&self.bias).map(|(row, b)| {
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
            self.activation.apply(z)
        }));
    }
}

/// Feed-forward network of dense layers with 64-bit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct MlpModel {
    input_dim: usize,
    num_classes: usize,
    layers: Vec<DenseLayer>,
}

#[derive(Deserialize)]
struct RawMlp {
    input_dim: usize,
    num_classes: usize,
    layers: Vec<DenseLayer>,
}

impl TryFrom<RawMlp> for MlpModel {
    type Error = Error;

    fn try_from(raw: RawMlp) -> Result<Self> {
        MlpModel::new(raw.input_dim, raw.num_classes, raw.layers)
    }
}

impl MlpModel {
    pub fn new(input_dim: usize, num_classes: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.is_empty() {
                return Err(Error::Config(format!("layer {k} has no output units")));
            }
            if let Some(r) = layer.weights.iter().position(|row| row.len() != width) {
                return Err(Error::Config(format!(
                    "layer {k} row {r} has {} columns, expected {width}",
                    layer.weights[r].len()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Config(format!(
                    "layer {k} bias has {} entries, expected {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            let finite = layer.weights.iter().flatten().chain(&layer.bias).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Config(format!("layer {k} has non-finite parameters")));
            }
            width = layer.out_dim();
        }
        if width != num_classes {
            return Err(Error::Config(format!(
                "last layer produces {width} scores, expected {num_classes}"
            )));
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Config(
                "last layer must use the identity activation (scores are pre-softmax)".into(),
            ));
        }
        Ok(Self {
            input_dim,
            num_classes,
            layers,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Pre-softmax scores for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<ScoreVector> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("input contains non-finite entries".into()));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        ScoreVector::new(cur)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }
    fn scores(&self, x: &[f64]) -> Result<ScoreVector> {
        self.forward(x)
    }
}

/// Wraps a scoring closure as a classifier; handy for analytic test problems.
pub struct FnClassifier<F> {
    input_dim: usize,
    num_classes: usize,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(input_dim: usize, num_classes: usize, f: F) -> Self {
        Self {
            input_dim,
            num_classes,
            f,
        }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }
    fn scores(&self, x: &[f64]) -> Result<ScoreVector> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let s = ScoreVector::new((self.f)(x))?;
        if s.len() != self.num_classes {
            return Err(Error::InvalidScores(format!(
                "closure returned {} scores, expected {}",
                s.len(),
                self.num_classes
            )));
        }
        Ok(s)
    }
}

/// Counts every forward pass made through it.
pub struct CountingClassifier<'a, C: ?Sized> {
    inner: &'a C,
    passes: AtomicU64,
}

impl<'a, C: Classifier + ?Sized> CountingClassifier<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        Self {
            inner,
            passes: AtomicU64::new(0),
        }
    }

    pub fn passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }
}

impl<C: Classifier + ?Sized> Classifier for CountingClassifier<'_, C> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn scores(&self, x: &[f64]) -> Result<ScoreVector> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        self.inner.scores(x)
    }
}

/// The ground-truth labelling function `c(x)`.
pub trait GroundTruth: Sync {
    fn ground_truth(&self, x: &[f64]) -> Result<Label>;
}

impl<F> GroundTruth for F
where
    F: Fn(&[f64]) -> Label + Sync,
{
    fn ground_truth(&self, x: &[f64]) -> Result<Label> {
        Ok(self(x))
    }
}

/// Which label a perturbed point must keep.
///
/// `M0`: the true label of the perturbed point. `M1`: the true label of the
/// nominal point. `M2`: the model's prediction at the nominal point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustnessMetric {
    M0,
    M1,
    M2,
}

impl RobustnessMetric {
    pub const ALL: [RobustnessMetric; 3] = [Self::M0, Self::M1, Self::M2];

    pub fn needs_oracle(self) -> bool {
        !matches!(self, RobustnessMetric::M2)
    }
}

impl fmt::Display for RobustnessMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RobustnessMetric::M0 => "m0",
            RobustnessMetric::M1 => "m1",
            RobustnessMetric::M2 => "m2",
        })
    }
}

impl FromStr for RobustnessMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m0" => Ok(Self::M0),
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            other => Err(Error::Config(format!(
                "unknown robustness metric {other:?} (expected m0, m1 or m2)"
            ))),
        }
    }
}

enum Reference<'a> {
    Fixed(Label),
    PerPoint(&'a dyn GroundTruth),
}

/// The margin function `x' -> h(x, x', m)` for one nominal point.
///
/// Construction resolves the reference class once (one forward pass for
/// `M2`, one oracle call for `M1`); every `eval` is one forward pass.
pub struct MarginFn<'a, C: ?Sized> {
    model: &'a C,
    reference: Reference<'a>,
    metric: RobustnessMetric,
}

impl<'a, C: Classifier + ?Sized> MarginFn<'a, C> {
    pub fn new(
        model: &'a C,
        x_nominal: &[f64],
        metric: RobustnessMetric,
        oracle: Option<&'a dyn GroundTruth>,
    ) -> Result<Self> {
        let reference = match (metric, oracle) {
            (RobustnessMetric::M2, _) => Reference::Fixed(model.predict(x_nominal)?),
            (RobustnessMetric::M1, Some(o)) => Reference::Fixed(o.ground_truth(x_nominal)?),
            (RobustnessMetric::M0, Some(o)) => Reference::PerPoint(o),
            (_, None) => {
                return Err(Error::UnsupportedMetric {
                    metric,
                    reason: "a ground-truth oracle is required",
                })
            }
        };
        if let Reference::Fixed(l) = reference {
            if l.0 >= model.num_classes() {
                return Err(Error::ClassOutOfRange {
                    index: l.0,
                    count: model.num_classes(),
                });
            }
        }
        Ok(Self {
            model,
            reference,
            metric,
        })
    }

    pub fn metric(&self) -> RobustnessMetric {
        self.metric
    }

    /// The fixed reference class, if the metric has one.
    pub fn reference_label(&self) -> Option<Label> {
        match self.reference {
            Reference::Fixed(l) => Some(l),
            Reference::PerPoint(_) => None,
        }
    }

    pub fn eval(&self, x_perturbed: &[f64]) -> Result<f64> {
        let scores = self.model.scores(x_perturbed)?;
        let reference = match &self.reference {
            Reference::Fixed(l) => *l,
            Reference::PerPoint(o) => o.ground_truth(x_perturbed)?,
        };
        if reference.0 >= scores.len() {
            return Err(Error::ClassOutOfRange {
                index: reference.0,
                count: scores.len(),
            });
        }
        Ok(scores.margin_against(reference))
    }
}

/// `h(x, x', m)` in one call. Prefer [`MarginFn`] when evaluating many
/// perturbations of the same nominal point.
pub fn margin<C: Classifier + ?Sized>(
    model: &C,
    x_nominal: &[f64],
    x_perturbed: &[f64],
    metric: RobustnessMetric,
    oracle: Option<&dyn GroundTruth>,
) -> Result<f64> {
    MarginFn::new(model, x_nominal, metric, oracle)?.eval(x_perturbed)
}

/// `x'` violates the metric iff its margin is non-negative.
pub fn is_violation(h: f64) -> bool {
    h >= 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> MlpModel {
        MlpModel::new(
            2,
            2,
            vec![DenseLayer::new(
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![0.0, 0.0],
                Activation::Identity,
            )],
        )
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let s = identity2().forward(&[0.3, 0.7]).unwrap();
        assert_eq!(s.as_slice(), &[0.3, 0.7]);
    }

    #[test]
    fn relu_then_identity() {
        let m = MlpModel::new(
            2,
            2,
            vec![
                DenseLayer::new(
                    vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    vec![-1.0, -1.0],
                    Activation::Relu,
                ),
                DenseLayer::new(
                    vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    vec![0.0, 0.0],
                    Activation::Identity,
                ),
            ],
        )
        .unwrap();
        assert_eq!(m.forward(&[2.0, 0.5]).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let err = identity2().forward(&[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn argmax_examples() {
        let s = |v: &[f64]| ScoreVector::new(v.to_vec()).unwrap().argmax();
        assert_eq!(s(&[0.3, 0.7]), Label(1));
        assert_eq!(s(&[0.5, 0.5]), Label(0));
        assert_eq!(s(&[1.0, 0.0, 2.5]), Label(2));
    }

    #[test]
    fn score_vector_invariants() {
        assert!(ScoreVector::new(vec![1.0]).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn margin_formula() {
        let s = ScoreVector::new(vec![2.0, 5.0, 1.0]).unwrap();
        assert_eq!(s.margin_against(Label(1)), -3.0);
        let tie = ScoreVector::new(vec![4.0, 4.0]).unwrap();
        assert_eq!(tie.margin_against(Label(0)), 0.0);
        assert!(is_violation(tie.margin_against(Label(0))));
    }

    #[test]
    fn m2_nominal_point_is_not_a_violation() {
        let m = identity2();
        let x = [0.2, 0.9];
        let h = margin(&m, &x, &x, RobustnessMetric::M2, None).unwrap();
        assert!((h - (0.2 - 0.9)).abs() < 1e-15);
        assert!(!is_violation(h));
    }

    #[test]
    fn oracle_metrics_need_an_oracle() {
        let m = identity2();
        for metric in [RobustnessMetric::M0, RobustnessMetric::M1] {
            let err = margin(&m, &[0.0, 1.0], &[0.0, 1.0], metric, None).unwrap_err();
            assert!(matches!(err, Error::UnsupportedMetric { .. }));
        }
    }

    #[test]
    fn reference_class_per_metric() {
        let m = identity2();
        // truth: class 1 iff first coordinate is negative
        let oracle = |x: &[f64]| if x[0] < 0.0 { Label(1) } else { Label(0) };
        let x = [0.5, 0.2]; // predicted 0, true 0
        let xp = [-0.5, 0.1]; // predicted 0, true 1
        let h0 = margin(&m, &x, &xp, RobustnessMetric::M0, Some(&oracle)).unwrap();
        let h1 = margin(&m, &x, &xp, RobustnessMetric::M1, Some(&oracle)).unwrap();
        let h2 = margin(&m, &x, &xp, RobustnessMetric::M2, None).unwrap();
        assert!((h0 - (-0.5 - 0.1)).abs() < 1e-15);
        assert!((h1 - (0.1 + 0.5)).abs() < 1e-15);
        assert_eq!(h1, h2);
    }

    #[test]
    fn model_json_round_trip_and_validation() {
        let m = identity2();
        let back: MlpModel = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);

        let bad = r#"{"input_dim": 2, "num_classes": 2, "layers": [
            {"weights": [[1, 0], [0, 1]], "bias": [0, 0], "activation": "relu"}]}"#;
        assert!(serde_json::from_str::<MlpModel>(bad).is_err());
        let chain = r#"{"input_dim": 3, "num_classes": 2, "layers": [
            {"weights": [[1, 0], [0, 1]], "bias": [0, 0], "activation": "identity"}]}"#;
        assert!(serde_json::from_str::<MlpModel>(chain).is_err());
    }

    #[test]
    fn counting_wrapper_counts() {
        let m = identity2();
        let c = CountingClassifier::new(&m);
        for _ in 0..5 {
            c.scores(&[0.0, 1.0]).unwrap();
        }
        c.predict(&[0.0, 1.0]).unwrap();
        assert_eq!(c.passes(), 6);
    }
}
