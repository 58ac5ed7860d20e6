//! Flat TOML run configuration shared by the command-line tools.
//!
//! One file per run. `model` and `generator` are JSON paths, resolved
//! relative to the configuration file. Every other key is optional and falls
//! back to the library defaults; unknown keys are rejected.
//!
//! ```toml
//! model = "toy_mlp.json"
//! generator = "generator.json"
//! seed = 7
//! n = 200
//! n0 = 40
//! radius = 0.3
//! t_values = [1e-5, 1e-10]
//! amls_particles = 200
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bench::{BenchConfig, BenchMethod};
use crate::certify::CertificationConfig;
use crate::distribution::{ClassSelector, GeneratorSpec};
use crate::error::{Error, Result};
use crate::local_risk::AmlsConfig;
use crate::mine::MineConfig;
use crate::model::{Label, MlpModel, RobustnessMetric};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: PathBuf,
    pub generator: PathBuf,
    pub seed: Option<u64>,

    pub n: Option<usize>,
    pub m: Option<usize>,
    pub n0: Option<usize>,
    pub radius: Option<f64>,
    pub metric: Option<RobustnessMetric>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub t_values: Option<Vec<f64>>,
    pub include_censored: Option<bool>,
    pub amls_replicates: Option<usize>,
    /// Restrict nominal sampling to one class.
    pub class: Option<usize>,
    /// Input box `[lo, hi]` intersected with every ball.
    pub domain: Option<(f64, f64)>,

    pub amls_quantile: Option<f64>,
    pub amls_particles: Option<usize>,
    pub amls_max_levels: Option<usize>,
    pub amls_mh_updates: Option<usize>,
    pub amls_initial_width: Option<f64>,
    pub amls_target_acceptance: Option<f64>,
    /// Nominals processed by the standalone `amls` command.
    pub amls_samples: Option<usize>,

    pub methods: Option<Vec<BenchMethod>>,
    pub repetitions: Option<usize>,
    pub budget: Option<u64>,
    pub naive_budget: Option<u64>,
    pub amls_budget: Option<u64>,
    pub ace_budget: Option<u64>,
    pub naive_m: Option<usize>,
    pub ace_m: Option<usize>,
    pub ace_n0: Option<usize>,

    /// Nominals mined by the `mine` command.
    pub mine_samples: Option<usize>,
    pub per_nominal: Option<usize>,
    pub merge_radius: Option<f64>,

    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.resolve(&self.model)
    }

    pub fn generator_path(&self) -> PathBuf {
        self.resolve(&self.generator)
    }

    pub fn load_model(&self) -> Result<MlpModel> {
        MlpModel::load_json(self.model_path())
    }

    pub fn load_generator(&self) -> Result<GeneratorSpec> {
        GeneratorSpec::load_json(self.generator_path())
    }

    fn class(&self) -> ClassSelector {
        self.class.map_or(ClassSelector::All, |c| ClassSelector::Class(Label(c)))
    }

    pub fn amls(&self) -> AmlsConfig {
        let d = AmlsConfig::default();
        AmlsConfig {
            quantile: self.amls_quantile.unwrap_or(d.quantile),
            particles: self.amls_particles.unwrap_or(d.particles),
            max_levels: self.amls_max_levels.unwrap_or(d.max_levels),
            mh_updates_per_level: self.amls_mh_updates.unwrap_or(d.mh_updates_per_level),
            initial_width: self.amls_initial_width.unwrap_or(d.initial_width),
            target_acceptance: self.amls_target_acceptance.unwrap_or(d.target_acceptance),
        }
    }

    pub fn certification(&self) -> CertificationConfig {
        let d = CertificationConfig::default();
        CertificationConfig {
            n: self.n.unwrap_or(d.n),
            m: self.m.unwrap_or(d.m),
            n0: self.n0.unwrap_or(d.n0),
            radius: self.radius.unwrap_or(d.radius),
            metric: self.metric.unwrap_or(d.metric),
            amls: self.amls(),
            seed: self.seed.unwrap_or(d.seed),
            rho: self.rho.unwrap_or(d.rho),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            delta: self.delta.unwrap_or(d.delta),
            t_values: self.t_values.clone().unwrap_or(d.t_values),
            include_censored: self.include_censored.unwrap_or(d.include_censored),
            amls_replicates: self.amls_replicates.unwrap_or(d.amls_replicates),
            class: self.class(),
            domain: self.domain,
        }
    }

    pub fn bench(&self) -> BenchConfig {
        let d = BenchConfig::default();
        BenchConfig {
            methods: self.methods.clone().unwrap_or(d.methods),
            repetitions: self.repetitions.unwrap_or(d.repetitions),
            budget: self.budget.unwrap_or(d.budget),
            naive_budget: self.naive_budget,
            amls_budget: self.amls_budget,
            ace_budget: self.ace_budget,
            naive_m: self.naive_m.unwrap_or(d.naive_m),
            ace_m: self.ace_m.or(self.m).unwrap_or(d.ace_m),
            ace_n0: self.ace_n0.or(self.n0).unwrap_or(d.ace_n0),
            t_values: self.t_values.clone().unwrap_or(d.t_values),
            radius: self.radius.unwrap_or(d.radius),
            metric: self.metric.unwrap_or(d.metric),
            amls: self.amls(),
            include_censored: self.include_censored.unwrap_or(d.include_censored),
            seed: self.seed.unwrap_or(d.seed),
            class: self.class(),
            domain: self.domain,
        }
    }

    pub fn mine(&self) -> MineConfig {
        let d = MineConfig::default();
        MineConfig {
            radius: self.radius.unwrap_or(d.radius),
            metric: self.metric.unwrap_or(d.metric),
            amls: self.amls(),
            per_nominal: self.per_nominal.unwrap_or(d.per_nominal),
            merge_radius: self.merge_radius.unwrap_or(d.merge_radius),
            domain: self.domain,
        }
    }

    pub fn mine_samples(&self) -> usize {
        self.mine_samples.unwrap_or(10)
    }

    pub fn amls_samples(&self) -> usize {
        self.amls_samples.unwrap_or(1)
    }

    pub fn class_selector(&self) -> ClassSelector {
        self.class()
    }
}
