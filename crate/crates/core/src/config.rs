//! Experiment configuration: a JSON document mirroring [`ExperimentConfig`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{gaussian_vector, ParamVector, RngStream, StreamId, StreamPurpose};
use crate::optimizers::{Algorithm, Hyperparams};
use crate::problems::{
    counterexample_problem, gaussian_mixture_dataset, mlp_problem, quadratic_problem,
    shard_dataset, LabeledDataset, Problem, ProblemError, ShardStrategy,
};

/// A config problem, reported with the dotted path of the offending field.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Fixed three-worker piecewise problem; requires `num_workers = 3`.
    Counterexample,
    Quadratic {
        dim: usize,
        curvature_min: f64,
        curvature_max: f64,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    Mlp {
        clusters: usize,
        dim: usize,
        samples_per_cluster: usize,
        hidden: Vec<usize>,
        batch_size: usize,
        #[serde(default = "default_grad_clip")]
        grad_clip: f64,
        /// Load samples from CSV instead of generating a mixture.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset_csv: Option<PathBuf>,
    },
}

fn default_radius() -> f64 {
    crate::problems::quadratic::DEFAULT_RADIUS
}

fn default_grad_clip() -> f64 {
    50.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    ProblemDefault,
    Constant {
        value: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub hyper: Hyperparams,
    pub num_workers: usize,
    pub seed: u64,
    /// Coordinate noise std σ added to exact gradients (analytic problems).
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_sharding")]
    pub sharding: ShardStrategy,
    #[serde(default)]
    pub init: InitSpec,
    /// Record metrics every `cadence` iterations (and always at syncs).
    #[serde(default = "default_cadence")]
    pub cadence: u64,
    /// Keep a full per-iteration trace and run the trace validators.
    #[serde(default)]
    pub validators: bool,
    /// Run worker steps on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

fn default_sharding() -> ShardStrategy {
    ShardStrategy::Iid
}

fn default_cadence() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("<document>", format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.hyper
            .validate()
            .map_err(|e| ConfigError::new(format!("hyper.{}", e.field), e.message))?;
        if self.num_workers == 0 {
            return Err(ConfigError::new("num_workers", "must be at least 1"));
        }
        if self.cadence == 0 {
            return Err(ConfigError::new("cadence", "must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ConfigError::new("noise_std", "must be finite and >= 0"));
        }
        match &self.problem {
            ProblemSpec::Counterexample => {
                if self.num_workers != 3 {
                    return Err(ConfigError::new(
                        "num_workers",
                        "the counterexample problem has exactly 3 workers",
                    ));
                }
            }
            ProblemSpec::Quadratic {
                dim,
                curvature_min,
                curvature_max,
                radius,
            } => {
                if *dim == 0 {
                    return Err(ConfigError::new("problem.dim", "must be at least 1"));
                }
                if !(*curvature_min > 0.0) {
                    return Err(ConfigError::new("problem.curvature_min", "must be > 0"));
                }
                if !(curvature_max >= curvature_min && curvature_max.is_finite()) {
                    return Err(ConfigError::new(
                        "problem.curvature_max",
                        "must be finite and >= curvature_min",
                    ));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(ConfigError::new("problem.radius", "must be > 0"));
                }
            }
            ProblemSpec::Mlp {
                clusters,
                dim,
                samples_per_cluster,
                hidden,
                batch_size,
                grad_clip,
                dataset_csv,
            } => {
                if dataset_csv.is_none() {
                    for (name, v) in [
                        ("clusters", clusters),
                        ("dim", dim),
                        ("samples_per_cluster", samples_per_cluster),
                    ] {
                        if *v == 0 {
                            return Err(ConfigError::new(
                                format!("problem.{name}"),
                                "must be at least 1",
                            ));
                        }
                    }
                }
                if let Some(i) = hidden.iter().position(|&h| h == 0) {
                    return Err(ConfigError::new(
                        format!("problem.hidden[{i}]"),
                        "must be at least 1",
                    ));
                }
                if *batch_size == 0 {
                    return Err(ConfigError::new("problem.batch_size", "must be at least 1"));
                }
                if !(*grad_clip > 0.0 && grad_clip.is_finite()) {
                    return Err(ConfigError::new("problem.grad_clip", "must be > 0"));
                }
                if self.noise_std != 0.0 {
                    return Err(ConfigError::new(
                        "noise_std",
                        "must be 0 for the mlp family (mini-batch sampling supplies the noise)",
                    ));
                }
            }
        }
        if let ShardStrategy::ByLabel {
            classes_per_worker: 0,
        } = self.sharding
        {
            return Err(ConfigError::new(
                "sharding.classes_per_worker",
                "must be at least 1",
            ));
        }
        if let InitSpec::Gaussian { std, .. } = self.init {
            if !(std >= 0.0) {
                return Err(ConfigError::new("init.std", "must be >= 0"));
            }
        }
        Ok(())
    }

    fn stream(&self, purpose: StreamPurpose) -> RngStream {
        RngStream::new(self.seed, StreamId::new(purpose, 0, 0))
    }

    /// Instantiates the configured problem. All randomness comes from `seed`.
    pub fn build_problem(&self) -> Result<Box<dyn Problem>, ConfigError> {
        let perr = |path: &str| {
            let path = path.to_string();
            move |e: ProblemError| ConfigError::new(path, e.to_string())
        };
        match &self.problem {
            ProblemSpec::Counterexample => Ok(Box::new(
                counterexample_problem()
                    .with_noise(self.noise_std)
                    .map_err(perr("noise_std"))?,
            )),
            ProblemSpec::Quadratic {
                dim,
                curvature_min,
                curvature_max,
                radius,
            } => {
                let mut rng = self.stream(StreamPurpose::Problem);
                let p = quadratic_problem(
                    &mut rng,
                    *dim,
                    self.num_workers,
                    (*curvature_min, *curvature_max),
                )
                .map_err(perr("problem"))?
                .with_radius(*radius)
                .map_err(perr("problem.radius"))?
                .with_noise(self.noise_std)
                .map_err(perr("noise_std"))?;
                Ok(Box::new(p))
            }
            ProblemSpec::Mlp {
                clusters,
                dim,
                samples_per_cluster,
                hidden,
                batch_size,
                grad_clip,
                dataset_csv,
            } => {
                let dataset = match dataset_csv {
                    Some(path) => {
                        LabeledDataset::from_csv_path(path).map_err(perr("problem.dataset_csv"))?
                    }
                    None => {
                        let mut rng = self.stream(StreamPurpose::Data);
                        gaussian_mixture_dataset(&mut rng, *clusters, *dim, *samples_per_cluster)
                            .map_err(perr("problem"))?
                    }
                };
                let mut rng = self.stream(StreamPurpose::Shard);
                let shards = shard_dataset(&dataset, self.num_workers, self.sharding, &mut rng)
                    .map_err(perr("sharding"))?;
                let mut widths = vec![dataset.dim()];
                widths.extend(hidden);
                widths.push(dataset.num_classes());
                let p = mlp_problem(shards, &widths, *batch_size, *grad_clip)
                    .map_err(perr("problem"))?;
                Ok(Box::new(p))
            }
        }
    }

    /// Common starting point `x₀` for every worker.
    pub fn initial_point(&self, problem: &dyn Problem) -> Result<ParamVector, ConfigError> {
        let mut rng = self.stream(StreamPurpose::Init);
        match self.init {
            InitSpec::ProblemDefault => Ok(problem.default_initial_point(&mut rng)),
            InitSpec::Constant { value } => ParamVector::new(vec![value; problem.dim()])
                .map_err(|e| ConfigError::new("init.value", e.to_string())),
            InitSpec::Gaussian { mean, std } => gaussian_vector(&mut rng, problem.dim(), mean, std)
                .map_err(|e| ConfigError::new("init", e.to_string())),
        }
    }

    /// The divergence example: α = 0.1, β₁ = 0, β₂ = 0.5, k = 1, x₀ = 5,
    /// three workers, ε = 10⁻⁸.
    pub fn counterexample(algorithm: Algorithm, total_iters: u64) -> Self {
        Self {
            algorithm,
            problem: ProblemSpec::Counterexample,
            hyper: Hyperparams {
                alpha: 0.1,
                beta1: 0.0,
                beta2: 0.5,
                epsilon: 1e-8,
                period: 1,
                total_iters,
            },
            num_workers: 3,
            seed: 0,
            noise_std: 0.0,
            sharding: ShardStrategy::Iid,
            init: InitSpec::Constant { value: 5.0 },
            cadence: 1,
            validators: true,
            parallel: false,
        }
    }

    /// Desk-scale Gaussian mixture: 10 clusters in 20 dimensions, 200 samples
    /// each, MLP widths [20, 50, 50, 10], five workers with two labels each,
    /// ε = 10⁻⁴.
    pub fn mixture(algorithm: Algorithm, alpha: f64, total_iters: u64, seed: u64) -> Self {
        Self {
            algorithm,
            problem: ProblemSpec::Mlp {
                clusters: 10,
                dim: 20,
                samples_per_cluster: 200,
                hidden: vec![50, 50],
                batch_size: 32,
                grad_clip: default_grad_clip(),
                dataset_csv: None,
            },
            hyper: Hyperparams {
                alpha,
                beta1: 0.9,
                beta2: 0.99,
                epsilon: 1e-4,
                period: 10,
                total_iters,
            },
            num_workers: 5,
            seed,
            noise_std: 0.0,
            sharding: ShardStrategy::ByLabel {
                classes_per_worker: 2,
            },
            init: InitSpec::ProblemDefault,
            cadence: 10,
            validators: false,
            parallel: false,
        }
    }
}
