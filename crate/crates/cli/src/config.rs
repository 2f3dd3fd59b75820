//! Experiment configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flaps_core::dataset::{load_csv, load_idx, make_synthetic, LabeledDataset};
use flaps_core::learn::{Optimizer, TrainConfig};
use flaps_core::orchestrator::{DropModel, DropPhase, Latency, Mode, RoundConfig, TransportKind};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "FLAPS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "flaps-results";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_synthetic_n")]
        n: usize,
        #[serde(default = "default_synthetic_dim")]
        dim: usize,
        #[serde(default = "default_synthetic_classes")]
        classes: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_synthetic_n() -> usize {
    5000
}

fn default_synthetic_dim() -> usize {
    16
}

fn default_synthetic_classes() -> usize {
    10
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            n: default_synthetic_n(),
            dim: default_synthetic_dim(),
            classes: default_synthetic_classes(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<LabeledDataset, CliError> {
        Ok(match self {
            DatasetSpec::Synthetic {
                n,
                dim,
                classes,
                seed,
            } => make_synthetic(*n, *dim, *classes, *seed)?,
            DatasetSpec::Idx { images, labels } => load_idx(images, labels)?,
            DatasetSpec::Csv { path } => load_csv(path)?,
        })
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let paths: Vec<&Path> = match self {
            DatasetSpec::Synthetic { .. } => Vec::new(),
            DatasetSpec::Idx { images, labels } => vec![images, labels],
            DatasetSpec::Csv { path } => vec![path],
        };
        match paths.into_iter().find(|p| !p.is_file()) {
            Some(p) => Err(CliError::MissingDataset(p.to_path_buf())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Rmsprop,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerName,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub patience: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: OptimizerName::Rmsprop,
            learning_rate: t.learning_rate,
            rho: t.rho,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            convergence_tol: t.convergence_tol,
            patience: t.patience,
            hidden: Vec::new(),
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: match self.optimizer {
                OptimizerName::Rmsprop => Optimizer::RmsProp,
                OptimizerName::Sgd => Optimizer::Sgd,
            },
            learning_rate: self.learning_rate,
            rho: self.rho,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            convergence_tol: self.convergence_tol,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropSection {
    pub ready: f64,
    pub report: f64,
    pub post_report: f64,
    pub training: f64,
}

impl DropSection {
    pub fn to_model(self) -> DropModel {
        DropModel {
            ready: self.ready,
            report: self.report,
            post_report: self.post_report,
            head_training: self.training,
        }
    }

    pub fn set(&mut self, phase: DropPhase, p: f64) {
        let mut model = self.to_model();
        model.set(phase, p);
        *self = DropSection {
            ready: model.ready,
            report: model.report,
            post_report: model.post_report,
            training: model.head_training,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Flaps,
    Fl,
    Central,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Flaps => Mode::Flaps,
            ModeName::Fl => Mode::Fl,
            ModeName::Central => Mode::Central,
        }
    }
}

impl From<Mode> for ModeName {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Flaps => ModeName::Flaps,
            Mode::Fl => ModeName::Fl,
            Mode::Central => ModeName::Central,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportName {
    Sim,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub modes: Vec<ModeName>,
    pub k_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub transport: TransportName,
    pub max_attempts: usize,
    /// Simulated seconds between an aborted attempt and its restart.
    pub retry_delay: f64,
    pub kmeans_max_iter: usize,
    /// Output directory; when unset the environment variable
    /// `FLAPS_OUT_DIR` or `flaps-results` is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub train: TrainSection,
    pub drops: DropSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let round = RoundConfig::default();
        Self {
            n_clients: 200,
            modes: Mode::ALL.into_iter().map(ModeName::from).collect(),
            k_list: (2..=20).collect(),
            seeds: vec![0],
            test_fraction: 0.2,
            transport: TransportName::Sim,
            max_attempts: round.max_attempts,
            retry_delay: round.retry_delay,
            kmeans_max_iter: round.kmeans_max_iter,
            out_dir: None,
            dataset: DatasetSpec::default(),
            train: TrainSection::default(),
            drops: DropSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Canonical TOML form; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n_clients == 0 {
            return bad("n_clients must be positive".into());
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.modes.contains(&ModeName::Flaps) {
            if self.k_list.is_empty() {
                return bad("k_list is empty".into());
            }
            if let Some(k) = self.k_list.iter().find(|&&k| k < 2 || k >= self.n_clients) {
                return bad(format!(
                    "k = {k} outside 2 <= k < n_clients = {}",
                    self.n_clients
                ));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction {} not in (0, 1)",
                self.test_fraction
            ));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        if !(self.retry_delay >= 0.0 && self.retry_delay.is_finite()) {
            return bad(format!(
                "retry_delay {} must be a finite non-negative number",
                self.retry_delay
            ));
        }
        self.drops
            .to_model()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .to_train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        self.dataset.check_paths()
    }

    /// Selected modes, deduplicated, in `flaps`, `fl`, `central` order.
    pub fn modes(&self) -> Vec<Mode> {
        let mut modes: Vec<Mode> = self.modes.iter().map(|&m| m.into()).collect();
        modes.sort();
        modes.dedup();
        modes
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn round_config(&self, seed: u64, k: usize) -> RoundConfig {
        RoundConfig {
            seed,
            k,
            hidden: self.train.hidden.clone(),
            train: self.train.to_train_config(),
            drops: self.drops.to_model(),
            latency: Latency::default(),
            transport: match self.transport {
                TransportName::Sim => TransportKind::Sim,
                TransportName::Tcp => TransportKind::Tcp,
            },
            kmeans_max_iter: self.kmeans_max_iter,
            max_attempts: self.max_attempts,
            retry_delay: self.retry_delay,
        }
    }
}

/// Parses `2..20` (inclusive), `2,5,10` or a single number.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{t}` is not a non-negative integer"))
    };
    if let Some((lo, hi)) = s.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo > hi {
            return Err(format!("empty range {s}"));
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(num).collect()
}

/// Parses `phase=p` for `--drop`.
pub fn parse_drop(s: &str) -> Result<(DropPhase, f64), String> {
    let (phase, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected phase=p, got `{s}`"))?;
    let p: f64 = p
        .trim()
        .parse()
        .map_err(|_| format!("`{p}` is not a probability"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(format!("probability {p} not in [0, 1]"));
    }
    Ok((phase.trim().parse()?, p))
}
