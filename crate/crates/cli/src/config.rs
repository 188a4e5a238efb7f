//! Flat `key = value` experiment files.
//!
//! ```text
//! # STC on non-iid MNIST
//! model = logreg
//! dataset = mnist
//! data_dir = data/mnist
//! method = stc
//! classes_per_client = 1
//! ```
//!
//! Everything after `#` is a comment. Keys not listed in [`KEYS`] are
//! rejected so that typos in sweep files fail loudly.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use stc_core::federation::{FedConfig, Method};
use stc_core::model::ModelSpec;
use stc_core::Error;

pub const KEYS: [&str; 20] = [
    "model",
    "dataset",
    "data_dir",
    "num_clients",
    "participation",
    "classes_per_client",
    "batch_size",
    "gamma",
    "alpha",
    "method",
    "p_up",
    "p_down",
    "delay_n",
    "lr",
    "momentum",
    "signsgd_delta",
    "total_iterations",
    "eval_every",
    "cache_horizon",
    "seed",
];

pub const DEFAULT_MLP_HIDDEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    LogReg,
    Mlp { hidden: usize },
}

impl ModelChoice {
    pub fn spec(self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self {
            ModelChoice::LogReg => ModelSpec::logreg(input_dim, num_classes),
            ModelChoice::Mlp { hidden } => ModelSpec::mlp(input_dim, hidden, num_classes),
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    /// `logreg`, `mlp` or `mlp:<hidden units>`.
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.split_once(':') {
            None if s == "logreg" => Ok(ModelChoice::LogReg),
            None if s == "mlp" => Ok(ModelChoice::Mlp {
                hidden: DEFAULT_MLP_HIDDEN,
            }),
            Some(("mlp", h)) => match h.parse::<usize>() {
                Ok(hidden) if hidden > 0 => Ok(ModelChoice::Mlp { hidden }),
                _ => Err(bad("model", s, "hidden width must be a positive integer")),
            },
            _ => Err(bad("model", s, "expected logreg, mlp or mlp:<hidden>")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetChoice {
    /// IDX files (`train-*` and `t10k-*`) in `data_dir`; MNIST and
    /// Fashion-MNIST share the layout.
    Idx,
    /// Small synthetic Gaussian clusters, for smoke runs.
    Blobs,
}

impl FromStr for DatasetChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mnist" | "fashion-mnist" | "idx" => Ok(DatasetChoice::Idx),
            "blobs" => Ok(DatasetChoice::Blobs),
            _ => Err(bad("dataset", s, "expected mnist, fashion-mnist or blobs")),
        }
    }
}

fn bad(key: &str, value: &str, reason: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: format!("{value:?}: {reason}"),
    }
}

/// A parsed experiment file. `fed.method` is only meaningful when
/// `method` was given.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub dataset: DatasetChoice,
    pub data_dir: PathBuf,
    pub method: Option<Method>,
    /// Explicit `momentum`; otherwise the method's default applies.
    pub momentum: Option<f32>,
    pub fed: FedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelChoice::LogReg,
            dataset: DatasetChoice::Idx,
            data_dir: PathBuf::from("data/mnist"),
            method: None,
            momentum: None,
            fed: FedConfig::base(Method::Stc),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| bad(key, value, "not a valid number"))
}

impl RunConfig {
    /// Sets one key. Relative `data_dir` values are kept as written.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let f = &mut self.fed;
        match key {
            "model" => self.model = value.parse()?,
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "method" => self.method = Some(value.parse()?),
            "num_clients" => f.num_clients = parse_num(key, value)?,
            "participation" => f.participation = parse_num(key, value)?,
            "classes_per_client" => f.classes_per_client = parse_num(key, value)?,
            "batch_size" => f.batch_size = parse_num(key, value)?,
            "gamma" => f.gamma = parse_num(key, value)?,
            "alpha" => f.alpha = parse_num(key, value)?,
            "p_up" => f.p_up = parse_num(key, value)?,
            "p_down" => f.p_down = parse_num(key, value)?,
            "delay_n" => f.delay_n = parse_num(key, value)?,
            "lr" => f.lr = parse_num(key, value)?,
            "momentum" => self.momentum = Some(parse_num(key, value)?),
            "signsgd_delta" => f.signsgd_delta = parse_num(key, value)?,
            "total_iterations" => f.total_iterations = parse_num(key, value)?,
            "eval_every" => f.eval_every = parse_num(key, value)?,
            "cache_horizon" => f.cache_horizon = parse_num(key, value)?,
            "seed" => f.seed = parse_num(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Applies a `key=value` assignment such as a command-line override.
    pub fn assign(&mut self, assignment: &str) -> Result<(), Error> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            key: assignment.trim().to_string(),
            reason: "expected key=value".into(),
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                reason: format!("line {}: expected key=value", n + 1),
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config {
                    key: key.to_string(),
                    reason: format!("line {}: set twice", n + 1),
                });
            }
            seen.push(key);
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    /// Reads a config file; a relative `data_dir` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: "config".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        let mut cfg = Self::parse(&text)?;
        if cfg.data_dir.is_relative() && text.lines().any(|l| l.trim_start().starts_with("data_dir")) {
            if let Some(parent) = path.parent() {
                cfg.data_dir = parent.join(&cfg.data_dir);
            }
        }
        Ok(cfg)
    }

    /// The federation settings, requiring a method.
    pub fn fed_config(&self) -> Result<FedConfig, Error> {
        let method = self.method.ok_or_else(|| Error::Config {
            key: "method".into(),
            reason: "missing; choose stc, topk, signsgd, fedavg or baseline".into(),
        })?;
        let momentum = self.momentum.unwrap_or(FedConfig::base(method).momentum);
        let cfg = FedConfig { method, momentum, ..self.fed.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}
