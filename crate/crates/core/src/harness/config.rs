//! Run configuration and its flat `key = value` text form.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attribution::{AceEstimatorConfig, EstimatorMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Contrastive weight; 0 is plain ERM.
    pub rho: f64,
    /// Hinge margin.
    pub delta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub estimator: AceEstimatorConfig,
    pub normalize: bool,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Hidden widths of the classifier head; empty means affine.
    pub head_hidden: Vec<usize>,
    pub init_seed: u64,
    pub data_seed: u64,
    pub pair_seed: u64,
    pub val_fraction: f64,
    /// Fraction of source data kept out of training for ACE-distance metrics.
    pub source_holdout: f64,
    pub bounds_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            delta: 0.05,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 30,
            estimator: AceEstimatorConfig::analytic(),
            normalize: false,
            hidden: vec![256],
            latent_dim: 64,
            head_hidden: Vec::new(),
            init_seed: 0,
            data_seed: 0,
            pair_seed: 0,
            val_fraction: 0.2,
            source_holdout: 0.1,
            bounds_epsilon: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.delta));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be nonnegative, got {}", self.rho));
        }
        if self.latent_dim == 0 || self.hidden.contains(&0) || self.head_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        for (name, f) in [("val_fraction", self.val_fraction), ("source_holdout", self.source_holdout)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        if !(self.bounds_epsilon >= 0.0 && self.bounds_epsilon.is_finite()) {
            return bad(format!("bounds_epsilon must be nonnegative, got {}", self.bounds_epsilon));
        }
        if self.rho > 0.0 {
            if self.estimator.mode == EstimatorMode::Quadrature {
                return bad("training needs the analytic or mc estimator".into());
            }
            if self.estimator.mode == EstimatorMode::AnalyticAffine && !self.head_hidden.is_empty() {
                return bad("the analytic estimator needs an affine head (empty head_hidden)".into());
            }
        }
        self.estimator.validate()
    }

    /// Seeds shifted by the repeat index.
    pub fn for_repeat(&self, repeat: usize) -> Self {
        let r = repeat as u64;
        Self {
            init_seed: self.init_seed.wrapping_add(r),
            data_seed: self.data_seed.wrapping_add(r),
            pair_seed: self.pair_seed.wrapping_add(r),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Synthetic { domains: usize, per_domain: usize, seed: u64, shift: f64 },
    RotatedMnist { dir: PathBuf, angles: Vec<f64>, per_domain: usize, seed: u64 },
    Csv { path: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            domains: 4,
            per_domain: 2000,
            seed: 0,
            shift: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Erm,
    ContrastiveAce,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::ContrastiveAce => "contrastive-ace",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "erm" => Ok(Method::Erm),
            "contrastive-ace" | "cace" => Ok(Method::ContrastiveAce),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DatasetConfig,
    pub repeats: usize,
    pub methods: Vec<Method>,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DatasetConfig::default(),
            repeats: 3,
            methods: vec![Method::Erm, Method::ContrastiveAce],
            save_checkpoints: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        // the dataset kind decides which fields the other dataset keys fill
        if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| k == "dataset") {
            cfg.set("dataset", v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "dataset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "rho" => t.rho = parse(key, value)?,
            "delta" => t.delta = parse(key, value)?,
            "lr" | "learning_rate" => t.learning_rate = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "estimator" => t.estimator.mode = parse(key, value)?,
            "samples" => t.estimator.samples = parse(key, value)?,
            "grid_points" => t.estimator.grid_points = parse(key, value)?,
            "estimator_seed" => t.estimator.seed = parse(key, value)?,
            "normalize" => t.normalize = parse(key, value)?,
            "hidden" => t.hidden = parse_list(key, value)?,
            "latent_dim" => t.latent_dim = parse(key, value)?,
            "head_hidden" => t.head_hidden = parse_list(key, value)?,
            "init_seed" => t.init_seed = parse(key, value)?,
            "data_seed" => t.data_seed = parse(key, value)?,
            "pair_seed" => t.pair_seed = parse(key, value)?,
            "seed" => {
                let s: u64 = parse(key, value)?;
                t.init_seed = s;
                t.data_seed = s;
                t.pair_seed = s;
            }
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "source_holdout" => t.source_holdout = parse(key, value)?,
            "bounds_epsilon" => t.bounds_epsilon = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "save_checkpoints" => self.save_checkpoints = parse(key, value)?,
            "dataset" => {
                self.data = match value.trim() {
                    "synthetic" => DatasetConfig::default(),
                    "rotated-mnist" => DatasetConfig::RotatedMnist {
                        dir: PathBuf::from("data/mnist"),
                        angles: (0..6).map(|i| 15.0 * i as f64).collect(),
                        per_domain: 500,
                        seed: 0,
                    },
                    "csv" => DatasetConfig::Csv {
                        path: PathBuf::from("dataset.csv"),
                    },
                    other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
                }
            }
            _ => self.set_dataset_field(key, value)?,
        }
        Ok(())
    }

    fn set_dataset_field(&mut self, key: &str, value: &str) -> Result<()> {
        let misplaced = || Error::Config(format!("unknown key {key:?} for the configured dataset"));
        match (&mut self.data, key) {
            (DatasetConfig::Synthetic { domains, .. }, "domains") => *domains = parse(key, value)?,
            (
                DatasetConfig::Synthetic { per_domain, .. } | DatasetConfig::RotatedMnist { per_domain, .. },
                "per_domain",
            ) => *per_domain = parse(key, value)?,
            (
                DatasetConfig::Synthetic { seed, .. } | DatasetConfig::RotatedMnist { seed, .. },
                "dataset_seed",
            ) => *seed = parse(key, value)?,
            (DatasetConfig::Synthetic { shift, .. }, "shift") => *shift = parse(key, value)?,
            (DatasetConfig::RotatedMnist { dir, .. }, "mnist_dir") => *dir = PathBuf::from(value.trim()),
            (DatasetConfig::RotatedMnist { angles, .. }, "angles") => *angles = parse_list(key, value)?,
            (DatasetConfig::Csv { path }, "csv_path") => *path = PathBuf::from(value.trim()),
            _ => return Err(misplaced()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.repeats == 0 || self.methods.is_empty() {
            return Err(Error::Config("repeats and methods must be nonempty".into()));
        }
        Ok(())
    }

    /// Text form that `parse` maps back to `self`.
    pub fn to_config_string(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.data {
            DatasetConfig::Synthetic {
                domains,
                per_domain,
                seed,
                shift,
            } => {
                kv("dataset", "synthetic".into());
                kv("domains", domains.to_string());
                kv("per_domain", per_domain.to_string());
                kv("dataset_seed", seed.to_string());
                kv("shift", shift.to_string());
            }
            DatasetConfig::RotatedMnist {
                dir,
                angles,
                per_domain,
                seed,
            } => {
                kv("dataset", "rotated-mnist".into());
                kv("mnist_dir", dir.display().to_string());
                kv("angles", join(angles));
                kv("per_domain", per_domain.to_string());
                kv("dataset_seed", seed.to_string());
            }
            DatasetConfig::Csv { path } => {
                kv("dataset", "csv".into());
                kv("csv_path", path.display().to_string());
            }
        }
        kv("rho", t.rho.to_string());
        kv("delta", t.delta.to_string());
        kv("lr", t.learning_rate.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("estimator", t.estimator.mode.to_string());
        kv("samples", t.estimator.samples.to_string());
        kv("grid_points", t.estimator.grid_points.to_string());
        kv("estimator_seed", t.estimator.seed.to_string());
        kv("normalize", t.normalize.to_string());
        kv("hidden", join(&t.hidden));
        kv("latent_dim", t.latent_dim.to_string());
        kv("head_hidden", join(&t.head_hidden));
        kv("init_seed", t.init_seed.to_string());
        kv("data_seed", t.data_seed.to_string());
        kv("pair_seed", t.pair_seed.to_string());
        kv("val_fraction", t.val_fraction.to_string());
        kv("source_holdout", t.source_holdout.to_string());
        kv("bounds_epsilon", t.bounds_epsilon.to_string());
        kv("repeats", self.repeats.to_string());
        kv("methods", self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
        kv("save_checkpoints", self.save_checkpoints.to_string());
        out
    }
}
