//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line overrides, in that order.

use crate::data::GeneratorSpec;
use crate::sap::{AblationVariant, SapConfig};
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Consulted when no output directory is configured.
pub const OUTPUT_DIR_ENV: &str = "SAP_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "sap-out";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Generator settings; `seed` is replaced by each entry of `seeds`.
    pub spec: GeneratorSpec,
    pub train_size: usize,
    pub val_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub ks: Vec<usize>,
    pub attention_scale: Option<f64>,
    /// Actions seen fewer times than this get a zero prior.
    pub min_count: u64,
    /// Also report metrics on the training split.
    pub eval_train: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        Self {
            spec: GeneratorSpec::default(),
            train_size: 1000,
            val_size: 300,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            variants: AblationVariant::ALL.to_vec(),
            seeds: (0..5).collect(),
            output_dir,
            ks: vec![1, 5],
            attention_scale: None,
            min_count: 0,
            eval_train: false,
        }
    }
}

/// Every key accepted by [`RunConfig::set`], in kebab-case.
pub const CONFIG_KEYS: &[&str] = &[
    "channels",
    "verbs",
    "nouns",
    "frames",
    "per-frame",
    "noise-sigma",
    "distractor-count",
    "global-signal-strength",
    "verb-signal-strength",
    "bank-signal-strength",
    "distractor-strength",
    "decoy-strength",
    "marker-strength",
    "clutter-per-frame",
    "prior-concentration",
    "train-size",
    "val-size",
    "epochs",
    "batch-size",
    "learning-rate",
    "momentum",
    "weight-decay",
    "variants",
    "seeds",
    "output-dir",
    "ks",
    "attention-scale",
    "min-count",
    "eval-train",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `0,3,7` or a half-open range `0..5`.
fn parse_seeds(value: &str) -> Result<Vec<u64>, ConfigError> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse("seeds", a.trim())?, parse("seeds", b.trim())?);
        return Ok((a..b).collect());
    }
    parse_list("seeds", value)
}

impl RunConfig {
    /// Applies one setting. Keys may use `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = key.trim().replace('_', "-");
        let v = value.trim();
        let s = &mut self.spec;
        match k.as_str() {
            "channels" => s.channels = parse(&k, v)?,
            "verbs" => s.verbs = parse(&k, v)?,
            "nouns" => s.nouns = parse(&k, v)?,
            "frames" => s.frames = parse(&k, v)?,
            "per-frame" => s.per_frame = parse(&k, v)?,
            "noise-sigma" => s.noise_sigma = parse(&k, v)?,
            "distractor-count" => s.distractor_count = parse(&k, v)?,
            "global-signal-strength" => s.global_signal_strength = parse(&k, v)?,
            "verb-signal-strength" => s.verb_signal_strength = parse(&k, v)?,
            "bank-signal-strength" => s.bank_signal_strength = parse(&k, v)?,
            "distractor-strength" => s.distractor_strength = parse(&k, v)?,
            "decoy-strength" => s.decoy_strength = parse(&k, v)?,
            "marker-strength" => s.marker_strength = parse(&k, v)?,
            "clutter-per-frame" => s.clutter_per_frame = parse(&k, v)?,
            "prior-concentration" => s.prior_concentration = parse(&k, v)?,
            "train-size" => self.train_size = parse(&k, v)?,
            "val-size" => self.val_size = parse(&k, v)?,
            "epochs" => self.epochs = parse(&k, v)?,
            "batch-size" => self.batch_size = parse(&k, v)?,
            "learning-rate" => self.learning_rate = parse(&k, v)?,
            "momentum" => self.momentum = parse(&k, v)?,
            "weight-decay" => self.weight_decay = parse(&k, v)?,
            "variants" => {
                self.variants = if v == "all" {
                    AblationVariant::ALL.to_vec()
                } else {
                    parse_list(&k, v)?
                }
            }
            "seeds" => self.seeds = parse_seeds(v)?,
            "output-dir" => self.output_dir = PathBuf::from(v),
            "ks" => self.ks = parse_list(&k, v)?,
            "attention-scale" => {
                self.attention_scale = if v == "none" { None } else { Some(parse(&k, v)?) }
            }
            "min-count" => self.min_count = parse(&k, v)?,
            "eval-train" => self.eval_train = parse(&k, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key = value` document. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.spec
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.variants.is_empty() {
            return invalid("at least one variant is required".into());
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required".into());
        }
        if self.train_size == 0 || self.val_size == 0 {
            return invalid("train-size and val-size must be positive".into());
        }
        if self.batch_size == 0 {
            return invalid("batch-size must be positive".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return invalid("ks must be a non-empty list of positive k".into());
        }
        for (name, x) in [
            ("learning-rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight-decay", self.weight_decay),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return invalid(format!("{name} must be finite and non-negative, got {x}"));
            }
        }
        if let Some(s) = self.attention_scale {
            if !s.is_finite() {
                return invalid(format!("attention-scale must be finite, got {s}"));
            }
        }
        Ok(())
    }

    /// Generator spec for one seed.
    pub fn spec_for(&self, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            seed,
            ..self.spec.clone()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        }
    }

    pub fn sap_config(&self) -> SapConfig {
        SapConfig {
            attention_scale: self.attention_scale,
        }
    }

    pub fn dims(&self) -> crate::sap::ModelDims {
        crate::sap::ModelDims {
            channels: self.spec.channels,
            verbs: self.spec.verbs,
            nouns: self.spec.nouns,
        }
    }
}
