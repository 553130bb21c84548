//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ranking::SelectionConfig;
use crate::trainer::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub k_high: usize,
    pub k_low: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub tau: f64,
    pub beta: f64,
    pub omega: f64,
    pub interval: usize,
    pub kmeans_runs: usize,
    pub max_iter: usize,
    pub negatives: usize,
    pub rho: f64,
    /// Projection output dimension; 0 keeps the input dimension.
    pub out_dim: usize,
    pub oracle_retries: usize,
    pub oracle_batch: usize,
    pub model: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-5,
            momentum: 0.0,
            epochs: 50,
            k_high: 50,
            k_low: 500,
            sigma: 0.5,
            alpha: 1.0,
            tau: 0.07,
            beta: 0.8,
            omega: 0.9,
            interval: 5,
            kmeans_runs: 5,
            max_iter: 100,
            negatives: 10,
            rho: 1.0,
            out_dim: 0,
            oracle_retries: 3,
            oracle_batch: 20,
            model: "default".into(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "k_high" => self.k_high = num(key, v)?,
            "k_low" => self.k_low = num(key, v)?,
            "sigma" => self.sigma = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "omega" => self.omega = num(key, v)?,
            "interval" => self.interval = num(key, v)?,
            "kmeans_runs" => self.kmeans_runs = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "negatives" => self.negatives = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "out_dim" => self.out_dim = num(key, v)?,
            "oracle_retries" => self.oracle_retries = num(key, v)?,
            "oracle_batch" => self.oracle_batch = num(key, v)?,
            "model" => self.model = v.to_string(),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a config file body over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad("sigma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.omega) {
            return bad("beta and omega must lie in [0, 1]");
        }
        if !(self.tau > 0.0) || !(self.alpha > 0.0) {
            return bad("tau and alpha must be positive");
        }
        if !(self.rho >= 0.0) || !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("rho and learning_rate must be non-negative, momentum in [0, 1)");
        }
        if self.batch_size == 0 || self.kmeans_runs == 0 || self.interval == 0 || self.oracle_batch == 0 {
            return bad("batch_size, kmeans_runs, interval and oracle_batch must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be positive");
        }
        Ok(())
    }

    /// Canonical `key = value` text, one line per key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", format!("{:e}", self.learning_rate));
        put("momentum", self.momentum.to_string());
        put("epochs", self.epochs.to_string());
        put("k_high", self.k_high.to_string());
        put("k_low", self.k_low.to_string());
        put("sigma", self.sigma.to_string());
        put("alpha", self.alpha.to_string());
        put("tau", self.tau.to_string());
        put("beta", self.beta.to_string());
        put("omega", self.omega.to_string());
        put("interval", self.interval.to_string());
        put("kmeans_runs", self.kmeans_runs.to_string());
        put("max_iter", self.max_iter.to_string());
        put("negatives", self.negatives.to_string());
        put("rho", self.rho.to_string());
        put("out_dim", self.out_dim.to_string());
        put("oracle_retries", self.oracle_retries.to_string());
        put("oracle_batch", self.oracle_batch.to_string());
        put("model", self.model.clone());
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Number of clustering/oracle rounds a full run performs.
    pub fn rounds(&self) -> usize {
        self.epochs / self.interval
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            sigma: self.sigma,
            alpha: self.alpha,
            k_high: self.k_high,
            k_low: self.k_low,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            beta: self.beta,
            omega: self.omega,
            rho: self.rho,
            negatives: self.negatives,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
        }
    }
}
