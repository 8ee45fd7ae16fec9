//! Run configuration, its flat `key = value` text form, and grid spaces.

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{Activation, GraffConfig, ModelKind, Readout};
use crate::nn::SymmetricKind;
use crate::split::seeded_rng;

pub const DEFAULT_MAX_EPOCHS: usize = 3000;
pub const DEFAULT_PATIENCE: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub decoder_width: usize,
    pub dropout: f64,
    pub decoder_dropout: f64,
    pub layers: usize,
    pub decoder_layers: usize,
    pub batch_norm: bool,
    /// Train negatives sampled per train positive each epoch.
    pub neg_ratio: f64,
    pub step_size: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub readout: Readout,
    pub source_term: bool,
    pub symmetric: SymmetricKind,
    pub activation: Activation,
    /// Accept values outside the standard search domains.
    pub allow_out_of_domain: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.0,
            hidden: 128,
            decoder_width: 32,
            dropout: 0.1,
            decoder_dropout: 0.1,
            layers: 7,
            decoder_layers: 1,
            batch_norm: false,
            neg_ratio: 1.0,
            step_size: 0.25,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            model: ModelKind::Graff,
            readout: Readout::Gradient,
            source_term: true,
            symmetric: SymmetricKind::DiagDominant,
            activation: Activation::Relu,
            allow_out_of_domain: false,
        }
    }
}

/// The standard search space, one axis per line.
pub const STANDARD_SPACE: &str = "\
lr = 0.01, 0.001
weight_decay = 0, 0.01, 0.001
hidden = 128, 256
decoder_width = 32, 64
dropout = 0.1, 0.3, 0.5
decoder_dropout = 0.1, 0.3, 0.5
layers = 1, 3, 5, 7, 9, 12
decoder_layers = 0, 1, 2
batch_norm = true, false
neg_ratio = 0.25, 0.5, 1, 2, 4, 8
step_size = 0.1, 0.25, 0.5
";

fn domain_check_f64(name: &str, v: f64, domain: &[f64]) -> Result<()> {
    if domain.contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} outside {domain:?}")))
    }
}

fn domain_check_usize(name: &str, v: usize, domain: &[usize]) -> Result<()> {
    if domain.contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} outside {domain:?}")))
    }
}

impl TrainConfig {
    pub fn graff_config(&self) -> GraffConfig {
        GraffConfig {
            kind: self.model,
            layers: self.layers,
            step_size: self.step_size,
            hidden: self.hidden,
            dropout: self.dropout,
            decoder_layers: self.decoder_layers,
            decoder_width: self.decoder_width,
            decoder_dropout: self.decoder_dropout,
            batch_norm: self.batch_norm,
            readout: self.readout,
            source_term: self.source_term,
            symmetric: self.symmetric,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.graff_config().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if !(self.neg_ratio > 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!("neg_ratio must be positive, got {}", self.neg_ratio)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.allow_out_of_domain {
            return Ok(());
        }
        domain_check_f64("lr", self.lr, &[0.01, 0.001])?;
        domain_check_f64("weight_decay", self.weight_decay, &[0.0, 0.01, 0.001])?;
        domain_check_usize("hidden", self.hidden, &[128, 256])?;
        domain_check_usize("decoder_width", self.decoder_width, &[32, 64])?;
        domain_check_f64("dropout", self.dropout, &[0.1, 0.3, 0.5])?;
        domain_check_f64("decoder_dropout", self.decoder_dropout, &[0.1, 0.3, 0.5])?;
        domain_check_usize("layers", self.layers, &[1, 3, 5, 7, 9, 12])?;
        domain_check_usize("decoder_layers", self.decoder_layers, &[0, 1, 2])?;
        domain_check_f64("neg_ratio", self.neg_ratio, &[0.25, 0.5, 1.0, 2.0, 4.0, 8.0])?;
        domain_check_f64("step_size", self.step_size, &[0.1, 0.25, 0.5])?;
        Ok(())
    }

    /// `key = value` lines, sorted by key.
    pub fn to_kv_string(&self) -> String {
        let Value::Object(map) = serde_json::to_value(self).expect("plain struct") else {
            unreachable!()
        };
        map.iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k} = {s}\n"),
                other => format!("{k} = {other}\n"),
            })
            .collect()
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown or repeated keys are errors. The result
    /// is validated.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut map = Map::new();
        for (k, line) in kv_lines(text) {
            let (key, value) = line?;
            if map.insert(key.clone(), parse_scalar(&value)).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: key {key} repeated", k + 1)));
            }
        }
        let cfg = Self::default().with_overrides(&map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }

    /// Returns a copy with the given keys replaced; not validated.
    pub fn with_overrides(&self, overrides: &Map<String, Value>) -> Result<Self> {
        let Value::Object(mut base) = serde_json::to_value(self)? else {
            unreachable!()
        };
        for (k, v) in overrides {
            base.insert(k.clone(), v.clone());
        }
        serde_json::from_value(Value::Object(base)).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

fn parse_scalar(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

fn kv_lines(text: &str) -> impl Iterator<Item = (usize, Result<(String, String)>)> + '_ {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        let parsed = match line.split_once('=') {
            Some((key, value)) if !key.trim().is_empty() => Ok((key.trim().to_string(), value.trim().to_string())),
            _ => Err(Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", k + 1))),
        };
        Some((k, parsed))
    })
}

/// A Cartesian grid: each axis names a [`TrainConfig`] key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpace {
    pub axes: Vec<(String, Vec<Value>)>,
}

impl GridSpace {
    /// Parses `key = v1, v2, ...` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes: Vec<(String, Vec<Value>)> = Vec::new();
        for (k, line) in kv_lines(text) {
            let (key, values) = line?;
            if axes.iter().any(|(a, _)| *a == key) {
                return Err(Error::InvalidConfig(format!("line {}: axis {key} repeated", k + 1)));
            }
            let vals: Vec<Value> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(parse_scalar)
                .collect();
            if vals.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: axis {key} has no values", k + 1)));
            }
            axes.push((key, vals));
        }
        Ok(Self { axes })
    }

    pub fn standard() -> Self {
        Self::parse(STANDARD_SPACE).expect("built-in space parses")
    }

    pub fn cardinality(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// The `index`-th grid point in mixed-radix order (last axis fastest).
    pub fn point(&self, base: &TrainConfig, mut index: usize) -> Result<TrainConfig> {
        let mut overrides = Map::new();
        for (key, vals) in self.axes.iter().rev() {
            overrides.insert(key.clone(), vals[index % vals.len()].clone());
            index /= vals.len();
        }
        base.with_overrides(&overrides)
    }
}

/// Every grid point over `base`, or `budget` of them drawn without replacement
/// (in ascending grid order) when a budget below the cardinality is given.
/// Each configuration is validated.
pub fn grid_expand(space: &GridSpace, base: &TrainConfig, budget: Option<usize>, seed: u64) -> Result<Vec<TrainConfig>> {
    let total = space.cardinality();
    let indices: Vec<usize> = match budget {
        Some(b) if b < total => {
            let mut v = sample(&mut seeded_rng(seed, 0), total, b).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };
    indices
        .into_iter()
        .map(|i| {
            let cfg = space.point(base, i)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}
