//! Flat `key=value` run configuration.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::AdamConfig;
use crate::decoder::ArcPairMode;
use crate::gnn::{GnnConfig, Neighborhood, WeightMode};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    Greedy,
    #[default]
    SecondOrder,
}

impl FromStr for DecodeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "second-order" | "second_order" => Ok(DecodeMode::SecondOrder),
            _ => Err("expected greedy or second-order".into()),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::SecondOrder => "second-order",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub embedding_dim: usize,
    pub lstm_hidden: usize,
    pub width_dim: usize,
    pub ffnn_hidden: usize,
    pub feature_dim: usize,
    pub max_width: usize,
    pub spans_ratio: f64,
    pub max_antecedents: usize,
    pub gnn_layers: usize,
    pub gnn_weight_mode: String,
    pub gnn_topk: usize,
    pub gnn_neighborhood: Neighborhood,
    pub gamma: f64,
    pub decode_mode: DecodeMode,
    /// `0` means `2·N`.
    pub max_iters: usize,
    pub arc_pair: ArcPairMode,
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub clip: f64,
    pub decay: f64,
    /// `0` disables the cap.
    pub sibling_cap: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            embedding_dim: 50,
            lstm_hidden: 64,
            width_dim: 20,
            ffnn_hidden: 150,
            feature_dim: 20,
            max_width: 10,
            spans_ratio: 0.4,
            max_antecedents: 50,
            gnn_layers: 1,
            gnn_weight_mode: "soft".into(),
            gnn_topk: 3,
            gnn_neighborhood: Neighborhood::Antecedents,
            gamma: 0.8,
            decode_mode: DecodeMode::SecondOrder,
            max_iters: 0,
            arc_pair: ArcPairMode::Learned,
            lambda: 0.001,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 20,
            clip: 5.0,
            decay: 1.0,
            sibling_cap: 30,
            batch: 1,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        msg: e.to_string(),
    })
}

fn check(key: &str, value: &str, ok: bool, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::BadValue { key: key.into(), value: value.into(), msg: msg.into() })
    }
}

pub const KEYS: &[&str] = &[
    "model.embedding_dim",
    "encoder.lstm_hidden",
    "encoder.width_dim",
    "scorer.ffnn_hidden",
    "scorer.feature_dim",
    "span.max_width",
    "prune.spans_ratio",
    "prune.max_antecedents",
    "gnn.layers",
    "gnn.weight_mode",
    "gnn.topk",
    "gnn.neighborhood",
    "decode.gamma",
    "decode.mode",
    "decode.max_iters",
    "decode.arc_pair",
    "train.lambda",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.epochs",
    "train.clip",
    "train.decay",
    "train.sibling_cap",
    "train.batch",
    "seed",
];

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let positive = |n: usize| check(key, v, n >= 1, "must be at least 1");
        match key {
            "model.embedding_dim" => {
                self.embedding_dim = parse(key, v)?;
                positive(self.embedding_dim)?;
            }
            "encoder.lstm_hidden" => {
                self.lstm_hidden = parse(key, v)?;
                positive(self.lstm_hidden)?;
            }
            "encoder.width_dim" => {
                self.width_dim = parse(key, v)?;
                positive(self.width_dim)?;
            }
            "scorer.ffnn_hidden" => {
                self.ffnn_hidden = parse(key, v)?;
                positive(self.ffnn_hidden)?;
            }
            "scorer.feature_dim" => {
                self.feature_dim = parse(key, v)?;
                positive(self.feature_dim)?;
            }
            "span.max_width" => {
                self.max_width = parse(key, v)?;
                positive(self.max_width)?;
            }
            "prune.spans_ratio" => {
                self.spans_ratio = parse(key, v)?;
                check(key, v, self.spans_ratio > 0.0 && self.spans_ratio.is_finite(), "must be positive")?;
            }
            "prune.max_antecedents" => {
                self.max_antecedents = parse(key, v)?;
                positive(self.max_antecedents)?;
            }
            "gnn.layers" => self.gnn_layers = parse(key, v)?,
            "gnn.weight_mode" => {
                WeightMode::parse(v, self.gnn_topk.max(1)).map_err(|msg| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    msg,
                })?;
                self.gnn_weight_mode = v.to_string();
            }
            "gnn.topk" => {
                self.gnn_topk = parse(key, v)?;
                positive(self.gnn_topk)?;
            }
            "gnn.neighborhood" => self.gnn_neighborhood = parse(key, v)?,
            "decode.gamma" => {
                self.gamma = parse(key, v)?;
                check(key, v, (0.0..=1.0).contains(&self.gamma), "must lie in [0, 1]")?;
            }
            "decode.mode" => self.decode_mode = parse(key, v)?,
            "decode.max_iters" => self.max_iters = parse(key, v)?,
            "decode.arc_pair" => self.arc_pair = parse(key, v)?,
            "train.lambda" => {
                self.lambda = parse(key, v)?;
                check(key, v, self.lambda >= 0.0 && self.lambda.is_finite(), "must be non-negative")?;
            }
            "train.lr" => {
                self.lr = parse(key, v)?;
                check(key, v, self.lr > 0.0, "must be positive")?;
            }
            "train.beta1" => {
                self.beta1 = parse(key, v)?;
                check(key, v, (0.0..1.0).contains(&self.beta1), "must lie in [0, 1)")?;
            }
            "train.beta2" => {
                self.beta2 = parse(key, v)?;
                check(key, v, (0.0..1.0).contains(&self.beta2), "must lie in [0, 1)")?;
            }
            "train.eps" => {
                self.eps = parse(key, v)?;
                check(key, v, self.eps > 0.0, "must be positive")?;
            }
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.clip" => {
                self.clip = parse(key, v)?;
                check(key, v, self.clip >= 0.0, "must be non-negative (0 disables clipping)")?;
            }
            "train.decay" => {
                self.decay = parse(key, v)?;
                check(key, v, self.decay > 0.0 && self.decay <= 1.0, "must lie in (0, 1]")?;
            }
            "train.sibling_cap" => self.sibling_cap = parse(key, v)?,
            "train.batch" => {
                self.batch = parse(key, v)?;
                positive(self.batch)?;
            }
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "model.embedding_dim" => self.embedding_dim.to_string(),
            "encoder.lstm_hidden" => self.lstm_hidden.to_string(),
            "encoder.width_dim" => self.width_dim.to_string(),
            "scorer.ffnn_hidden" => self.ffnn_hidden.to_string(),
            "scorer.feature_dim" => self.feature_dim.to_string(),
            "span.max_width" => self.max_width.to_string(),
            "prune.spans_ratio" => self.spans_ratio.to_string(),
            "prune.max_antecedents" => self.max_antecedents.to_string(),
            "gnn.layers" => self.gnn_layers.to_string(),
            "gnn.weight_mode" => self.gnn_weight_mode.clone(),
            "gnn.topk" => self.gnn_topk.to_string(),
            "gnn.neighborhood" => self.gnn_neighborhood.to_string(),
            "decode.gamma" => self.gamma.to_string(),
            "decode.mode" => self.decode_mode.to_string(),
            "decode.max_iters" => self.max_iters.to_string(),
            "decode.arc_pair" => self.arc_pair.to_string(),
            "train.lambda" => self.lambda.to_string(),
            "train.lr" => self.lr.to_string(),
            "train.beta1" => self.beta1.to_string(),
            "train.beta2" => self.beta2.to_string(),
            "train.eps" => self.eps.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "train.clip" => self.clip.to_string(),
            "train.decay" => self.decay.to_string(),
            "train.sibling_cap" => self.sibling_cap.to_string(),
            "train.batch" => self.batch.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: line.into() })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<(), ConfigError> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: p.into() })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Every key in canonical order; [`Config::apply_text`] reads it back.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("known key"))).collect()
    }

    pub fn weight_mode(&self) -> WeightMode {
        WeightMode::parse(&self.gnn_weight_mode, self.gnn_topk).expect("validated on set")
    }

    pub fn gnn(&self) -> GnnConfig {
        GnnConfig { layers: self.gnn_layers, weight_mode: self.weight_mode(), neighborhood: self.gnn_neighborhood }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.lr, beta1: self.beta1, beta2: self.beta2, epsilon: self.eps }
    }

    pub fn sibling_cap(&self) -> Option<usize> {
        (self.sibling_cap > 0).then_some(self.sibling_cap)
    }

    /// Keys that change parameter shapes.
    pub fn architecture_keys() -> &'static [&'static str] {
        &KEYS[..5]
    }
}
