//! Model and training configuration, and the flat `key = value` file format.

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, BnOptions};

/// A config section that can be filled from flat `key = value` pairs.
pub trait KvSection {
    /// Applies one pair; `Ok(false)` means the key belongs to another section.
    fn apply(&mut self, key: &str, value: &str) -> Result<bool>;
    fn to_pairs(&self) -> Vec<(&'static str, String)>;
}

/// Splits a config file into `(key, value)` pairs. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if pairs.iter().any(|(p, _): &(String, String)| p == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Feeds every pair to the first section that accepts it; unknown keys fail.
pub fn apply_pairs(pairs: &[(String, String)], sections: &mut [&mut dyn KvSection]) -> Result<()> {
    'pairs: for (k, v) in pairs {
        for s in sections.iter_mut() {
            if s.apply(k, v)? {
                continue 'pairs;
            }
        }
        return Err(Error::Config(format!("unknown config key {k}")));
    }
    Ok(())
}

pub fn render_pairs(sections: &[&dyn KvSection]) -> String {
    let mut out = String::new();
    for s in sections {
        for (k, v) in s.to_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub(crate) fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Generator architecture arms: encoder blocks × decoder blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmgVariant {
    CnnOnly,
    GnnOnly,
    GnnPlusCnn,
}

impl GmgVariant {
    pub const ALL: [GmgVariant; 3] = [GmgVariant::CnnOnly, GmgVariant::GnnOnly, GmgVariant::GnnPlusCnn];
}

impl FromStr for GmgVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cnn_only" => Ok(GmgVariant::CnnOnly),
            "gnn_only" => Ok(GmgVariant::GnnOnly),
            "gnn_plus_cnn" => Ok(GmgVariant::GnnPlusCnn),
            _ => Err(format!("unknown generator variant {s}")),
        }
    }
}

impl Display for GmgVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GmgVariant::CnnOnly => "cnn_only",
            GmgVariant::GnnOnly => "gnn_only",
            GmgVariant::GnnPlusCnn => "gnn_plus_cnn",
        })
    }
}

/// Which gaze map the classifier's graph construction sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeSource {
    /// The generator's output, at training and inference time.
    Generated,
    /// The ground-truth map stored with each sample (experiments only).
    Oracle,
    /// No generator at all: a plain feature-distance graph classifier.
    None,
}

impl FromStr for GazeSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "generated" => Ok(GazeSource::Generated),
            "oracle" => Ok(GazeSource::Oracle),
            "none" => Ok(GazeSource::None),
            _ => Err(format!("unknown gaze source {s}")),
        }
    }
}

impl Display for GazeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GazeSource::Generated => "generated",
            GazeSource::Oracle => "oracle",
            GazeSource::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub gmg_variant: GmgVariant,
    /// Grapher+FFN pairs per encoder resolution.
    pub gmg_depth: usize,
    pub gmg_channels: usize,
    pub gdc_depths: Vec<usize>,
    pub gdc_channels: Vec<usize>,
    pub k: usize,
    pub lambda_g: f64,
    /// L2-normalize node features before measuring feature distance.
    pub normalize_knn: bool,
    pub gaze_source: GazeSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 224,
            num_classes: 2,
            gmg_variant: GmgVariant::GnnPlusCnn,
            gmg_depth: 2,
            gmg_channels: 48,
            gdc_depths: vec![2, 2],
            gdc_channels: vec![48, 96],
            k: 9,
            lambda_g: 3.0,
            normalize_knn: true,
            gaze_source: GazeSource::Generated,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return fail(format!("image_size {} must be a positive multiple of 16", self.image_size));
        }
        if self.num_classes < 2 {
            return fail("num_classes must be >= 2".into());
        }
        if self.gdc_depths.is_empty() || self.gdc_depths.len() != self.gdc_channels.len() {
            return fail("gdc_depths and gdc_channels must be non-empty and equally long".into());
        }
        // Stage s runs on a grid of image_size / 2^(s+2).
        let last = self.image_size >> (self.gdc_depths.len() + 1);
        if last == 0 || (self.image_size >> 2) % (1 << (self.gdc_depths.len() - 1)) != 0 {
            return fail(format!("{} classifier stages do not fit image_size {}", self.gdc_depths.len(), self.image_size));
        }
        let smallest = last * last;
        let gmg_smallest = (self.image_size / 8).pow(2);
        if self.k == 0 || self.k >= smallest.min(gmg_smallest) {
            return fail(format!("k = {} must be in [1, {})", self.k, smallest.min(gmg_smallest)));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return fail(format!("lambda_g must be finite and >= 0, got {}", self.lambda_g));
        }
        if self.gmg_channels < 4 || self.gmg_channels % 4 != 0 {
            return fail("gmg_channels must be a positive multiple of 4".into());
        }
        if self.gdc_channels.iter().any(|&c| c < 2 || c % 2 != 0) {
            return fail("gdc_channels must be even".into());
        }
        Ok(())
    }
}

impl KvSection for ModelConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "image_size" => self.image_size = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "gmg_variant" => self.gmg_variant = parse_value(key, value)?,
            "gmg_depth" => self.gmg_depth = parse_value(key, value)?,
            "gmg_channels" => self.gmg_channels = parse_value(key, value)?,
            "gdc_depths" => self.gdc_depths = parse_list(key, value)?,
            "gdc_channels" => self.gdc_channels = parse_list(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "lambda_g" => self.lambda_g = parse_value(key, value)?,
            "normalize_knn" => self.normalize_knn = parse_value(key, value)?,
            "gaze_source" => self.gaze_source = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("image_size", self.image_size.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("gmg_variant", self.gmg_variant.to_string()),
            ("gmg_depth", self.gmg_depth.to_string()),
            ("gmg_channels", self.gmg_channels.to_string()),
            ("gdc_depths", join(&self.gdc_depths)),
            ("gdc_channels", join(&self.gdc_channels)),
            ("k", self.k.to_string()),
            ("lambda_g", self.lambda_g.to_string()),
            ("normalize_knn", self.normalize_knn.to_string()),
            ("gaze_source", self.gaze_source.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_c: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of the training split held out for checkpoint selection.
    pub val_fraction: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let bn = BnOptions::default();
        TrainConfig {
            lr: adam.lr,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            lambda_c: 1.0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            val_fraction: 0.1,
            bn_momentum: bn.momentum,
            bn_eps: bn.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("lr, epochs and batch_size must be positive".into()));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return Err(Error::Config(format!("lambda_c must be finite and >= 0, got {}", self.lambda_c)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be > 0 and bn_momentum in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn bn(&self) -> BnOptions {
        BnOptions {
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }
}

impl KvSection for TrainConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "lambda_c" => self.lambda_c = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "bn_momentum" => self.bn_momentum = parse_value(key, value)?,
            "bn_eps" => self.bn_eps = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("lambda_c", self.lambda_c.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("bn_momentum", self.bn_momentum.to_string()),
            ("bn_eps", self.bn_eps.to_string()),
        ]
    }
}

/// Reads a combined model + training config file.
pub fn parse_run_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    apply_pairs(&parse_pairs(text)?, &mut [&mut model, &mut train])?;
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_published_settings() {
        let t = TrainConfig::default();
        assert_eq!((t.lr, t.epochs, t.lambda_c), (1e-4, 100, 1.0));
        let m = ModelConfig::default();
        assert_eq!((m.lambda_g, m.image_size, m.k), (3.0, 224, 9));
        m.validate().unwrap();
    }

    #[test]
    fn round_trips_through_text() {
        let mut m = ModelConfig::default();
        m.gmg_variant = GmgVariant::CnnOnly;
        m.gdc_channels = vec![16, 32];
        let mut t = TrainConfig::default();
        t.lr = 2.5e-3;
        let text = render_pairs(&[&m, &t]);
        let (m2, t2) = parse_run_config(&text).unwrap();
        assert_eq!((m2, t2), (m, t));
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        let err = parse_run_config("lr = 0.1\nlearning_rate = 3\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(parse_run_config("lr 0.1").is_err());
        assert!(parse_run_config("lr = fast").is_err());
        assert!(parse_run_config("lr = 0.1\nlr = 0.2").is_err());
        assert!(parse_run_config("# comment only\n\nk = 4 # trailing\n").is_ok());
    }

    #[test]
    fn validation_catches_bad_geometry() {
        let mut m = ModelConfig {
            image_size: 32,
            ..ModelConfig::default()
        };
        m.k = 16;
        assert!(m.validate().is_err());
        m.k = 9;
        m.validate().unwrap();
        m.image_size = 40;
        assert!(m.validate().is_err());
    }
}
