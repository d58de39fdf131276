//! Training configuration and its `key = value` text form.
//!
//! The text form is what every run echoes next to its outputs; parsing an
//! echo reproduces the configuration exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{AugmentSpec, Flip};
use crate::loss::LossConfig;
use crate::model::{ModelConfig, Scale};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    /// Lower bound of the halving schedule, if any.
    pub lr_floor: Option<f64>,
    pub lr_halving_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub augment: AugmentSpec,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final model.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::new(Scale::X4),
            epochs: 100,
            iters_per_epoch: 100,
            batch: 64,
            patch: 128,
            lr: 1e-5,
            lr_floor: None,
            lr_halving_period: 50,
            momentum: 0.9,
            weight_decay: 1e-4,
            loss: LossConfig::default(),
            augment: AugmentSpec::default(),
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn list<T>(key: &str, value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn flip_name(f: Flip) -> &'static str {
    match f {
        Flip::None => "none",
        Flip::Horizontal => "horizontal",
        Flip::Vertical => "vertical",
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Learning rate during 1-based `epoch`:
    /// `max(lr · 0.5^floor((epoch − 1) / period), floor)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let halvings = (epoch.max(1) - 1) / self.lr_halving_period;
        let lr = self.lr * 0.5f64.powi(halvings as i32);
        match self.lr_floor {
            Some(floor) => lr.max(floor),
            None => lr,
        }
    }

    pub fn total_iterations(&self) -> u64 {
        (self.epochs * self.iters_per_epoch) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.iters_per_epoch == 0 {
            return fail("epochs and iters_per_epoch must be at least 1".into());
        }
        if self.batch == 0 {
            return fail("batch must be at least 1".into());
        }
        let s = self.model.scale.factor() as usize;
        if self.patch == 0 || !self.patch.is_multiple_of(s) {
            return fail(format!(
                "patch {} must be a positive multiple of the scale {s}",
                self.patch
            ));
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if let Some(floor) = self.lr_floor {
            if !(floor > 0.0 && floor <= self.lr) {
                return fail(format!("lr_floor must be in (0, lr], got {floor}"));
            }
        }
        if self.lr_halving_period == 0 {
            return fail("lr_halving_period must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "scale" => self.model.scale = Scale::new(parse(key, value)?)?,
            "depth" => self.model.depth = parse(key, value)?,
            "features" => self.model.feature_channels = parse(key, value)?,
            "leaky_slope" => self.model.leaky_slope = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "iters_per_epoch" => self.iters_per_epoch = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_floor" => {
                self.lr_floor = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lr_halving_period" => self.lr_halving_period = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epsilon" => self.loss.epsilon = parse(key, value)?,
            "lambda_gdl" => self.loss.lambda_gdl = parse(key, value)?,
            "augment_scales" => self.augment.scale_factors = list(key, value, |v| parse(key, v))?,
            "augment_rotations" => {
                self.augment.rotations = list(key, value, |v| match v {
                    "0" => Ok(0),
                    "90" => Ok(1),
                    "180" => Ok(2),
                    "270" => Ok(3),
                    _ => Err(Error::Config(format!(
                        "rotation `{v}` is not one of 0, 90, 180, 270"
                    ))),
                })?
            }
            "augment_flips" => {
                self.augment.flips = list(key, value, |v| match v {
                    "none" => Ok(Flip::None),
                    "horizontal" => Ok(Flip::Horizontal),
                    "vertical" => Ok(Flip::Vertical),
                    _ => Err(Error::Config(format!(
                        "flip `{v}` is not none, horizontal or vertical"
                    ))),
                })?
            }
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                ))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Every resolved parameter, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let degrees = |r: &u8| (u32::from(*r) * 90).to_string();
        let entries = [
            ("scale", self.model.scale.to_string()),
            ("depth", self.model.depth.to_string()),
            ("features", self.model.feature_channels.to_string()),
            ("leaky_slope", self.model.leaky_slope.to_string()),
            ("epochs", self.epochs.to_string()),
            ("iters_per_epoch", self.iters_per_epoch.to_string()),
            ("batch", self.batch.to_string()),
            ("patch", self.patch.to_string()),
            ("lr", self.lr.to_string()),
            (
                "lr_floor",
                self.lr_floor.map_or("none".into(), |v| v.to_string()),
            ),
            ("lr_halving_period", self.lr_halving_period.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epsilon", self.loss.epsilon.to_string()),
            ("lambda_gdl", self.loss.lambda_gdl.to_string()),
            (
                "augment_scales",
                join(&self.augment.scale_factors, |v| v.to_string()),
            ),
            ("augment_rotations", join(&self.augment.rotations, degrees)),
            (
                "augment_flips",
                join(&self.augment.flips, |f| flip_name(*f).to_string()),
            ),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_schedule() {
        let c = TrainConfig::default();
        assert_eq!((c.batch, c.patch, c.lr_halving_period), (64, 128, 50));
        assert_eq!((c.lr, c.momentum, c.weight_decay), (1e-5, 0.9, 1e-4));
        assert_eq!(c.loss.lambda_gdl, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn schedule_halves_per_period() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at_epoch(1), 1e-5);
        assert_eq!(c.lr_at_epoch(50), 1e-5);
        assert_eq!(c.lr_at_epoch(51), 5e-6);
        assert_eq!(c.lr_at_epoch(100), 5e-6);
        assert_eq!(c.lr_at_epoch(101), 2.5e-6);
        let floored = TrainConfig {
            lr_floor: Some(4e-6),
            ..c
        };
        assert_eq!(floored.lr_at_epoch(101), 4e-6);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.apply_text("scale = 2\n# comment\nlr = 3e-4  # trailing\naugment_rotations = 0, 270\naugment_flips = vertical\nlr_floor = 1e-7\n")
            .unwrap();
        assert_eq!(c.model.scale, Scale::X2);
        assert_eq!(c.lr, 3e-4);
        assert_eq!(c.augment.rotations, vec![0, 3]);
        assert_eq!(c.augment.flips, vec![Flip::Vertical]);
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn bad_input_is_reported() {
        let mut c = TrainConfig::default();
        assert!(matches!(c.set("learning_rate", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("batch", "many"), Err(Error::Config(_))));
        assert!(matches!(
            c.set("scale", "3"),
            Err(Error::UnsupportedScale(3))
        ));
        assert!(c.apply_text("just words").is_err());
        c.patch = 130;
        assert!(c.validate().is_err());
    }
}
