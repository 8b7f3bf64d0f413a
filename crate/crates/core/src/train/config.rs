use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, DEFAULT_CROP_MM};
use crate::error::{Error, Result};
use crate::net::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · (1 − iteration / total_iterations)^power`.
    Poly { power: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-width network at 192 px with batch 48 for 100 epochs.
    Paper,
    /// Width 0.25 at 96 px, batch 8, 10 epochs.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Selects the best checkpoint; without it the lowest training loss wins.
    pub validation_dataset: Option<PathBuf>,
    /// Train only on slices whose mask contains prostate.
    pub prostate_slices_only: bool,
    pub crop_mm: f64,
    pub model: ModelConfig,
    pub augment: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let paper = Self {
            learning_rate: 2.5e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_schedule: LrSchedule::Constant,
            epochs: 100,
            batch_size: 48,
            folds: 5,
            seed: 0,
            dataset: None,
            validation_dataset: None,
            prostate_slices_only: false,
            crop_mm: DEFAULT_CROP_MM,
            model: ModelConfig::default(),
            augment: AugmentSpec::default(),
        };
        match profile {
            Profile::Paper => paper,
            Profile::Desk => Self {
                epochs: 10,
                batch_size: 8,
                model: ModelConfig { width_multiplier: 0.25, input_size: 96, ..ModelConfig::default() },
                ..paper
            },
        }
    }

    pub fn desk() -> Self {
        Self::profile(Profile::Desk)
    }

    /// Parses TOML. An optional top-level `profile = "paper" | "desk"`
    /// picks the defaults that the remaining keys override.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text.parse()?;
        let profile = match doc.remove("profile") {
            None => Profile::Paper,
            Some(v) => Profile::deserialize(v).map_err(|e| Error::Config(format!("profile: {e}")))?,
        };
        let base = toml::Table::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, doc);
        let config: Self = merged.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate), ("crop_mm", self.crop_mm)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [("momentum", self.momentum), ("weight_decay", self.weight_decay)];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let LrSchedule::Poly { power } = self.lr_schedule {
            if !(power.is_finite() && power > 0.0) {
                return Err(Error::Config(format!("poly power must be positive, got {power}")));
            }
        }
        self.model.validate()?;
        self.augment.validate()
    }

    /// Learning rate for a 0-based iteration out of `total`.
    pub fn learning_rate_at(&self, iteration: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Poly { power } => {
                let progress = if total == 0 { 0.0 } else { iteration as f64 / total as f64 };
                self.learning_rate * (1.0 - progress).max(0.0).powf(power)
            }
        }
    }
}

fn merge(mut base: toml::Table, overrides: toml::Table) -> toml::Table {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
    base
}
