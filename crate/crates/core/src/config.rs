//! Text configuration with four sections: `[arch]`, `[train]` (with one
//! sub-table per stage), `[augment]` and `[data]`. Unknown keys are
//! rejected.
//!
//! ```toml
//! [arch]
//! model = "boundary_segmenter"
//! base_width = 8
//!
//! [train]
//! skip_boundary_pretrain = false
//!
//! [train.boundary]
//! total_iters = 300
//! crop = 64
//!
//! [data]
//! tile = 128
//! strides = [64]
//! ```

use crate::boundary::{BetaMode, BoundaryParams};
use crate::error::{Error, Result};
use crate::graph::ArchConfig;
use crate::labels::DEFAULT_IGNORE;
use crate::tiling::{TileConfig, DEFAULT_STRIDES, DEFAULT_TILE};
use crate::train::{AugmentConfig, PipelineConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub tile: usize,
    pub strides: Vec<usize>,
    pub radius: usize,
    /// Defaults to `radius + 1`.
    pub truncation: Option<f64>,
    pub beta_mode: BetaMode,
    pub ignore_label: u8,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            tile: DEFAULT_TILE,
            strides: DEFAULT_STRIDES.to_vec(),
            radius: 3,
            truncation: None,
            beta_mode: BetaMode::default(),
            ignore_label: DEFAULT_IGNORE,
        }
    }
}

impl DataConfig {
    pub fn boundary_params(&self) -> BoundaryParams {
        BoundaryParams {
            radius: self.radius,
            truncation: self.truncation.unwrap_or(self.radius as f64 + 1.0),
            beta_mode: self.beta_mode,
        }
    }

    pub fn tile_config(&self) -> TileConfig {
        TileConfig {
            tile: self.tile,
            strides: self.strides.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub arch: ArchConfig,
    pub train: PipelineConfig,
    pub augment: AugmentConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        for t in [&self.train.boundary, &self.train.segmenter, &self.train.multiscale, &self.train.finetune] {
            t.validate()?;
        }
        self.augment.validate()?;
        if self.data.tile == 0 || self.data.strides.is_empty() || self.data.strides.contains(&0) {
            return Err(Error::Config("data.tile and data.strides must be positive".into()));
        }
        if let Some(s) = self.data.strides.iter().find(|&&s| s > self.data.tile) {
            return Err(Error::Config(format!("data.strides entry {s} exceeds data.tile {}", self.data.tile)));
        }
        if let Some(t) = self.data.truncation {
            if !(t > 0.0) {
                return Err(Error::Config(format!("data.truncation must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Seeds the architecture and every stage from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.arch.seed = seed;
        self.train.reseed(seed);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses and validates a configuration. Misspelled keys are reported by
/// name.
pub fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
