use std::path::Path;

use serde::{Deserialize, Serialize};

use sdnp_core::detect::{DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_BLOCK, DEFAULT_DETECT_KERNEL, DEFAULT_MAP_SMOOTHING};
use sdnp_core::prnu::{DEFAULT_TAU, DEFAULT_TAU_PRIME};
use sdnp_core::scaling::{DEFAULT_GRID_STEP, DEFAULT_SMOOTHING_WINDOW};

use crate::error::{CliError, CliResult};

/// Luminance weights applied to RGB inputs.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Environment variable naming the default catalog directory.
pub const CATALOG_ENV: &str = "SDNP_CATALOG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

/// Numeric parameters shared by the subcommands. Flags override the
/// values loaded from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Box denoiser side.
    pub k: usize,
    pub block: usize,
    /// Smoothing window of the tile-level correlation map.
    pub map_smoothing: usize,
    pub beta: f64,
    pub alpha: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub grid_step: f64,
    /// Moving-average window of brightness curves.
    pub window: usize,
    /// TOML integers are signed, so seeds above `i64::MAX` only work as flags.
    pub seed: u64,
    pub format: ImageFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_DETECT_KERNEL,
            block: DEFAULT_BLOCK,
            map_smoothing: DEFAULT_MAP_SMOOTHING,
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            tau_prime: DEFAULT_TAU_PRIME,
            grid_step: DEFAULT_GRID_STEP,
            window: DEFAULT_SMOOTHING_WINDOW,
            seed: 0,
            format: ImageFormat::Png,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::file(path, e))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
