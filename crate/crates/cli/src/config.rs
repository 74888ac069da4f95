use std::path::Path;

use motion_atlas::atlas::AtlasConfig;
use motion_atlas::harp::HarpConfig;
use motion_atlas::mechanics::MechanicsConfig;
use motion_atlas::pvira::PviraConfig;
use serde::{Deserialize, Serialize};

use crate::cache::hash_bytes;
use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// Component volumes written per label.
    pub components: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig { components: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Seed for every random draw (phantom noise and cohort sampling).
    pub seed: u64,
    pub harp: HarpConfig,
    pub pvira: PviraConfig,
    pub atlas: AtlasConfig,
    pub mechanics: MechanicsConfig,
    pub pca: PcaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            harp: HarpConfig::default(),
            pvira: PviraConfig::default(),
            atlas: AtlasConfig::default(),
            mechanics: MechanicsConfig::default(),
            pca: PcaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::validation(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let wrap = |section: &str, r: motion_atlas::Result<()>| r.map_err(|e| CliError::validation(format!("config `{section}`: {e}")));
        wrap("harp", self.harp.validate())?;
        wrap("pvira", self.pvira.validate())?;
        wrap("atlas", self.atlas.validate())?;
        Ok(())
    }

    /// Compact JSON with fields in declaration order; equal configs give equal strings.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hash_bytes(self.canonical().as_bytes())
    }
}
