//! Run configuration: a TOML file of `key = value` entries plus flag
//! overrides. Flags win.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use semcal_core::costfield::CostConfig;
use semcal_core::optimizer::OptimizerConfig;
use semcal_core::pnp_init::InitConfig;
use semcal_core::scene::{ClassId, FramePair};

use crate::io::Remap;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemapConfig {
    /// `[from, to]` pairs applied to cloud labels.
    pub cloud: Vec<[u32; 2]>,
    /// `[from, to]` pairs applied to label-image pixels.
    pub image: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Classes entering the cost. Empty means every non-zero class seen in
    /// both a cloud and an image.
    pub classes: Vec<u8>,
    /// Worker threads, 0 = all cores.
    pub threads: usize,
    pub cost: CostConfig,
    pub init: InitConfig,
    pub optimizer: OptimizerConfig,
    pub remap: RemapConfig,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub classes: Option<Vec<u8>>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Config::default(),
        };
        if let Some(c) = &overrides.classes {
            config.classes = c.clone();
        }
        if let Some(s) = overrides.seed {
            config.init.seed = s;
        }
        if let Some(t) = overrides.threads {
            config.threads = t;
        }
        ensure!(
            !config.classes.contains(&0),
            "class 0 is the ignore label and cannot be calibrated on"
        );
        Ok(config)
    }

    pub fn cloud_remap(&self) -> Result<Remap> {
        Remap::new(&self.remap.cloud).context("invalid cloud remap")
    }

    pub fn image_remap(&self) -> Result<Remap> {
        Remap::new(&self.remap.image).context("invalid image remap")
    }

    /// The configured classes, or those present in both modalities.
    pub fn resolve_classes(&self, pairs: &[FramePair]) -> Result<BTreeSet<ClassId>> {
        let classes: BTreeSet<ClassId> = if self.classes.is_empty() {
            let mut in_cloud = BTreeSet::new();
            let mut in_image = BTreeSet::new();
            for p in pairs {
                in_cloud.extend(p.cloud.labels().iter().copied());
                in_image.extend(p.image.labels().iter().copied());
            }
            in_cloud
                .intersection(&in_image)
                .copied()
                .filter(|c| !c.is_ignore())
                .collect()
        } else {
            self.classes.iter().map(|&c| ClassId(c)).collect()
        };
        ensure!(
            !classes.is_empty(),
            "no class occurs in both the clouds and the label images"
        );
        Ok(classes)
    }
}
