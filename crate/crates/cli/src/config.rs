use std::path::Path;

use anyhow::{Context, Result};
use nucseg_core::augment::AugmentationConfig;
use nucseg_core::dataset::{SplitSpec, SynthConfig};
use nucseg_core::train::TrainConfig;
use nucseg_core::ThresholdSweep;
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Loaded from `--config`, then
/// command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces the seed of every section.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub augment: AugmentationConfig,
    pub augment_seed: u64,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub thresholds: ThresholdSweep,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            synth: SynthConfig::default(),
            augment: AugmentationConfig::default(),
            augment_seed: 0,
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            thresholds: ThresholdSweep::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes a global seed into every section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.augment_seed = s;
            self.train.seed = s;
            self.split.seed = s;
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
