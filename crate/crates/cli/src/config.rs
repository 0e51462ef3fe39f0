use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use goskit::harness::TrainConfig;
use goskit::scene::SceneConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_size: 64, test_size: 16 }
    }
}

/// The single configuration file: `[data]`, `[scene]` and `[train]` tables,
/// each optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub train: TrainConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }
}
