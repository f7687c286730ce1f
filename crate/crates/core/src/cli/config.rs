use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DeltaMode;
use crate::search::SearchConfig;

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Directory receiving all artifacts of the run.
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { out_dir: PathBuf::from("runs/search") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Feature file the run trains on.
    pub features: PathBuf,
    /// Delta derivation applied when loading.
    pub delta_mode: DeltaMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { features: PathBuf::from("data/features.lcnf"), delta_mode: DeltaMode::Causal }
    }
}

/// Search run configuration as read from a TOML file. Every key has a
/// default; `dump-config` prints the complete resolved set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataConfig,
    pub search: SearchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("[[search.stages]]"));
        assert!(text.contains("delta_mode"));
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let err = toml::from_str::<RunConfig>("[search]\nchannles = 8\n").unwrap_err();
        assert!(err.to_string().contains("channles"), "{err}");
    }
}
