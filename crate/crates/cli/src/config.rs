use std::path::Path;

use gaplab_core::trainkit::{SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::read_text;

/// JSON run configuration. Missing sections and keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str, name: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Input(format!("{name}: invalid config: {e}")))?;
        cfg.validate()
            .map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> gaplab_core::Result<()> {
        self.synth.validate()?;
        self.train.validate()
    }
}
