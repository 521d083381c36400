//! Config file loading. Plain TOML, every key optional, unknown keys are
//! hard errors so typos cannot silently fall back to defaults.

use std::path::Path;

use thiserror::Error;

use crate::simulator::{SimConfig, SimError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error(transparent)]
    Invalid(#[from] SimError),
}

/// Parse and validate a config file. An empty file yields the defaults.
pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse { source, .. } => ConfigError::Parse {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let config: SimConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
        path: String::new(),
        source: Box::new(source),
    })?;
    config.validate()?;
    Ok(config)
}
