//! Line-based `key = value` config files. `#` starts a comment; every key
//! must be known and appear once; `input_dim` is required.

use std::collections::HashSet;

use cwct_core::{default_config, ConfigError, ModelConfig};

/// A parse failure and its 1-based line.
#[derive(Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub error: ConfigError,
}

pub fn parse_config(text: &str) -> Result<ModelConfig, LineError> {
    let mut config = default_config(0);
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |error| LineError { line: i + 1, error };
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(ConfigError::BadValue { key: line.into(), value: String::new(), reason: "expected `key = value`" }));
        };
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(ConfigError::BadValue { key: key.into(), value: value.trim().into(), reason: "key given twice" }));
        }
        config.set(key, value).map_err(err)?;
    }
    if !seen.contains("input_dim") {
        return Err(LineError { line: text.lines().count(), error: ConfigError::Missing("input_dim") });
    }
    Ok(config)
}

/// Every setting, one per line, in a form [`parse_config`] reads back.
pub fn render_config(config: &ModelConfig) -> String {
    config.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
