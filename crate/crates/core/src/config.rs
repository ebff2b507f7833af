//! Config-file parsing shared by every versioned configuration type.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::Result;

/// Parses `.json` files as JSON and everything else as TOML.
pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}
