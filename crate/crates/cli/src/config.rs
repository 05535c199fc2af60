//! Parameter layering: built-in defaults, then the config file, then flags.
//!
//! Every command's parameters are a struct of optional fields. Each layer is
//! turned into a JSON object with unset fields dropped and laid over the
//! previous one; the merged object is what the manifest records.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Global keys allowed at the top level of a config file.
pub const GLOBAL_KEYS: [&str; 4] = ["out", "format", "seed", "threads"];

/// A config file, TOML unless the extension is `.json`.
pub fn load(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Config(format!("{}: expected a table of settings", path.display()))),
    }
}

fn set_fields<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("parameters serialize") {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

fn known_keys<T: Serialize + Default>() -> BTreeSet<String> {
    match serde_json::to_value(T::default()).expect("parameters serialize") {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Resolves `defaults < config[section] < flags` into `T`.
pub fn resolve<T>(
    defaults: &T,
    config: Option<&Map<String, Value>>,
    section: &str,
    flags: &T,
) -> Result<(T, Value), CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut merged = set_fields(defaults);
    if let Some(cfg) = config {
        for key in cfg.keys() {
            let is_section = matches!(key.as_str(), "generate" | "analyze" | "theory" | "validate");
            if !is_section && !GLOBAL_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown config key '{key}'")));
            }
        }
        if let Some(sec) = cfg.get(section) {
            let Value::Object(sec) = sec else {
                return Err(CliError::Config(format!("config section [{section}] must be a table")));
            };
            let known = known_keys::<T>();
            for (k, v) in sec {
                if !known.contains(k) {
                    return Err(CliError::Config(format!("unknown key '{k}' in [{section}]")));
                }
                if !v.is_null() {
                    merged.insert(k.clone(), v.clone());
                }
            }
        }
    }
    merged.extend(set_fields(flags));
    let value = Value::Object(merged);
    let resolved = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Config(format!("invalid [{section}] settings: {e}")))?;
    Ok((resolved, value))
}

/// A global setting: flag, then config file, then default.
pub fn global<T: DeserializeOwned>(
    flag: Option<T>,
    config: Option<&Map<String, Value>>,
    key: &str,
) -> Result<Option<T>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match config.and_then(|c| c.get(key)) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| CliError::Config(format!("invalid config key '{key}': {e}"))),
    }
}
