//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use termape::error::ApeError;

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ApeError::Config(msg.into()).into()
}

fn overlay(base: &mut Value, top: Value) {
    if let (Value::Object(base), Value::Object(top)) = (base, top) {
        for (k, v) in top {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
}

/// Merges `defaults`, the optional config file and `flags`; later layers
/// win field by field. Unknown keys in the file are rejected.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: T, file: Option<&Path>, flags: &T) -> anyhow::Result<T> {
    let mut merged = serde_json::to_value(defaults)?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
        let parsed: T =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))?;
        overlay(&mut merged, serde_json::to_value(parsed)?);
    }
    overlay(&mut merged, serde_json::to_value(flags)?);
    serde_json::from_value(merged).map_err(|e| config_err(e.to_string()))
}

/// Writes the resolved configuration as TOML.
pub fn write_resolved<T: Serialize>(cfg: &T, path: &Path) -> anyhow::Result<()> {
    let text = toml::to_string(cfg).context("serializing resolved config")?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ApeError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| ApeError::io(path, e))?;
    Ok(())
}

/// Unwraps a setting that has no default.
pub fn required<T: Clone>(value: &Option<T>, name: &str) -> anyhow::Result<T> {
    value
        .clone()
        .ok_or_else(|| config_err(format!("missing required setting `{name}` (flag --{})", name.replace('_', "-"))))
}
