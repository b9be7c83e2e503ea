//! Effective configuration: built-in defaults, then the `--config` file, then
//! flags. Manifests written by earlier runs are valid config files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tlsim_core::agent::TrainConfig;
use tlsim_core::env::EnvConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
}

/// What a config file (or manifest) contributes besides `RunConfig`.
#[derive(Debug, Clone, Default)]
pub struct FileLayer {
    pub seed: Option<u64>,
    pub command: Option<String>,
    pub inputs: Map<String, Value>,
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<(RunConfig, FileLayer), CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("serialisable");
    let mut layer = FileLayer::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("config {}: {e}", path.display())))?;
        let Value::Object(mut file) = file else {
            return Err(CliError::Domain(format!("config {}: expected a JSON object", path.display())));
        };
        layer.seed = match file.remove("seed") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| CliError::Domain("config key `seed` must be a non-negative integer".into()))?),
        };
        layer.command = file.remove("command").and_then(|v| v.as_str().map(str::to_string));
        if let Some(Value::Object(inputs)) = file.remove("inputs") {
            layer.inputs = inputs;
        }
        // a manifest nests the parameters under "config"
        let params = match file.remove("config") {
            Some(Value::Object(inner)) => inner,
            _ => file.into_iter().filter(|(k, _)| k == "env" || k == "train").collect(),
        };
        merge(&mut value, &Value::Object(params), "")?;
    }
    for spec in overrides {
        let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Domain(format!("--set expects key=value, got `{spec}`")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Domain(format!("config: {e}")))?;
    config.train.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    Ok((config, layer))
}

/// Overlays `patch` on `base`, rejecting keys the defaults do not have so a
/// typo never silently falls back to a default.
fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| CliError::Domain(format!("unknown config key `{key}`")))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

fn set_path(value: &mut Value, key: &str, new: Value) -> Result<(), CliError> {
    let mut slot = value;
    for part in key.split('.') {
        slot = slot.get_mut(part).ok_or_else(|| CliError::Domain(format!("unknown config key `{key}`")))?;
    }
    if slot.is_object() {
        return Err(CliError::Domain(format!("config key `{key}` is a section, not a value")));
    }
    *slot = new;
    Ok(())
}

/// Inputs for the running command, taken from the file layer only when the
/// file was written for the same command (or names none).
pub fn file_input<T: for<'de> Deserialize<'de>>(layer: &FileLayer, command: &str, key: &str) -> Result<Option<T>, CliError> {
    if layer.command.as_deref().is_some_and(|c| c != command) {
        return Ok(None);
    }
    match layer.inputs.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| CliError::Domain(format!("config input `{key}`: {e}"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkSource {
    /// Built-in archetype name or file path, as given.
    pub source: String,
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub out: String,
    pub inputs: Value,
    pub networks: Vec<NetworkSource>,
    pub config: RunConfig,
    pub wallclock_s: f64,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("serialisable");
        text.push('\n');
        crate::write_file(&dir.join("manifest.json"), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_without_file() {
        let (c, layer) = load(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(layer.seed.is_none());
    }

    #[test]
    fn file_then_flag_precedence() {
        let f = write(r#"{"seed": 4, "env": {"sim": {"spawn_probability": 0.3}}, "train": {"iterations": 7}}"#);
        let (c, layer) = load(Some(f.path()), &["env.sim.spawn_probability=0.1".into()]).unwrap();
        assert_eq!(c.env.sim.spawn_probability, 0.1);
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.train.epsilon, 0.05);
        assert_eq!(layer.seed, Some(4));
    }

    #[test]
    fn manifest_shape_is_accepted() {
        let f = write(r#"{"command": "simulate", "seed": 2, "inputs": {"steps": 10}, "config": {"train": {"batch_size": 8}}}"#);
        let (c, layer) = load(Some(f.path()), &[]).unwrap();
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(file_input::<u64>(&layer, "simulate", "steps").unwrap(), Some(10));
        assert_eq!(file_input::<u64>(&layer, "compare", "steps").unwrap(), None);
    }

    #[test]
    fn unknown_keys_rejected() {
        let f = write(r#"{"env": {"sim": {"spawn_prob": 0.3}}}"#);
        let err = load(Some(f.path()), &[]).unwrap_err();
        assert!(err.to_string().contains("env.sim.spawn_prob"), "{err}");
        assert!(load(None, &["train.nope=1".into()]).is_err());
        assert!(load(None, &["train=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_domain_errors() {
        let err = load(None, &["train.batch_size=0".into()]).unwrap_err();
        assert_eq!(err.code(), 1);
    }
}
