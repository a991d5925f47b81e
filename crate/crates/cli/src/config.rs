//! Settings resolution (flags > config file > defaults) and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use tafa_core::artifact::{self, Artifact};

use crate::CliError;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every resolved setting, keyed by flag name. Feeding this file back
    /// through `--config` reruns the command with the same settings.
    pub config: Map<String, Value>,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl Artifact for RunManifest {
    const SCHEMA: &'static str = "tafa.run_manifest";
    const VERSION: u32 = 1;
}

/// Config-file layer for one command plus a record of everything resolved.
pub struct Resolver {
    command: String,
    layer: Map<String, Value>,
    resolved: Map<String, Value>,
    seeds: Vec<u64>,
    started_at_ms: u64,
}

impl Resolver {
    /// A TOML file contributes its `[command]` table over its top-level
    /// scalars. A run manifest contributes its recorded config, and must
    /// come from the same command.
    pub fn load(command: &str, path: Option<&Path>) -> Result<Self, CliError> {
        let mut layer = Map::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            if let Ok(manifest) = artifact::from_json::<RunManifest>(&text) {
                if manifest.command != command {
                    return Err(CliError::Usage(format!(
                        "{} is a manifest of `{}`, not `{command}`",
                        path.display(),
                        manifest.command
                    )));
                }
                layer = manifest.config;
            } else {
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                let json = serde_json::to_value(&table).map_err(|e| CliError::Usage(e.to_string()))?;
                let Value::Object(top) = json else { unreachable!("TOML tables map to objects") };
                for (k, v) in &top {
                    if !v.is_object() {
                        layer.insert(k.clone(), v.clone());
                    }
                }
                if let Some(Value::Object(section)) = top.get(command) {
                    layer.extend(section.clone());
                }
            }
        }
        Ok(Resolver {
            command: command.to_string(),
            layer,
            resolved: Map::new(),
            seeds: Vec::new(),
            started_at_ms: now_ms(),
        })
    }

    fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        if let Ok(json) = serde_json::to_value(v) {
            self.resolved.insert(key.to_string(), json);
        }
    }

    pub fn opt<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.layer.get(key) {
                Some(raw) => Some(
                    serde_json::from_value(raw.clone())
                        .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn or<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn req<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("`--{key}` is required (flag or config key)")))
    }

    /// Comma-separated flag text, or a config value that is either such a
    /// string or an array. Recorded as an array.
    pub fn list<T>(&mut self, key: &str, flag: Option<String>, default: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T: Serialize + DeserializeOwned + std::str::FromStr,
    {
        let v = match (flag, self.layer.get(key)) {
            (Some(text), _) => crate::data::parse_list(key, &text)?,
            (None, Some(Value::String(text))) => crate::data::parse_list(key, text)?,
            (None, Some(raw)) => serde_json::from_value(raw.clone())
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))?,
            (None, None) => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        let v = flag || self.opt::<bool>(key, None)?.unwrap_or(false);
        self.record(key, &v);
        Ok(v)
    }

    pub fn seed(&mut self, seed: u64) {
        if !self.seeds.contains(&seed) {
            self.seeds.push(seed);
        }
    }

    /// Writes `manifest.json` into `dir` and returns its path.
    pub fn finish(self, dir: &Path, artifacts: Vec<PathBuf>) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command,
            config: self.resolved,
            seeds: self.seeds,
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at_ms: self.started_at_ms,
            finished_at_ms: now_ms(),
        };
        let path = dir.join("manifest.json");
        artifact::save(&manifest, &path)?;
        Ok(path)
    }
}
