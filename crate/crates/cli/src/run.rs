//! Run directories and layered configuration.
//!
//! A run directory holds `config.json` (the fully resolved config),
//! `run.json` (command, tool version, seed, completion flag) and the
//! command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A JSON object being assembled from a config file and flag overrides.
#[derive(Debug, Clone, Default)]
pub struct Layered(Map<String, Value>);

impl Layered {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
            Value::Object(map) => Ok(Self(map)),
            _ => bail!("config {} must be a JSON object", path.display()),
        }
    }

    /// Sets `path` (object keys) to `value`, creating intermediate objects.
    pub fn set(&mut self, path: &[&str], value: impl Serialize) -> Result<()> {
        let value = serde_json::to_value(value)?;
        let (last, parents) = path.split_last().expect("non-empty key path");
        let mut node = &mut self.0;
        for key in parents {
            let child = node.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = match child {
                Value::Object(m) => m,
                _ => bail!("config key {key} must be an object"),
            };
        }
        node.insert(last.to_string(), value);
        Ok(())
    }

    pub fn set_opt<T: Serialize>(&mut self, path: &[&str], value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(path, v),
            None => Ok(()),
        }
    }

    pub fn contains(&self, path: &[&str]) -> bool {
        let mut node = &self.0;
        for (i, key) in path.iter().enumerate() {
            match node.get(*key) {
                Some(Value::Object(m)) if i + 1 < path.len() => node = m,
                Some(_) if i + 1 == path.len() => return true,
                _ => return false,
            }
        }
        false
    }

    /// Deserializes into the typed config; unknown keys are errors.
    pub fn resolve<T: DeserializeOwned>(self) -> Result<T> {
        serde_json::from_value(Value::Object(self.0)).context("invalid config")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunInfo {
    command: String,
    version: String,
    seed: u64,
    complete: bool,
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    info: RunInfo,
}

impl RunDir {
    /// Prepares `path` for a run. Returns `None` when `resume` finds a
    /// completed run of the same command and config, which is then left
    /// untouched. An incomplete run is redone from scratch.
    pub fn open<C: Serialize>(path: &Path, command: &str, config: &C, seed: u64, resume: bool) -> Result<Option<Self>> {
        let resolved = serde_json::to_value(config)?;
        let info_path = path.join("run.json");
        if info_path.exists() {
            if !resume {
                bail!("{} already holds a run; pass --resume or pick another --out", path.display());
            }
            let old: RunInfo = serde_json::from_str(&fs::read_to_string(&info_path)?)
                .with_context(|| format!("reading {}", info_path.display()))?;
            let old_cfg: Value = serde_json::from_str(&fs::read_to_string(path.join("config.json"))?)?;
            if old.command != command || old_cfg != resolved {
                bail!(
                    "{} holds a different run ({} with another config); refusing to resume",
                    path.display(),
                    old.command
                );
            }
            if old.complete {
                return Ok(None);
            }
        }
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let dir = Self {
            path: path.to_path_buf(),
            info: RunInfo {
                command: command.to_string(),
                version: VERSION.to_string(),
                seed,
                complete: false,
            },
        };
        dir.write("config.json", serde_json::to_string_pretty(&resolved)? + "\n")?;
        dir.write_info()?;
        Ok(Some(dir))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn write_info(&self) -> Result<()> {
        self.write_json("run.json", &self.info)
    }

    pub fn finish(mut self) -> Result<()> {
        self.info.complete = true;
        self.write_info()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_builds_nested_objects() {
        let mut l = Layered::default();
        l.set(&["a", "b"], 1).unwrap();
        l.set(&["a", "c"], "x").unwrap();
        assert!(l.contains(&["a", "b"]));
        assert!(!l.contains(&["a", "d"]));
        assert!(!l.contains(&["b"]));
        let v: Value = l.resolve().unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": 1, "c": "x"}}));
    }

    #[test]
    fn set_rejects_scalar_parent() {
        let mut l = Layered::default();
        l.set(&["a"], 1).unwrap();
        assert!(l.set(&["a", "b"], 2).is_err());
    }
}
