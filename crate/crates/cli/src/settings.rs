//! Flag / config-file / default resolution with a record of every effective value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Effective settings for one run. Lookups consult the command-line value
/// first, then the config file, then the default, and remember the result
/// under its dotted key.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, Value>,
    resolved: BTreeMap<String, Value>,
}

impl Settings {
    /// Loads a JSON object of dotted keys. A run manifest is also accepted, in
    /// which case its recorded `config` is used.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let object = match value {
            Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => {
                map.remove("config").unwrap_or_default()
            }
            other => other,
        };
        let Value::Object(map) = object else {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        };
        Ok(Self { file: map.into_iter().collect(), resolved: BTreeMap::new() })
    }

    fn file_value<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.file
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))))
            .transpose()
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("settings are plain data");
        self.resolved.insert(key.to_string(), v);
    }

    pub fn get<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    pub fn optional<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    pub fn required<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        let flag_name = format!("--{}", key.rsplit('.').next().unwrap_or(key).replace('_', "-"));
        self.optional(key, flag)?.ok_or_else(|| CliError::Usage(format!("missing {flag_name} (config key `{key}`)")))
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.required(key, flag)
    }

    /// Output path: the flag or config value, else `file_name` inside
    /// `paths.output_dir` when that is set.
    pub fn output(&mut self, key: &str, flag: Option<PathBuf>, file_name: &str) -> Result<PathBuf, CliError> {
        if let Some(p) = self.optional::<PathBuf>(key, flag)? {
            return Ok(p);
        }
        match self.optional::<PathBuf>("paths.output_dir", None)? {
            Some(dir) => {
                let p = dir.join(file_name);
                self.record(key, &p);
                Ok(p)
            }
            None => Err(CliError::Usage(format!("missing --out (config key `{key}` or `paths.output_dir`)"))),
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, Value> {
        &self.resolved
    }
}
