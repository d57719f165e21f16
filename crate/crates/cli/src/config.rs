//! Resolved run settings: defaults, then a config file, then flags.
//!
//! Config files are `key = value` lines with `#` comments. Any artifact the
//! tool writes can also be passed as a config file: CSV artifacts carry
//! `#@ key = value` header lines, JSON artifacts a `"config"` object and model
//! files `meta.config.*` entries.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use quantile_lstm::lstm::io::model_from_text;

use crate::CliError;

pub const ECHO_PREFIX: &str = "#@ ";
pub const MODEL_META_PREFIX: &str = "config.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(command: &'static str, defaults: &[(&str, &str)]) -> Self {
        Self {
            command,
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    /// Applies entries read from a config file. Unknown keys are errors; a
    /// `command` entry must name this command.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (key, value) in parse_config_text(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))? {
            if key == "command" {
                if value != self.command {
                    return Err(CliError::Config(format!(
                        "{} was written by `{value}`, not `{}`",
                        path.display(),
                        self.command
                    )));
                }
                continue;
            }
            self.set_known(&key, value)?;
        }
        Ok(())
    }

    /// Applies a flag given on the command line.
    pub fn flag<T: Display>(&mut self, key: &str, value: Option<T>) -> Result<(), CliError> {
        if let Some(v) = value {
            self.set_known(key, v.to_string())?;
        }
        Ok(())
    }

    fn set_known(&mut self, key: &str, value: String) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown setting `{key}` for `{}`", self.command))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("setting `{key}` not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Config(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        match self.raw(key) {
            "" => Err(CliError::Usage(format!("missing required setting `--{key}`"))),
            v => Ok(v),
        }
    }

    /// Comma-separated list; empty means none.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    /// `command` first, then every setting in key order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![("command".to_string(), self.command.to_string())];
        out.extend(self.values.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn echo_lines(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{ECHO_PREFIX}{k} = {v}\n"))
            .collect()
    }

    pub fn to_json_map(&self) -> serde_json::Map<String, serde_json::Value> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (k, serde_json::Value::String(v)))
            .collect()
    }

    pub fn model_meta(&self) -> BTreeMap<String, String> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (format!("{MODEL_META_PREFIX}{k}"), v))
            .collect()
    }
}

/// Extracts `(key, value)` pairs from a config file or any artifact.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, String> {
    let trimmed = text.trim_start();
    if trimmed.starts_with("format = quantile-lstm-model") {
        let (_, meta) = model_from_text(text).map_err(|e| e.to_string())?;
        let entries: Vec<_> = meta
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(MODEL_META_PREFIX).map(|k| (k.to_string(), v)))
            .collect();
        return if entries.is_empty() {
            Err("model file carries no embedded config".into())
        } else {
            Ok(entries)
        };
    }
    if trimmed.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let config = value
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or("JSON artifact has no `config` object")?;
        return config
            .iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => Ok((k.clone(), s.clone())),
                other => Ok((k.clone(), other.to_string())),
            })
            .collect();
    }
    if text.lines().any(|l| l.starts_with(ECHO_PREFIX)) {
        return text
            .lines()
            .filter_map(|l| l.strip_prefix(ECHO_PREFIX))
            .map(split_entry)
            .collect();
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(split_entry)
        .collect()
}

fn split_entry(line: &str) -> Result<(String, String), String> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| format!("expected `key = value`, got `{line}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{line}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}
