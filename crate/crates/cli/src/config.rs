//! Run configuration: defaults, an optional TOML file and command-line
//! flags, merged in that order with the origin of every value recorded.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mat_core::training::TrainConfig;
use mat_core::ModelConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of HR training PNGs.
    pub train_dir: Option<PathBuf>,
    /// Optional held-out directory scored after training.
    pub val_dir: Option<PathBuf>,
    pub ckpt_dir: Option<PathBuf>,
    /// Copy of the loss log.
    pub log_file: Option<PathBuf>,
}

const DATA_KEYS: [&str; 4] = ["train_dir", "val_dir", "ckpt_dir", "log_file"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Default,
    File,
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Default => "default",
            Origin::File => "file",
            Origin::Flag => "flag",
        })
    }
}

/// A resolved configuration and where each key came from.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub origins: BTreeMap<String, Origin>,
    values: BTreeMap<String, Value>,
}

impl Resolved {
    #[cfg(test)]
    pub fn origin(&self, key: &str) -> Option<Origin> {
        self.origins.get(key).copied()
    }

    /// One `key = value  [origin]` line per key.
    pub fn describe(&self) -> String {
        let width = self.origins.keys().map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for (key, origin) in &self.origins {
            let value = self.values.get(key).map_or_else(|| "(unset)".to_string(), Value::to_string);
            out.push_str(&format!("  {key:<width$} = {value}  [{origin}]\n"));
        }
        out
    }
}

/// Flag-level overrides as dotted keys, e.g. `train.lr0`.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    entries: Vec<(String, Value)>,
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn set_opt<V: Into<Value>>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Parse a `section.key=value` assignment; the value uses TOML syntax
    /// and falls back to a bare string.
    pub fn parse_assignment(&mut self, text: &str) -> Result<(), CliError> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{text}`")))?;
        let raw = raw.trim();
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key.trim(), value);
        Ok(())
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) if prefix.is_empty() => flatten(&key, t, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

fn unflatten(values: &BTreeMap<String, Value>) -> Table {
    let mut root = Table::new();
    for (key, v) in values {
        let (section, leaf) = key.split_once('.').unwrap_or(("", key));
        let entry = root.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = entry {
            t.insert(leaf.to_string(), v.clone());
        }
    }
    root
}

pub fn read_file(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Merge defaults, `file` and `flags`. The model preset and scale are
/// resolved first (`model.preset`, `model.scale`) because they select the
/// default model values.
pub fn resolve(file: Option<&Table>, flags: &Overrides) -> Result<Resolved, CliError> {
    let mut file_values = BTreeMap::new();
    if let Some(t) = file {
        for (section, v) in t {
            if !matches!(section.as_str(), "model" | "train" | "data") {
                return Err(CliError::Usage(format!("unknown config section `{section}` (model|train|data)")));
            }
            if !v.is_table() {
                return Err(CliError::Usage(format!("config key `{section}` must be a table")));
            }
        }
        flatten("", t, &mut file_values);
    }
    let flag_values: BTreeMap<String, Value> = flags.entries.iter().cloned().collect();
    let pick = |key: &str| flag_values.get(key).or_else(|| file_values.get(key)).cloned();

    let preset = match pick("model.preset") {
        Some(Value::String(s)) => s,
        Some(other) => return Err(CliError::Usage(format!("model.preset must be a string, got {other}"))),
        None => "light".to_string(),
    };
    let scale = match pick("model.scale") {
        Some(Value::Integer(s)) if s > 0 => s as usize,
        Some(other) => return Err(CliError::Usage(format!("model.scale must be a positive integer, got {other}"))),
        None => 2,
    };
    let base = RunConfig {
        model: ModelConfig::preset(&preset, scale).map_err(CliError::Core)?,
        train: TrainConfig::default(),
        data: DataConfig::default(),
    };
    let mut values = BTreeMap::new();
    let base_table = Value::try_from(&base).map_err(|e| CliError::Usage(e.to_string()))?;
    flatten("", base_table.as_table().expect("struct serializes to a table"), &mut values);
    values.insert("model.preset".into(), Value::String(preset));

    let mut origins: BTreeMap<String, Origin> = values.keys().map(|k| (k.clone(), Origin::Default)).collect();
    for key in DATA_KEYS {
        origins.entry(format!("data.{key}")).or_insert(Origin::Default);
    }
    for (layer, origin) in [(&file_values, Origin::File), (&flag_values, Origin::Flag)] {
        for (key, v) in layer {
            if !origins.contains_key(key) {
                return Err(CliError::Usage(format!("unknown config key `{key}`")));
            }
            values.insert(key.clone(), v.clone());
            origins.insert(key.clone(), origin);
        }
    }

    let mut table = unflatten(&values);
    if let Some(Value::Table(m)) = table.get_mut("model") {
        m.remove("preset");
    }
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {}", e.message())))?;
    config.model.validate().map_err(CliError::Core)?;
    config.train.validate().map_err(CliError::Core)?;
    Ok(Resolved {
        config,
        origins,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_only() {
        let r = resolve(None, &Overrides::default()).unwrap();
        assert_eq!(r.config.model, ModelConfig::light(2));
        assert_eq!(r.config.train, TrainConfig::default());
        assert!(r.origins.values().all(|o| *o == Origin::Default));
        assert!(r.describe().contains("data.train_dir"));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = table("[train]\nlr0 = 1e-3\nbatch = 4\n[model]\npreset = \"tiny\"\n");
        let mut flags = Overrides::default();
        flags.set("train.lr0", 5e-4);
        let r = resolve(Some(&file), &flags).unwrap();
        assert_eq!(r.config.train.lr0, 5e-4);
        assert_eq!(r.origin("train.lr0"), Some(Origin::Flag));
        assert_eq!(r.config.train.batch, 4);
        assert_eq!(r.origin("train.batch"), Some(Origin::File));
        assert_eq!(r.config.train.patch, 64);
        assert_eq!(r.origin("train.patch"), Some(Origin::Default));
        assert_eq!(r.config.model.channels, 24);
        assert_eq!(r.origin("model.channels"), Some(Origin::Default));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[train]\nlr = 1.0\n", "[extra]\nx = 1\n", "[model]\nchanels = 3\n"] {
            assert!(resolve(Some(&table(text)), &Overrides::default()).is_err(), "{text}");
        }
        let mut flags = Overrides::default();
        flags.set("data.nope", "x");
        assert!(resolve(None, &flags).is_err());
    }

    #[test]
    fn assignment_parsing() {
        let mut o = Overrides::default();
        o.parse_assignment("train.milestones=[10, 20]").unwrap();
        o.parse_assignment("data.train_dir=some/dir").unwrap();
        o.parse_assignment("model.dilation=\"max\"").unwrap();
        let r = resolve(None, &o).unwrap();
        assert_eq!(r.config.train.milestones, vec![10, 20]);
        assert_eq!(r.config.data.train_dir, Some(PathBuf::from("some/dir")));
        assert!(o.parse_assignment("novalue").is_err());
    }

    #[test]
    fn invalid_values_are_validation_errors() {
        let mut o = Overrides::default();
        o.set("train.lr0", -1.0);
        assert!(resolve(None, &o).is_err());
    }
}
