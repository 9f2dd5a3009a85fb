//! Run configuration: a TOML key-value document with dotted sections,
//! overridable per key from the command line.

use std::path::{Path, PathBuf};

use fusion_core::model::ModelConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, IoContext, Result};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "FUSION_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    CrossView,
    CrossSubject,
    /// Every sample trains; nothing is held out.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset directory holding `manifest.json`.
    pub path: String,
    pub split: SplitKind,
    pub train_subjects: Vec<u32>,
    /// Directory written by `prep`; empty means compute extrema and boxes on load.
    pub prep: String,
    /// Drop samples whose files fail to load (logged to stderr) instead of failing.
    pub skip_corrupt: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: String::new(),
            split: SplitKind::CrossView,
            train_subjects: fusion_core::splits::NTU_CROSS_SUBJECT_TRAIN_IDS.to_vec(),
            prep: String::new(),
            skip_corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    /// Single-threaded, wall-clock-free outputs.
    pub deterministic: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            deterministic: true,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn to_table(c: &Config) -> Table {
    Table::try_from(c).expect("config serializes to a table")
}

/// Dotted key → leaf value for every leaf of a table.
fn leaves(t: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => leaves(inner, &key, out),
            _ => out.push(key),
        }
    }
}

fn lookup<'a>(t: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = t.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn set_path(t: &mut Table, key: &str, value: Value) {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = t;
    for p in &parts[..parts.len() - 1] {
        cur = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())).as_table_mut().unwrap();
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
}

/// Interpret `raw` as a TOML value shaped like `like`; bare words become strings.
fn coerce(raw: &str, like: Option<&Value>) -> Value {
    let parsed = format!("v = {raw}").parse::<Table>().ok().and_then(|mut t| t.remove("v"));
    match (parsed, like) {
        (Some(Value::Integer(i)), Some(Value::Float(_))) => Value::Float(i as f64),
        (Some(v), Some(Value::String(_))) if !v.is_str() => Value::String(raw.to_string()),
        (Some(v), _) => v,
        (None, _) => Value::String(raw.to_string()),
    }
}

/// A key is known if it names a default leaf, or sits below a default leaf
/// (an enum field written as a table, such as `head_norm = { dropout = 0.5 }`).
fn is_known(defaults: &Table, key: &str) -> bool {
    if lookup(defaults, key).is_some() {
        return true;
    }
    let parts: Vec<&str> = key.split('.').collect();
    (1..parts.len()).any(|n| lookup(defaults, &parts[..n].join(".")).is_some_and(|v| !v.is_table()))
}

impl Config {
    /// Parse a document; every key must exist in the default configuration.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let doc: Table = text.parse().map_err(|e| Error::Usage(format!("{}: {e}", origin.display())))?;
        let known = to_table(&Config::default());
        let mut keys = Vec::new();
        leaves(&doc, "", &mut keys);
        if let Some(k) = keys.iter().find(|k| !is_known(&known, k)) {
            return Err(Error::Usage(format!("{}: unknown config key `{k}`", origin.display())));
        }
        Value::Table(doc).try_into().map_err(|e| Error::Usage(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text, path)
    }

    /// Explicit path, else `$FUSION_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(&PathBuf::from(p)),
                _ => Ok(Self::default()),
            },
        }
    }

    /// Apply one `dotted.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let mut table = to_table(self);
        if !is_known(&table, key) {
            return Err(Error::Usage(format!("unknown config key `{key}`")));
        }
        let existing = lookup(&table, key);
        let value = coerce(raw.trim(), existing);
        match key.rsplit_once('.') {
            // `model.head_norm.dropout=0.3` turns a unit variant into a data variant.
            Some((parent, leaf)) if existing.is_none() => {
                let mut t = Table::new();
                t.insert(leaf.to_string(), value);
                set_path(&mut table, parent, Value::Table(t));
            }
            _ => set_path(&mut table, key, value),
        }
        *self = Value::Table(table).try_into().map_err(|e| Error::Usage(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
