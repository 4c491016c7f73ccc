//! Run configuration: TOML sections `[model]`, `[train]`, `[data]` and
//! `[synth]`, every leaf overridable as `section.key=value`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::data::synth::SynthSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory (native CSV or UEA `.ts` pair); empty means the
    /// `[synth]` task is generated instead.
    pub path: String,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: String::new(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthSpec,
}

fn leaves(table: &Table, prefix: &str, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => leaves(t, &key, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn as_table(cfg: &RunConfig) -> Table {
    Table::try_from(cfg).expect("config serializes to a TOML table")
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("section is a table");
    }
    // integer literals are accepted where floats are expected
    let value = match (cur.get(last), value) {
        (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
        (Some(Value::Array(old)), Value::Array(new)) if old.iter().all(Value::is_float) => {
            Value::Array(
                new.into_iter()
                    .map(|v| v.as_integer().map_or(v.clone(), |i| Value::Float(i as f64)))
                    .collect(),
            )
        }
        (_, v) => v,
    };
    cur.insert(last.to_string(), value);
}

impl RunConfig {
    /// Every valid dotted key.
    pub fn valid_keys() -> Vec<String> {
        let mut out = Vec::new();
        leaves(&as_table(&RunConfig::default()), "", &mut out);
        let keys: BTreeSet<String> = out.into_iter().map(|(k, _)| k).collect();
        keys.into_iter().collect()
    }

    fn unknown(key: &str) -> Error {
        Error::UnknownKey {
            key: key.to_string(),
            valid: Self::valid_keys().join(", "),
        }
    }

    fn from_table(table: Table) -> Result<Self> {
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::default().merged(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn merged(&self, overlay: Table) -> Result<Self> {
        let valid: BTreeSet<String> = Self::valid_keys().into_iter().collect();
        let mut pairs = Vec::new();
        leaves(&overlay, "", &mut pairs);
        let mut base = as_table(self);
        for (key, value) in pairs {
            if !valid.contains(&key) {
                return Err(Self::unknown(&key));
            }
            set_path(&mut base, &key, value);
        }
        Self::from_table(base)
    }

    /// Applies `section.key=value` overrides.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let valid: BTreeSet<String> = Self::valid_keys().into_iter().collect();
        let mut table = as_table(self);
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{item}` is not of the form key=value"))
            })?;
            let key = key.trim();
            if !valid.contains(key) {
                return Err(Self::unknown(key));
            }
            set_path(&mut table, key, parse_value(raw.trim()));
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.path.is_empty() {
            self.synth.validate()?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex digest of the full configuration, seed included.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(&digest[..8])
    }
}
