//! `--config` files: a JSON object or `key=value` lines. Keys use the flag
//! spelling (`learning-rate` and `learning_rate` are the same key).

use std::sync::Mutex;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    used: Mutex<BTreeSet<String>>,
}

fn norm(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| CliError::Validation(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        if text.trim_start().starts_with('{') {
            let obj: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(text).map_err(|e| e.to_string())?;
            for (k, v) in obj {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Null => continue,
                    other => other.to_string(),
                };
                values.insert(norm(&k), v);
            }
        } else {
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
                values.insert(norm(k), v.trim().to_string());
            }
        }
        Ok(ConfigFile { values, used: Mutex::default() })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let key = norm(key);
        let Some(raw) = self.values.get(&key) else { return Ok(None) };
        self.used.lock().unwrap().insert(key.clone());
        raw.parse()
            .map(Some)
            .map_err(|e| CliError::Validation(format!("config key `{key}`: cannot parse `{raw}`: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    pub fn unused(&self) -> Vec<String> {
        let used = self.used.lock().unwrap();
        self.values.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_syntaxes() {
        let a = ConfigFile::parse("# comment\nepochs = 5\nlearning_rate=0.01\n").unwrap();
        assert_eq!(a.get::<usize>("epochs").unwrap(), Some(5));
        assert_eq!(a.get::<f64>("learning-rate").unwrap(), Some(0.01));
        let b = ConfigFile::parse(r#"{"epochs": 7, "no-bkg": true, "split": "test", "seed": null}"#).unwrap();
        assert_eq!(b.get::<usize>("epochs").unwrap(), Some(7));
        assert!(b.flag("no_bkg").unwrap());
        assert_eq!(b.get::<String>("split").unwrap().as_deref(), Some("test"));
        assert_eq!(b.get::<u64>("seed").unwrap(), None);
    }

    #[test]
    fn errors_and_unused() {
        assert!(ConfigFile::parse("novalue\n").is_err());
        let c = ConfigFile::parse("epochs=x\nextra=1\n").unwrap();
        assert!(c.get::<usize>("epochs").is_err());
        assert_eq!(c.unused(), ["extra"]);
    }
}
