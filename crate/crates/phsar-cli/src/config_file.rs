//! `key = value` config files. Keys mirror the long flag names; values parse
//! like their flag counterparts; command-line flags override the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use phsar_core::{Error, Result};

/// A parsed config file with usage tracking, so unknown or unused keys can
/// be reported.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    used: std::cell::RefCell<Vec<String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Argument(format!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile {
            values,
            used: Default::default(),
        })
    }

    /// Typed lookup by flag name (without the leading dashes).
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => {
                self.used.borrow_mut().push(key.to_string());
                raw.parse::<T>().map(Some).map_err(|_| {
                    Error::Argument(format!("config key {key}: cannot parse {raw:?}"))
                })
            }
        }
    }

    /// Keys present in the file that no lookup consumed.
    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.values
            .keys()
            .filter(|k| !used.contains(k))
            .cloned()
            .collect()
    }
}

/// Flag value if given, else config value, else default.
pub fn resolve<T: FromStr + Copy>(
    flag: Option<T>,
    config: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(config.get::<T>(key)?.unwrap_or(default)),
    }
}

/// Boolean switches: `--flag` on the command line wins; otherwise the config
/// may say `key = true`.
pub fn resolve_switch(flag: bool, config: &ConfigFile, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    Ok(config.get::<bool>(key)?.unwrap_or(false))
}
