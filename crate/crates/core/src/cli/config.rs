//! Layered settings: command-line flags over a `key = value` file over
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use super::UsageError;

/// One option of a subcommand.
#[derive(Clone, Copy)]
pub struct Opt {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
    /// Boolean switch taking no value on the command line.
    pub switch: bool,
}

pub const fn opt(key: &'static str, default: &'static str, help: &'static str) -> Opt {
    Opt {
        key,
        default: Some(default),
        help,
        switch: false,
    }
}

pub const fn required(key: &'static str, help: &'static str) -> Opt {
    Opt {
        key,
        default: None,
        help,
        switch: false,
    }
}

pub const fn switch(key: &'static str, help: &'static str) -> Opt {
    Opt {
        key,
        default: Some("false"),
        help,
        switch: true,
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// underscores in keys are read as hyphens.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(
        opts: &[Opt],
        file: BTreeMap<String, String>,
        flags: BTreeMap<String, String>,
    ) -> Result<Self, UsageError> {
        for k in file.keys() {
            if !opts.iter().any(|o| o.key == k) {
                return Err(UsageError(format!("unknown config key `{k}`")));
            }
        }
        let mut values = BTreeMap::new();
        for o in opts {
            let v = flags
                .get(o.key)
                .or_else(|| file.get(o.key))
                .cloned()
                .or_else(|| o.default.map(str::to_string));
            match v {
                Some(v) => values.insert(o.key.to_string(), v),
                None => return Err(UsageError(format!("missing required option --{}", o.key))),
            };
        }
        Ok(Settings { values })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| UsageError(format!("invalid value `{raw}` for --{key}: {e}")))
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Like [`Settings::get`] but falls back to `default` for keys the
    /// subcommand does not define.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        if self.has(key) {
            self.get(key)
        } else {
            Ok(default)
        }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    /// Comma-separated list; empty string gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, UsageError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| UsageError(format!("invalid list entry `{s}` for --{key}: {e}")))
            })
            .collect()
    }

    /// The settings as a config file that reproduces them.
    pub fn to_config_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
