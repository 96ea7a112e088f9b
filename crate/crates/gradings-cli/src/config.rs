//! Flat key = value configuration with [sections]. Every key is validated
//! against the schema before any work happens; unknown keys are rejected.
//! Command-line flags override file keys.

use crate::CommonOverrides;
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Known keys, as `section.key`.
const SCHEMA: &[&str] = &[
    "data.source",
    "data.root",
    "data.mode",
    "data.bbox",
    "data.dataset",
    "data.abnormal_dataset",
    "data.model",
    "synthetic.n_normal",
    "synthetic.n_abnormal",
    "synthetic.min_len",
    "synthetic.max_len",
    "synthetic.seed",
    "experiment.scenario",
    "experiment.window",
    "experiment.model",
    "experiment.variant",
    "experiment.seed",
    "experiment.seeds",
    "experiment.split_ratio",
    "flow.num_flows",
    "flow.hidden",
    "flow.epochs",
    "flow.batch_size",
    "flow.learning_rate",
    "gmm.selection",
    "gmm.k",
    "gmm.cov_type",
    "gmm.components",
    "gmm.cov_types",
    "gmm.folds",
    "gmm.max_iters",
    "lof.k_values",
    "lof.rd_variant",
    "output.dir",
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config `{}`", path.display()))?;
            cfg.parse(&text, &path.display().to_string())?;
        }
        Ok(cfg)
    }

    fn parse(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{origin}:{}: expected `key = value`, got `{raw}`", idx + 1);
            };
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if !SCHEMA.contains(&full.as_str()) {
                bail!("{origin}:{}: unknown configuration key `{full}`", idx + 1);
            }
            self.values.insert(full, value.trim().to_string());
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: impl Display) {
        debug_assert!(SCHEMA.contains(&key));
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn apply_overrides(&mut self, args: &CommonOverrides) {
        if let Some(v) = &args.seed {
            self.set("experiment.seed", v);
        }
        if let Some(v) = &args.data_root {
            self.set("data.root", v.display());
            self.values
                .entry("data.source".into())
                .or_insert_with(|| "geolife".into());
        }
        if let Some(v) = &args.mode {
            self.set("data.mode", v);
        }
        if let Some(v) = &args.bbox {
            self.set("data.bbox", v);
        }
        if let Some(v) = &args.window {
            self.set("experiment.window", v);
        }
        if let Some(v) = &args.model {
            self.set("experiment.model", v);
        }
        if let Some(v) = &args.variant {
            self.set("experiment.variant", v);
        }
        if let Some(v) = &args.out {
            self.set("output.dir", v.display());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(SCHEMA.contains(&key), "unknown schema key {key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn parse_key<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key `{key}` = `{raw}`: {e}")),
        }
    }

    pub fn parse_key_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Sorted echo of every resolved key for report provenance.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }
}

/// Parses a comma-separated list with a `FromStr` element type.
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| anyhow::anyhow!("bad {what} entry `{s}`: {e}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_overrides() {
        let mut cfg = Config::default();
        cfg.parse(
            "# top comment\n[data]\nsource = synthetic\n\n[experiment]\nwindow = 10 # trailing\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.get("data.source"), Some("synthetic"));
        assert_eq!(cfg.parse_key::<usize>("experiment.window").unwrap(), Some(10));

        let args = CommonOverrides {
            window: Some(20),
            ..Default::default()
        };
        cfg.apply_overrides(&args);
        assert_eq!(cfg.parse_key::<usize>("experiment.window").unwrap(), Some(20));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = Config::default();
        let err = cfg.parse("[data]\nsauce = typo\n", "test").unwrap_err();
        assert!(err.to_string().contains("data.sauce"), "{err}");
    }
}
