//! Run configuration: defaults, then a config file, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use connective_core::corpus::SplitSpec;
use connective_core::da::DaConfig;
use connective_core::wordpairs::WordPairsConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the seed of every component.
    pub seed: Option<u64>,
    pub split: SplitSpec,
    pub da: DaConfig,
    pub wordpairs: WordPairsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    /// JSON when the first non-blank character is `{`, otherwise
    /// `section.key = value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            key_values(text)?
        };
        Ok(serde_json::from_value(value)?)
    }

    /// Pushes the global seed down into each component.
    pub fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(seed) = flag.or(self.seed) {
            self.seed = Some(seed);
            self.split.seed = seed;
            self.da.seed = seed;
            self.wordpairs.seed = seed;
        }
    }
}

fn key_values(text: &str) -> Result<Value> {
    let mut root = Map::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value", idx + 1);
        };
        let value = value.trim();
        // Bare words that are not valid JSON (e.g. `adam`) are strings.
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one item");
        let mut node = &mut root;
        for p in parents {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .with_context(|| format!("line {}: {p} is not a section", idx + 1))?;
        }
        node.insert(last.to_string(), parsed);
    }
    Ok(Value::Object(root))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let kv =
            RunConfig::parse("seed = 7\nda.learning_rate = 0.01 # faster\nda.optimizer = sgd\nsplit.dev_per_class=3")
                .unwrap();
        let json = RunConfig::parse(
            r#"{"seed": 7, "da": {"learning_rate": 0.01, "optimizer": "sgd"}, "split": {"dev_per_class": 3}}"#,
        )
        .unwrap();
        assert_eq!(kv, json);
        assert_eq!(kv.da.batch_size, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("da.learning_rat = 0.1").is_err());
        assert!(RunConfig::parse("nonsense").is_err());
    }

    #[test]
    fn seed_reaches_every_component() {
        let mut c = RunConfig::parse("seed = 3").unwrap();
        c.resolve_seed(Some(9));
        assert_eq!((c.split.seed, c.da.seed, c.wordpairs.seed), (9, 9, 9));
    }
}
