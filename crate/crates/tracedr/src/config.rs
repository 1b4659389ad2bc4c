//! TOML configuration files.
//!
//! A file may contain `[generate]`, `[synth]`, `[train]` and `[serve]`
//! tables. Each table holds a subset of the corresponding settings and is
//! laid over the defaults (or the chosen preset); command-line flags are
//! applied last.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub generate: Option<toml::Table>,
    pub synth: Option<toml::Table>,
    pub train: Option<toml::Table>,
    pub serve: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load_opt(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
    pub default_top_k: usize,
    pub default_top_evidence: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8080".into(),
            default_top_k: tracedr_core::metrics::DEFAULT_EVAL_K,
            default_top_evidence: tracedr_core::pipeline::DEFAULT_TOP_EVIDENCE,
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `base` with the keys of `table` laid over it. Unknown keys are rejected
/// when `T` denies them.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: Option<&toml::Table>, section: &str) -> anyhow::Result<T> {
    let Some(table) = table else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let mut value = serde_json::to_value(base)?;
    merge(&mut value, serde_json::to_value(table)?);
    serde_path_to_error::deserialize(value)
        .map_err(|e| anyhow::anyhow!("[{section}] {}: {}", e.path(), e.inner()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tracedr_benchgen::GenConfig;
    use tracedr_core::gnn::{Preset, TrainConfig};

    #[test]
    fn partial_tables_override_only_their_keys() {
        let file = FileConfig::parse(
            "[train]\nepochs = 2\ntask_weights = { entity = 0.5, evidence = 0.5 }\n\
             [generate]\nn_patients = 50\nquotas = { pregnant = 0.05 }\n",
        )
        .unwrap();
        let t = overlay(&TrainConfig::preset(Preset::Paper), file.train.as_ref(), "train").unwrap();
        assert_eq!(t.epochs, 2);
        assert_eq!(t.task_weights.entity, 0.5);
        assert_eq!(t.lr, 1e-5);
        let g = overlay(&GenConfig::default(), file.generate.as_ref(), "generate").unwrap();
        assert_eq!(g.n_patients, 50);
        assert_eq!(g.quotas.pregnant, 0.05);
        assert_eq!(g.quotas.reduced_renal, 0.094);
    }

    #[test]
    fn unknown_keys_are_named() {
        let file = FileConfig::parse("[train]\nepochz = 2\n").unwrap();
        let err = overlay(&TrainConfig::preset(Preset::Desk), file.train.as_ref(), "train").unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        assert!(FileConfig::parse("[trian]\n").is_err());
    }
}
