//! The single JSON document that configures a CLI run.
//!
//! Every field has a default, and unknown keys anywhere are rejected so a
//! misspelled hyperparameter fails loudly instead of silently using the
//! default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SplitName;
use crate::train::{ToyConfig, TrainConfig};

/// Where the hierarchy comes from and how it is split.
#[derive(Default, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Edge list, `head<TAB>tail` per line.
    pub edges: Option<PathBuf>,
    /// Prebuilt split (`head_id<TAB>tail_id<TAB>label<TAB>split`); takes
    /// precedence over `edges`.
    pub split: Option<PathBuf>,
    /// `id<TAB>name` vocabulary for `split`; defaults to `vocab.tsv` next to it.
    pub vocab: Option<PathBuf>,
    /// Percentage of non-reduction closure edges added to training.
    pub closure_pct: u32,
}

/// Synthetic balanced tree for `gen-tree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub branching: usize,
    pub depth: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { branching: 3, depth: 5 }
    }
}

/// Scoring a saved table with `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `table.json` checkpoint or a realized `boxes.tsv` dump.
    pub table: Option<PathBuf>,
    pub split_name: SplitName,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            table: None,
            split_name: SplitName::Test,
        }
    }
}

/// Everything one CLI invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub tree: TreeConfig,
    pub toy: ToyConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            tree: TreeConfig::default(),
            toy: ToyConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a JSON document; errors name the offending key and position.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.closure_pct > 100 {
            return Err(Error::Config(format!(
                "data.closure_pct must be in 0..=100, got {}",
                self.data.closure_pct
            )));
        }
        if self.tree.branching == 0 {
            return Err(Error::Config("tree.branching must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.train.seed = 9;
        cfg.data.edges = Some("edges.tsv".into());
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_named() {
        let err = RunConfig::from_json(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("epochz")), "{err}");
        let err = RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = RunConfig::from_json(r#"{"train": {"init": {"seed": 1}}}"#).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn partial_nested_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"ops": {"volume_temperature": 0.1}}}"#).unwrap();
        assert_eq!(cfg.train.ops.volume_temperature, 0.1);
        assert_eq!(cfg.train.ops.intersection_temperature, 1.0);
        assert_eq!(cfg.train.epochs, TrainConfig::default().epochs);
    }
}
