//! Config file handling and exit codes.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use gapseg::train::TrainConfig;
use gapseg::{ModelConfig, TagSetKind};

/// Settings read from `--config`. Every key is optional; unset keys fall
/// back to the per-tag-set defaults.
///
/// ```toml
/// tagset = "bems"
/// seed = 7
/// decoder = "beam"
/// beam_width = 10
/// threshold = 90
/// embeddings = "vectors.txt"
/// embedding_dim = 300
/// hidden_size = 300
/// num_layers = 3
/// biaffine_dim = 300
/// dropout = 0.45
/// learning_rate = 0.002
/// batch_size = 32
/// max_epochs = 100
/// patience = 10
/// clip_norm = 5.0
/// freeze_embeddings = false
/// ```
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tagset: Option<String>,
    pub seed: Option<u64>,
    pub decoder: Option<String>,
    pub beam_width: Option<usize>,
    pub threshold: Option<usize>,
    pub embeddings: Option<PathBuf>,
    pub embedding_dim: Option<usize>,
    pub hidden_size: Option<usize>,
    pub num_layers: Option<usize>,
    pub biaffine_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub clip_norm: Option<f64>,
    pub freeze_embeddings: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))
            .map_err(Into::into)
    }

    /// Defaults for `kind` overridden by whatever this file sets.
    pub fn model_and_train(&self, kind: TagSetKind) -> (ModelConfig, TrainConfig) {
        let mut m = ModelConfig::for_tagset(kind);
        let mut t = TrainConfig::for_tagset(kind);
        let e = &mut m.encoder;
        e.embedding_dim = self.embedding_dim.unwrap_or(e.embedding_dim);
        e.hidden_size = self.hidden_size.unwrap_or(e.hidden_size);
        e.num_layers = self.num_layers.unwrap_or(e.num_layers);
        e.dropout = self.dropout.unwrap_or(e.dropout);
        m.biaffine_dim = self.biaffine_dim.unwrap_or(m.biaffine_dim);
        t.learning_rate = self.learning_rate.unwrap_or(t.learning_rate);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.max_epochs = self.max_epochs.unwrap_or(t.max_epochs);
        t.patience = self.patience.unwrap_or(t.patience);
        t.clip_norm = self.clip_norm.unwrap_or(t.clip_norm);
        t.seed = self.seed.unwrap_or(t.seed);
        if let Some(f) = self.freeze_embeddings {
            t.train_embeddings = !f;
        }
        (m, t)
    }
}

/// Bad invocation that clap itself cannot catch.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    use gapseg::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) => 1,
                E::Io(_) | E::Ingestion { .. } | E::Alignment { .. } | E::Checkpoint { .. } => 2,
                _ => 3,
            };
        }
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    3
}
