//! Versioned JSON checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::PipelineError;
use crate::labels::PseudoLabelRecord;
use crate::oracle::patterns::PatternStore;
use crate::trainer::prototypes::Prototype;
use crate::trainer::{ProjectionHead, Sgd};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: Config,
    pub seed: u64,
    pub input_dim: usize,
    pub num_classes: usize,
    pub known_classes: BTreeSet<usize>,
    /// Epochs completed.
    pub epoch: usize,
    /// Rounds completed.
    pub round: usize,
    pub head: ProjectionHead,
    pub optimizer: Sgd,
    #[serde(default)]
    pub prototypes: Option<BTreeMap<usize, Prototype>>,
    pub patterns: PatternStore,
    pub records: Vec<PseudoLabelRecord>,
    pub processed: BTreeSet<String>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(out, self).map_err(|e| PipelineError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let c: Self = serde_json::from_str(text).map_err(|e| PipelineError::Format(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let c: Self = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))?;
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), PipelineError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PipelineError::Format(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.config.hash() != self.config_hash {
            return Err(PipelineError::Format("config hash does not match the stored config".into()));
        }
        Ok(())
    }

    /// The unlabeled-side prototypes, required for inference.
    pub fn prototypes(&self) -> Result<&BTreeMap<usize, Prototype>, PipelineError> {
        match &self.prototypes {
            Some(p) if !p.is_empty() => Ok(p),
            _ => Err(PipelineError::IncompleteCheckpoint("no prototypes".into())),
        }
    }
}
