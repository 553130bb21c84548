//! Per-sample pseudo-label bookkeeping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Cluster,
    PatternMatch,
    ConsensusReassign,
    LowConfidenceReassign,
}

/// Current pseudo-label of one unlabeled sample. `previous` is the label the
/// sample held before the most recent reassignment step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub sample_id: String,
    pub current: usize,
    pub previous: Option<usize>,
    pub changed: bool,
    pub source: LabelSource,
    /// Set when an oracle failure left this label un-reviewed.
    #[serde(default)]
    pub stale: bool,
}

impl PseudoLabelRecord {
    pub fn new(
        sample_id: impl Into<String>,
        current: usize,
        previous: Option<usize>,
        source: LabelSource,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            current,
            previous,
            changed: previous.is_some_and(|p| p != current),
            source,
            stale: false,
        }
    }

    pub fn from_cluster(sample_id: impl Into<String>, label: usize) -> Self {
        Self::new(sample_id, label, None, LabelSource::Cluster)
    }

    /// Prototype-loss weight: `rho` for changed pseudo-labels, 1 otherwise.
    pub fn weight(&self, rho: f64) -> f64 {
        if self.changed {
            rho
        } else {
            1.0
        }
    }
}
