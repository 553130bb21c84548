//! Pattern store and pattern-text embedding.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PatternOracleError;
use crate::data::{DatasetBundle, Split};
use crate::text;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternOrigin {
    Extracted,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub pattern_id: usize,
    /// Class id this pattern describes.
    pub owner: usize,
    pub text: String,
    /// Superseded texts, oldest first.
    pub revisions: Vec<String>,
    pub origin: PatternOrigin,
    /// Embedding of `text` in the input embedding space; projected through
    /// the current head whenever prototypes are built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Field set of the on-disk pattern store.
#[derive(Serialize, Deserialize)]
struct StoredPattern {
    pattern_id: usize,
    owner: usize,
    text: String,
    revisions: Vec<String>,
    origin: PatternOrigin,
}

/// Maps pattern text to a vector in the input embedding space.
pub trait PatternEmbedder {
    fn embed(&self, text: &str) -> Option<Vec<f64>>;
}

/// Embeds a text as the overlap-weighted mean of the training embeddings
/// whose texts share salient tokens with it. Only labeled and unlabeled
/// samples are indexed; test samples never are.
#[derive(Debug, Clone)]
pub struct CorpusEmbedder {
    stopwords: BTreeSet<String>,
    entries: Vec<(BTreeSet<String>, Vec<f64>)>,
    dim: usize,
}

impl CorpusEmbedder {
    pub fn from_bundle(bundle: &DatasetBundle) -> Self {
        let stopwords = text::default_stopwords();
        let entries = bundle
            .samples
            .iter()
            .filter(|s| s.split != Split::Test)
            .filter_map(|s| {
                let toks = text::salient_tokens(s.text.as_deref()?, &stopwords);
                (!toks.is_empty()).then(|| (toks, s.embedding.clone()))
            })
            .collect();
        Self {
            stopwords,
            entries,
            dim: bundle.dim,
        }
    }
}

impl PatternEmbedder for CorpusEmbedder {
    fn embed(&self, pattern: &str) -> Option<Vec<f64>> {
        let toks = text::salient_tokens(pattern, &self.stopwords);
        let mut acc = vec![0.0; self.dim];
        let mut any = false;
        for (t, x) in &self.entries {
            let w = toks.intersection(t).count();
            if w > 0 {
                vector::axpy(&mut acc, w as f64, x);
                any = true;
            }
        }
        if any {
            vector::normalized(&acc)
        } else {
            None
        }
    }
}

/// Active patterns, at most one per owner, in creation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternStore {
    patterns: Vec<Pattern>,
    next_id: usize,
}

impl PatternStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pattern> {
        self.patterns.iter()
    }

    pub fn active(&self) -> Vec<&Pattern> {
        self.patterns.iter().collect()
    }

    pub fn get(&self, pattern_id: usize) -> Option<&Pattern> {
        self.patterns.iter().find(|p| p.pattern_id == pattern_id)
    }

    pub fn by_owner(&self, owner: usize) -> Option<&Pattern> {
        self.patterns.iter().find(|p| p.owner == owner)
    }

    pub fn owner_of(&self, pattern_id: usize) -> Option<usize> {
        self.get(pattern_id).map(|p| p.owner)
    }

    /// Installs an extracted pattern for `owner`. An existing pattern of the
    /// same owner keeps its id and moves its old text into `revisions`.
    pub fn set_extracted(&mut self, owner: usize, text: String, embedding: Option<Vec<f64>>) -> usize {
        if let Some(p) = self.patterns.iter_mut().find(|p| p.owner == owner) {
            let old = std::mem::replace(&mut p.text, text);
            p.revisions.push(old);
            p.origin = PatternOrigin::Extracted;
            p.embedding = embedding;
            return p.pattern_id;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.patterns.push(Pattern {
            pattern_id: id,
            owner,
            text,
            revisions: Vec::new(),
            origin: PatternOrigin::Extracted,
            embedding,
        });
        id
    }

    /// Replaces the text of a pattern after refinement. Returns false when
    /// the id is unknown or the text is unchanged.
    pub fn revise(&mut self, pattern_id: usize, text: String, embedding: Option<Vec<f64>>) -> bool {
        let Some(p) = self.patterns.iter_mut().find(|p| p.pattern_id == pattern_id) else {
            return false;
        };
        if p.text == text {
            return false;
        }
        let old = std::mem::replace(&mut p.text, text);
        p.revisions.push(old);
        p.origin = PatternOrigin::Refined;
        p.embedding = embedding;
        true
    }

    pub fn save(&self, path: &Path) -> Result<(), PatternOracleError> {
        let stored: Vec<StoredPattern> = self
            .patterns
            .iter()
            .map(|p| StoredPattern {
                pattern_id: p.pattern_id,
                owner: p.owner,
                text: p.text.clone(),
                revisions: p.revisions.clone(),
                origin: p.origin,
            })
            .collect();
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(out, &stored).map_err(std::io::Error::from)?;
        Ok(())
    }

    /// Loads a saved store; embeddings are recomputed with `embedder`.
    pub fn load(path: &Path, embedder: &dyn PatternEmbedder) -> Result<Self, PatternOracleError> {
        let stored: Vec<StoredPattern> = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| PatternOracleError::Config(format!("pattern store: {e}")))?;
        let mut owners = BTreeSet::new();
        let mut patterns = Vec::with_capacity(stored.len());
        for s in stored {
            if !owners.insert(s.owner) {
                return Err(PatternOracleError::Config(format!("owner {} has two patterns", s.owner)));
            }
            patterns.push(Pattern {
                embedding: embedder.embed(&s.text),
                pattern_id: s.pattern_id,
                owner: s.owner,
                text: s.text,
                revisions: s.revisions,
                origin: s.origin,
            });
        }
        let next_id = patterns.iter().map(|p| p.pattern_id + 1).max().unwrap_or(0);
        Ok(Self { patterns, next_id })
    }
}
