//! Dataset types, the JSON-lines dataset format, and the synthetic
//! imbalanced-GCD generator.
//!
//! A dataset file starts with a header record
//! `{"K": int, "dim": int, "known_classes": [int...]}` followed by one sample
//! record per line:
//! `{"id": str, "text": str|null, "embedding": [float...], "label": int|null, "split": "labeled"|"unlabeled"|"test"}`.
//!
//! Labels are dense class ids in `[0, K)`. Ground-truth labels of unlabeled
//! and test samples are only reachable through [`Sample::eval_label`]; training
//! code reads [`Sample::train_label`], which is `None` outside the labeled split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;
use crate::vector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: embedding has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: zero-norm embedding")]
    ZeroNorm { line: usize },
    #[error("line {line}: labeled sample has no label")]
    MissingLabel { line: usize },
    #[error("line {line}: {msg}")]
    InvalidLabel { line: usize, msg: String },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub text: Option<String>,
    pub embedding: Vec<f64>,
    pub split: Split,
    label: Option<usize>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        text: Option<String>,
        embedding: Vec<f64>,
        label: Option<usize>,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            text,
            embedding,
            split,
            label,
        }
    }

    /// The label visible to training: present only for labeled samples.
    pub fn train_label(&self) -> Option<usize> {
        match self.split {
            Split::Labeled => self.label,
            _ => None,
        }
    }

    /// Ground truth for evaluation and diagnostics. Never read by training.
    pub fn eval_label(&self) -> Option<usize> {
        self.label
    }

    pub fn text_or_empty(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub known_classes: BTreeSet<usize>,
    pub dim: usize,
    /// Optional sidecar map from class id to a human-readable name.
    pub class_names: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
}

impl DatasetBundle {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for s in &self.samples {
            match s.split {
                Split::Labeled => c.labeled += 1,
                Split::Unlabeled => c.unlabeled += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    pub fn novel_classes(&self) -> BTreeSet<usize> {
        (0..self.num_classes)
            .filter(|c| !self.known_classes.contains(c))
            .collect()
    }

    /// Checks the bundle-level invariants. Line numbers in errors refer to the
    /// file layout (header on line 1).
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::Invalid(format!(
                "K must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.known_classes.len() > self.num_classes {
            return Err(DataError::Invalid(format!(
                "{} known classes exceed K = {}",
                self.known_classes.len(),
                self.num_classes
            )));
        }
        if let Some(&c) = self.known_classes.iter().find(|&&c| c >= self.num_classes) {
            return Err(DataError::Invalid(format!(
                "known class {c} outside [0, {})",
                self.num_classes
            )));
        }
        let mut ids = HashSet::new();
        let mut labeled_classes = BTreeSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            let line = i + 2;
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId {
                    line,
                    id: s.id.clone(),
                });
            }
            if s.embedding.len() != self.dim {
                return Err(DataError::DimensionMismatch {
                    line,
                    expected: self.dim,
                    found: s.embedding.len(),
                });
            }
            match (s.split, s.label) {
                (Split::Labeled, None) | (Split::Test, None) => {
                    return Err(DataError::MissingLabel { line })
                }
                (_, Some(l)) if l >= self.num_classes => {
                    return Err(DataError::InvalidLabel {
                        line,
                        msg: format!("label {l} outside [0, {})", self.num_classes),
                    })
                }
                (Split::Labeled, Some(l)) => {
                    if !self.known_classes.contains(&l) {
                        return Err(DataError::InvalidLabel {
                            line,
                            msg: format!("labeled sample has label {l} not in known_classes"),
                        });
                    }
                    labeled_classes.insert(l);
                }
                _ => {}
            }
        }
        if labeled_classes.len() > self.num_classes {
            return Err(DataError::Invalid(format!(
                "K = {} is smaller than the {} distinct labeled classes",
                self.num_classes,
                labeled_classes.len()
            )));
        }
        let counts = self.split_counts();
        if counts.labeled == 0 || counts.unlabeled == 0 {
            return Err(DataError::Invalid(
                "need at least one labeled and one unlabeled sample".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    #[serde(rename = "K")]
    k: usize,
    dim: usize,
    known_classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    class_names: BTreeMap<usize, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    text: Option<String>,
    embedding: Vec<f64>,
    label: Option<usize>,
    split: Split,
}

pub fn load_dataset(path: &Path, expected_k: Option<usize>) -> Result<DatasetBundle, DataError> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file), expected_k)
}

/// Parses, normalizes and validates a dataset. `expected_k`, when given, must
/// agree with the header.
pub fn read_dataset<R: BufRead>(
    reader: R,
    expected_k: Option<usize>,
) -> Result<DatasetBundle, DataError> {
    let mut lines = reader.lines().enumerate();
    let header: HeaderRecord = loop {
        match lines.next() {
            None => return Err(DataError::Invalid("empty dataset file".into())),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| DataError::Parse {
                    line: i + 1,
                    msg: format!("bad header record: {e}"),
                })?;
            }
        }
    };
    if let Some(k) = expected_k {
        if k != header.k {
            return Err(DataError::Invalid(format!(
                "header declares K = {} but K = {k} was expected",
                header.k
            )));
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if rec.embedding.len() != header.dim {
            return Err(DataError::DimensionMismatch {
                line: line_no,
                expected: header.dim,
                found: rec.embedding.len(),
            });
        }
        if rec.split == Split::Labeled && rec.label.is_none() {
            return Err(DataError::MissingLabel { line: line_no });
        }
        let mut embedding = rec.embedding;
        if !vector::normalize_in_place(&mut embedding) {
            return Err(DataError::ZeroNorm { line: line_no });
        }
        samples.push(Sample::new(rec.id, rec.text, embedding, rec.label, rec.split));
    }
    let bundle = DatasetBundle {
        samples,
        num_classes: header.k,
        known_classes: header.known_classes.into_iter().collect(),
        dim: header.dim,
        class_names: header.class_names,
    };
    bundle.validate()?;
    let c = bundle.split_counts();
    log::info!(
        "loaded dataset: K={} dim={} labeled={} unlabeled={} test={}",
        bundle.num_classes,
        bundle.dim,
        c.labeled,
        c.unlabeled,
        c.test
    );
    Ok(bundle)
}

pub fn write_dataset<W: Write>(bundle: &DatasetBundle, mut out: W) -> Result<(), DataError> {
    let header = HeaderRecord {
        k: bundle.num_classes,
        dim: bundle.dim,
        known_classes: bundle.known_classes.iter().copied().collect(),
        class_names: bundle.class_names.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for s in &bundle.samples {
        let rec = SampleRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            embedding: s.embedding.clone(),
            label: s.label,
            split: s.split,
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(bundle: &DatasetBundle, path: &Path) -> Result<(), DataError> {
    write_dataset(bundle, BufWriter::new(File::create(path)?))
}

/// Shape of a synthetic imbalanced GCD problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_classes: usize,
    /// Classes `0..known` are known; the rest are novel.
    pub known: usize,
    pub dim: usize,
    pub sizes: Vec<usize>,
    /// Per-coordinate standard deviation of the isotropic class noise.
    pub noise: f64,
}

impl SynthSpec {
    /// The 20:1 imbalanced nine-class family used throughout the test suite.
    pub fn imbalanced_nine(seed: u64, noise: f64) -> Self {
        Self {
            seed,
            num_classes: 9,
            known: 6,
            dim: 16,
            sizes: vec![400, 200, 100, 50, 50, 50, 40, 30, 20],
            noise,
        }
    }
}

/// Noise level at which raw k-means on the nine-class family lands in the
/// middle of the H-score range.
pub const DEFAULT_SYNTH_NOISE: f64 = 0.27;

const FILLER_PER_TEXT: usize = 8;
const LABELED_FRACTION: f64 = 0.1;
const TEST_FRACTION: usize = 5; // one in five of each class, at least one

pub fn labeled_count(class_size: usize) -> usize {
    (LABELED_FRACTION * class_size as f64).ceil() as usize
}

/// Generates a deterministic dataset: each class is an isotropic Gaussian
/// around a random unit mean, re-normalized onto the sphere. Texts carry one
/// class keyword plus shared filler tokens.
pub fn synth_gcd(spec: &SynthSpec) -> Result<DatasetBundle, DataError> {
    let k = spec.num_classes;
    if spec.sizes.len() != k {
        return Err(DataError::Invalid(format!(
            "sizes has {} entries, expected K = {k}",
            spec.sizes.len()
        )));
    }
    if spec.known > k {
        return Err(DataError::Invalid(format!(
            "known = {} exceeds K = {k}",
            spec.known
        )));
    }
    if spec.sizes.iter().any(|&s| s < 2) {
        return Err(DataError::Invalid("every class needs at least 2 samples".into()));
    }
    if spec.dim == 0 || !(spec.noise >= 0.0) {
        return Err(DataError::Invalid("dim must be positive and noise >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            if let Some(u) = vector::normalized(&v) {
                break u;
            }
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| DataError::Invalid(e.to_string()))?;

    let mut samples = Vec::new();
    for (class, (&size, mean)) in spec.sizes.iter().zip(&means).enumerate() {
        let keyword = text::class_keyword(class);
        let n_labeled = if class < spec.known {
            labeled_count(size)
        } else {
            0
        };
        let n_test = if size - n_labeled >= 2 {
            (size / TEST_FRACTION).max(1).min(size - n_labeled - 1)
        } else {
            0
        };
        let mut splits: Vec<Split> = std::iter::repeat_n(Split::Labeled, n_labeled)
            .chain(std::iter::repeat_n(Split::Test, n_test))
            .chain(std::iter::repeat_n(Split::Unlabeled, size - n_labeled - n_test))
            .collect();
        splits.shuffle(&mut rng);
        for split in splits {
            let mut x: Vec<f64> = if spec.noise > 0.0 {
                mean.iter().map(|m| m + noise.sample(&mut rng)).collect()
            } else {
                mean.clone()
            };
            if !vector::normalize_in_place(&mut x) {
                x = mean.clone();
            }
            let mut words: Vec<&str> = (0..FILLER_PER_TEXT)
                .map(|_| *text::FILLER_WORDS.choose(&mut rng).expect("non-empty"))
                .collect();
            let at = rand::Rng::random_range(&mut rng, 0..=words.len());
            words.insert(at, &keyword);
            samples.push((class, split, x, words.join(" ")));
        }
    }
    samples.shuffle(&mut rng);
    let samples = samples
        .into_iter()
        .enumerate()
        .map(|(i, (class, split, x, txt))| {
            Sample::new(format!("s{i:05}"), Some(txt), x, Some(class), split)
        })
        .collect();

    let bundle = DatasetBundle {
        samples,
        num_classes: k,
        known_classes: (0..spec.known).collect(),
        dim: spec.dim,
        class_names: (0..k).map(|c| (c, text::class_keyword(c))).collect(),
    };
    bundle.validate()?;
    Ok(bundle)
}
