//! The training loop: periodic clustering/oracle rounds feeding pseudo-labels
//! and prototypes into epochs of head training, plus evaluation and the
//! clustering-only baseline.

pub mod checkpoint;
pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{self, AlignError, Matching};
use crate::clustering::{self, ClusterError, ClusterStats, MultiRun};
use crate::data::{DataError, DatasetBundle, Split};
use crate::evaluation::{self, EvalError, GcdMetrics};
use crate::labels::PseudoLabelRecord;
use crate::oracle::backend::ChatBackend;
use crate::oracle::mining::{self, ClusterFailure, ClusterJob};
use crate::oracle::patterns::{CorpusEmbedder, PatternStore};
use crate::oracle::{Assigned, PatternOracle, PatternOracleError};
use crate::ranking::{self, Candidate, RankError};
use crate::reassign::{self, ReassignInput, Revisit};
use crate::trainer::prototypes::{self, Prototype};
use crate::trainer::{self, EpochData, LossReport, ProjectionHead, Sgd, TrainError, UnlabeledItem};
use crate::vector;
use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{Config, ConfigError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Oracle(#[from] PatternOracleError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("incomplete checkpoint: {0}")]
    IncompleteCheckpoint(String),
    #[error("checkpoint does not fit the dataset: {0}")]
    Incompatible(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Incompatible(_) => 3,
            PipelineError::Oracle(_) => 4,
            _ => 1,
        }
    }
}

/// What one clustering/oracle round did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub inertia: f64,
    pub patterns: usize,
    pub extracted: usize,
    pub refined: usize,
    pub matched: usize,
    pub members: usize,
    pub exclusions: usize,
    pub unstable: usize,
    pub low_confidence: usize,
    pub revisited: usize,
    pub changed: usize,
    pub failures: Vec<ClusterFailure>,
    /// Part of the round ran without the oracle.
    pub stale: bool,
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossReport,
    pub round: Option<RoundSummary>,
    pub acc_k: Option<f64>,
    pub acc_n: Option<f64>,
    pub h_score: Option<f64>,
}

/// Clustering of the projected unlabeled data, matched to classes.
struct ClusterView {
    ys: Vec<Vec<f64>>,
    multi: MultiRun,
    ranked: Vec<ClusterStats>,
    matching: Matching,
    /// Class id per unlabeled sample.
    labels: Vec<usize>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn clustering_seed(seed: u64, round: usize) -> u64 {
    seed.wrapping_add(1000 * round as u64)
}

/// Training state over one dataset.
pub struct Session<'d> {
    pub config: Config,
    pub seed: u64,
    bundle: &'d DatasetBundle,
    unlabeled: Vec<usize>,
    labeled: Vec<usize>,
    embedder: CorpusEmbedder,
    pub head: ProjectionHead,
    pub optimizer: Sgd,
    pub prototypes: BTreeMap<usize, Prototype>,
    pub patterns: PatternStore,
    pub records: Vec<PseudoLabelRecord>,
    pub processed: BTreeSet<String>,
    pub epoch: usize,
    pub round: usize,
}

impl<'d> Session<'d> {
    pub fn new(config: Config, bundle: &'d DatasetBundle, seed: u64) -> Result<Self, PipelineError> {
        config.validate()?;
        bundle.validate()?;
        let out_dim = if config.out_dim == 0 { bundle.dim } else { config.out_dim };
        let mut s = Self {
            head: ProjectionHead::init(bundle.dim, out_dim, seed),
            optimizer: Sgd::new(config.learning_rate, config.momentum),
            unlabeled: bundle.indices(Split::Unlabeled),
            labeled: bundle.indices(Split::Labeled),
            embedder: CorpusEmbedder::from_bundle(bundle),
            prototypes: BTreeMap::new(),
            patterns: PatternStore::new(),
            records: Vec::new(),
            processed: BTreeSet::new(),
            epoch: 0,
            round: 0,
            config,
            seed,
            bundle,
        };
        if s.config.rounds() == 0 {
            s.bootstrap()?;
        }
        Ok(s)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, bundle: &'d DatasetBundle) -> Result<Self, PipelineError> {
        check_compatible(&ckpt, bundle)?;
        let prototypes = ckpt.prototypes.clone().unwrap_or_default();
        Ok(Self {
            unlabeled: bundle.indices(Split::Unlabeled),
            labeled: bundle.indices(Split::Labeled),
            embedder: CorpusEmbedder::from_bundle(bundle),
            head: ckpt.head,
            optimizer: ckpt.optimizer,
            prototypes,
            patterns: ckpt.patterns,
            records: ckpt.records,
            processed: ckpt.processed,
            epoch: ckpt.epoch,
            round: ckpt.round,
            config: ckpt.config,
            seed: ckpt.seed,
            bundle,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            seed: self.seed,
            input_dim: self.bundle.dim,
            num_classes: self.bundle.num_classes,
            known_classes: self.bundle.known_classes.clone(),
            epoch: self.epoch,
            round: self.round,
            head: self.head.clone(),
            optimizer: self.optimizer.clone(),
            prototypes: (!self.prototypes.is_empty()).then(|| self.prototypes.clone()),
            patterns: self.patterns.clone(),
            records: self.records.clone(),
            processed: self.processed.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn round_due(&self) -> bool {
        self.epoch.is_multiple_of(self.config.interval) && self.round < self.config.rounds()
    }

    fn project_unlabeled(&self) -> Vec<Vec<f64>> {
        self.unlabeled
            .iter()
            .map(|&i| self.head.project(&self.bundle.samples[i].embedding))
            .collect()
    }

    fn labeled_pairs(&self) -> Vec<(&'d [f64], usize)> {
        let b = self.bundle;
        self.labeled
            .iter()
            .filter_map(|&i| Some((b.samples[i].embedding.as_slice(), b.samples[i].train_label()?)))
            .collect()
    }

    fn cluster(&self, round: usize) -> Result<ClusterView, PipelineError> {
        let ys = self.project_unlabeled();
        let k = self.bundle.num_classes;
        let multi = clustering::multi_run(
            &ys,
            k,
            clustering_seed(self.seed, round),
            self.config.kmeans_runs,
            self.config.max_iter,
        )?;
        let reference = multi.reference();
        let mut ranked = clustering::cluster_stats(reference, &ys);
        ranking::rank_clusters(&mut ranked, self.config.sigma)?;
        let rank_order: Vec<usize> = ranked.iter().map(|s| s.cluster_id).collect();

        let dim = self.head.out_dim();
        let mut by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for (x, c) in self.labeled_pairs() {
            by_class.entry(c).or_default().push(self.head.project(x));
        }
        let centroids: Vec<(usize, Vec<f64>)> = by_class
            .iter()
            .filter_map(|(c, v)| Some((*c, vector::mean(v.iter().map(Vec::as_slice), dim)?)))
            .collect();
        let mut matching = alignment::match_clusters(&reference.centers, &centroids, &rank_order)?;
        let previous_novel: BTreeMap<usize, Vec<f64>> = self
            .prototypes
            .iter()
            .filter(|(c, _)| !self.bundle.known_classes.contains(c))
            .map(|(c, p)| (*c, p.vector.clone()))
            .collect();
        alignment::carry_over_novel_ids(&mut matching, &reference.centers, &previous_novel);
        let labels = reference.assignments.iter().map(|&a| matching.class_of_cluster[a]).collect();
        Ok(ClusterView {
            ys,
            multi,
            ranked,
            matching,
            labels,
        })
    }

    fn cluster_labels(&self, view: &ClusterView) -> Vec<(String, usize)> {
        self.unlabeled
            .iter()
            .zip(&view.labels)
            .map(|(&i, &l)| (self.bundle.samples[i].id.clone(), l))
            .collect()
    }

    /// Normalized mean of the projected unlabeled samples per pseudo-label.
    /// Classes without members take `fallback`.
    fn class_centers(
        &self,
        ys: &[Vec<f64>],
        fallback: impl Fn(usize) -> Option<Vec<f64>>,
    ) -> BTreeMap<usize, Vec<f64>> {
        let dim = self.head.out_dim();
        let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (r, y) in self.records.iter().zip(ys) {
            vector::axpy(sums.entry(r.current).or_insert_with(|| vec![0.0; dim]), 1.0, y);
        }
        (0..self.bundle.num_classes)
            .filter_map(|c| {
                let from_members = sums.get(&c).and_then(|s| vector::normalized(s));
                Some((c, from_members.or_else(|| fallback(c))?))
            })
            .collect()
    }

    /// Class centers after a round; empty classes fall back to their
    /// cluster center.
    fn round_centers(&self, view: &ClusterView) -> BTreeMap<usize, Vec<f64>> {
        let centers = &view.multi.reference().centers;
        self.class_centers(&view.ys, |c| {
            let cl = view.matching.class_of_cluster.iter().position(|&x| x == c)?;
            vector::normalized(&centers[cl])
        })
    }

    /// Recomputes the prototypes from the current head and pseudo-labels and
    /// smooths them into the previous ones. Empty classes keep their last
    /// center.
    fn refresh_prototypes(&mut self) {
        let ys = self.project_unlabeled();
        let centers = self.class_centers(&ys, |c| self.prototypes.get(&c).map(|p| p.center_part.clone()));
        let fresh = prototypes::build_prototypes(&centers, &self.pattern_parts(), self.config.beta, self.round);
        self.prototypes = prototypes::ema_all(&self.prototypes, fresh, self.config.omega);
    }

    fn pattern_parts(&self) -> BTreeMap<usize, Vec<f64>> {
        self.patterns
            .iter()
            .filter_map(|p| {
                let e = p.embedding.as_ref()?;
                Some((p.owner, vector::normalized(&self.head.project(e))?))
            })
            .collect()
    }

    /// Prototypes and pseudo-labels from clustering alone, for runs that
    /// never reach an oracle round.
    pub fn bootstrap(&mut self) -> Result<(), PipelineError> {
        let view = self.cluster(0)?;
        self.records = self
            .cluster_labels(&view)
            .into_iter()
            .map(|(id, l)| PseudoLabelRecord::from_cluster(id, l))
            .collect();
        let centers = self.round_centers(&view);
        self.prototypes = prototypes::build_prototypes(&centers, &BTreeMap::new(), self.config.beta, 0);
        Ok(())
    }

    fn run_round<B: ChatBackend>(&mut self, oracle: &mut PatternOracle<B>) -> Result<RoundSummary, PipelineError> {
        let round = self.round;
        let view = self.cluster(round)?;
        let b = self.bundle;
        let reference = view.multi.reference();
        let sel = self.config.selection();

        let dists: Vec<ranking::AssignmentDistribution> = view
            .ys
            .iter()
            .map(|y| ranking::assignment_distribution(y, &reference.centers, sel.alpha))
            .collect();
        let candidate = |pos: usize| Candidate {
            index: pos,
            id: b.samples[self.unlabeled[pos]].id.as_str(),
            distance: dists[pos].nearest_distance,
            entropy: dists[pos].entropy,
        };
        let sample_of = |pos: usize| {
            let s = &b.samples[self.unlabeled[pos]];
            (s.id.as_str(), s.text_or_empty())
        };

        // Labeled samples predicted into each class, split into true and
        // false positives, closest to their center first.
        let mut predicted: BTreeMap<usize, Vec<(f64, &str, bool)>> = BTreeMap::new();
        for &i in &self.labeled {
            let s = &b.samples[i];
            let Some(label) = s.train_label() else { continue };
            let y = self.head.project(&s.embedding);
            let d = ranking::assignment_distribution(&y, &reference.centers, sel.alpha);
            let class = view.matching.class_of_cluster[d.nearest];
            predicted.entry(class).or_default().push((d.nearest_distance, s.text_or_empty(), label == class));
        }
        for v in predicted.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }

        let jobs: Vec<ClusterJob> = view
            .ranked
            .iter()
            .map(|st| {
                let members: Vec<Candidate> = reference.members(st.cluster_id).into_iter().map(candidate).collect();
                let owner = view.matching.class_of_cluster[st.cluster_id];
                let chosen = ranking::select_high_confidence(&members, sel.k_high);
                let pred = predicted.get(&owner).map(Vec::as_slice).unwrap_or(&[]);
                ClusterJob {
                    cluster: st.cluster_id,
                    owner,
                    known: !view.matching.is_novel(st.cluster_id),
                    samples: chosen.into_iter().map(sample_of).collect(),
                    true_positives: pred.iter().filter(|p| p.2).map(|p| p.1).collect(),
                    false_positives: pred.iter().filter(|p| !p.2).map(|p| p.1).collect(),
                }
            })
            .collect();
        let spare = b.novel_classes();
        let mined = mining::mine_all(oracle, &mut self.patterns, &self.embedder, &jobs, &spare);

        let unstable = clustering::instability(&view.multi.runs);
        let all: Vec<Candidate> = (0..view.ys.len()).map(candidate).collect();
        let low: BTreeSet<String> = ranking::select_low_confidence(&all, &unstable, sel.k_low)
            .into_iter()
            .map(|pos| b.samples[self.unlabeled[pos]].id.clone())
            .collect();

        // Fresh matching of low-confidence and excluded samples against the
        // refined pattern set.
        let revisit_ids: BTreeSet<&String> = low.iter().chain(&mined.exclusions).collect();
        let text_of: BTreeMap<&str, &str> = self.unlabeled.iter().map(|&i| (b.samples[i].id.as_str(), b.samples[i].text_or_empty())).collect();
        let revisit_samples: Vec<(&str, &str)> = revisit_ids.iter().map(|id| (id.as_str(), text_of[id.as_str()])).collect();
        let mut revisit = Revisit::new();
        let mut stale_ids = BTreeSet::new();
        let mut revisit_failed = false;
        match oracle.match_samples(&revisit_samples, &self.patterns.active()) {
            Ok(verdicts) => {
                for v in verdicts {
                    let owner = match v.assigned {
                        Assigned::Pattern(pid) => self.patterns.owner_of(pid),
                        Assigned::NewCategory => None,
                    };
                    revisit.insert(v.sample_id, owner);
                }
            }
            Err(e) => {
                log::warn!("round {round}: reassignment matching failed, keeping cluster labels: {e}");
                revisit_failed = true;
                stale_ids = revisit_ids.iter().map(|s| s.to_string()).collect();
            }
        }

        let cluster_labels = self.cluster_labels(&view);
        self.records = reassign::reassign(&ReassignInput {
            cluster_labels: &cluster_labels,
            mining: Some(&mined),
            revisit: Some(&revisit),
            low_confidence: &low,
            stale: &stale_ids,
        });
        self.processed = mined.processed();
        self.processed
            .extend(revisit.iter().filter(|(_, o)| o.is_some()).map(|(id, _)| id.clone()));

        let centers = self.round_centers(&view);
        let fresh = prototypes::build_prototypes(&centers, &self.pattern_parts(), self.config.beta, round);
        self.prototypes = prototypes::ema_all(&self.prototypes, fresh, self.config.omega);
        self.round += 1;

        let mining_failed = mined.failures.iter().any(|f| f.stage == "mining");
        Ok(RoundSummary {
            round,
            inertia: reference.inertia,
            patterns: self.patterns.len(),
            extracted: mined.extracted,
            refined: mined.refined,
            matched: mined.matched.len(),
            members: mined.members.len(),
            exclusions: mined.exclusions.len(),
            unstable: unstable.iter().filter(|u| **u).count(),
            low_confidence: low.len(),
            revisited: revisit_samples.len(),
            changed: self.records.iter().filter(|r| r.changed).count(),
            failures: mined.failures,
            stale: mining_failed || revisit_failed,
        })
    }

    /// Runs a round if one is due, then one training epoch.
    pub fn step<B: ChatBackend>(&mut self, oracle: &mut PatternOracle<B>) -> Result<EpochRecord, PipelineError> {
        let round = if self.round_due() { Some(self.run_round(oracle)?) } else { None };
        if self.prototypes.is_empty() {
            self.bootstrap()?;
        } else if round.is_none() {
            self.refresh_prototypes();
        }
        let losses = self.train_one_epoch()?;
        self.epoch += 1;
        let m = self.evaluate().ok();
        Ok(EpochRecord {
            epoch: self.epoch - 1,
            losses,
            round,
            acc_k: m.as_ref().and_then(|m| m.acc_k),
            acc_n: m.as_ref().and_then(|m| m.acc_n),
            h_score: m.as_ref().and_then(|m| m.h_score),
        })
    }

    /// One epoch of head training on the current pseudo-labels and prototypes.
    pub fn train_one_epoch(&mut self) -> Result<LossReport, PipelineError> {
        let labeled_protos = trainer::labeled_prototypes(&self.head, &self.labeled_pairs());
        let unlabeled_protos: BTreeMap<usize, Vec<f64>> =
            self.prototypes.iter().map(|(c, p)| (*c, p.vector.clone())).collect();
        let data = EpochData {
            unlabeled: self.epoch_data_items(),
            labeled: self.labeled_pairs(),
            unlabeled_protos: &unlabeled_protos,
            labeled_protos: &labeled_protos,
            known: &self.bundle.known_classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.seed, self.epoch));
        let cfg = self.config.loss();
        Ok(trainer::train_epoch(&mut self.head, &mut self.optimizer, &data, &cfg, &mut rng)?)
    }

    fn epoch_data_items(&self) -> Vec<UnlabeledItem<'d>> {
        let b = self.bundle;
        self.unlabeled
            .iter()
            .zip(&self.records)
            .map(|(&i, r)| UnlabeledItem {
                x: &b.samples[i].embedding,
                label: r.current,
                weight: r.weight(self.config.rho),
                processed: self.processed.contains(&r.sample_id),
            })
            .collect()
    }

    pub fn predict(&self, indices: &[usize]) -> Vec<usize> {
        predict_nearest(&self.head, &self.prototypes, self.bundle, indices)
    }

    pub fn evaluate(&self) -> Result<GcdMetrics, PipelineError> {
        evaluate_with(&self.head, &self.prototypes, self.bundle)
    }
}

fn check_compatible(ckpt: &Checkpoint, bundle: &DatasetBundle) -> Result<(), PipelineError> {
    if ckpt.input_dim != bundle.dim {
        return Err(PipelineError::Incompatible(format!(
            "checkpoint expects dimension {}, dataset has {}",
            ckpt.input_dim, bundle.dim
        )));
    }
    if ckpt.num_classes != bundle.num_classes {
        return Err(PipelineError::Incompatible(format!(
            "checkpoint expects K = {}, dataset has {}",
            ckpt.num_classes, bundle.num_classes
        )));
    }
    Ok(())
}

/// Nearest prototype by cosine similarity; ties go to the lower class id.
pub fn predict_nearest(
    head: &ProjectionHead,
    prototypes: &BTreeMap<usize, Prototype>,
    bundle: &DatasetBundle,
    indices: &[usize],
) -> Vec<usize> {
    indices
        .iter()
        .map(|&i| {
            let y = head.project(&bundle.samples[i].embedding);
            prototypes
                .iter()
                .map(|(c, p)| (*c, vector::dot(&y, &p.vector)))
                .fold((0, f64::NEG_INFINITY), |best, (c, s)| if s > best.1 { (c, s) } else { best })
                .0
        })
        .collect()
}

fn test_truth(bundle: &DatasetBundle) -> Result<(Vec<usize>, Vec<usize>), PipelineError> {
    let idx = bundle.indices(Split::Test);
    let truth = idx
        .iter()
        .map(|&i| {
            bundle.samples[i].eval_label().ok_or_else(|| {
                DataError::Invalid(format!("test sample {} has no label", bundle.samples[i].id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if idx.is_empty() {
        return Err(DataError::Invalid("dataset has no test samples".into()).into());
    }
    Ok((idx, truth))
}

pub fn evaluate_with(
    head: &ProjectionHead,
    prototypes: &BTreeMap<usize, Prototype>,
    bundle: &DatasetBundle,
) -> Result<GcdMetrics, PipelineError> {
    let (idx, truth) = test_truth(bundle)?;
    let pred = predict_nearest(head, prototypes, bundle, &idx);
    Ok(evaluation::gcd_metrics(&pred, &truth, &bundle.known_classes, bundle.num_classes)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: GcdMetrics,
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

/// Test metrics of a saved checkpoint.
pub fn run_eval(ckpt: &Checkpoint, bundle: &DatasetBundle) -> Result<Evaluation, PipelineError> {
    check_compatible(ckpt, bundle)?;
    let protos = ckpt.prototypes()?;
    if let Some(p) = protos.values().next() {
        if p.vector.len() != ckpt.head.out_dim() {
            return Err(PipelineError::IncompleteCheckpoint("prototype dimension differs from the head".into()));
        }
    }
    let (idx, truth) = test_truth(bundle)?;
    let predicted = predict_nearest(&ckpt.head, protos, bundle, &idx);
    let metrics = evaluation::gcd_metrics(&predicted, &truth, &bundle.known_classes, bundle.num_classes)?;
    Ok(Evaluation {
        metrics,
        predicted,
        truth,
    })
}

/// K-means on the raw unlabeled embeddings; each test sample takes its
/// nearest center's cluster id.
pub fn run_baseline(bundle: &DatasetBundle, seed: u64, runs: usize, max_iter: usize) -> Result<Evaluation, PipelineError> {
    bundle.validate()?;
    let unl: Vec<Vec<f64>> = bundle
        .indices(Split::Unlabeled)
        .into_iter()
        .map(|i| bundle.samples[i].embedding.clone())
        .collect();
    let multi = clustering::multi_run(&unl, bundle.num_classes, seed, runs, max_iter)?;
    let centers = &multi.reference().centers;
    let (idx, truth) = test_truth(bundle)?;
    let predicted: Vec<usize> = idx
        .iter()
        .map(|&i| ranking::assignment_distribution(&bundle.samples[i].embedding, centers, 1.0).nearest)
        .collect();
    let metrics = evaluation::gcd_metrics(&predicted, &truth, &bundle.known_classes, bundle.num_classes)?;
    Ok(Evaluation {
        metrics,
        predicted,
        truth,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub evaluation: Evaluation,
    pub checkpoint: Checkpoint,
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), PipelineError> {
    serde_json::to_writer(&mut *out, value).map_err(|e| PipelineError::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Full training run writing `history.jsonl`, `reassign_audit.jsonl`,
/// per-round checkpoints, the final checkpoint, the pattern store, metrics
/// and the confusion matrix into `out_dir`.
pub fn run_training<B: ChatBackend>(
    config: Config,
    bundle: &DatasetBundle,
    oracle: &mut PatternOracle<B>,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainOutcome, PipelineError> {
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    let mut session = Session::new(config, bundle, seed)?;
    let mut history_out = BufWriter::new(File::create(out_dir.join("history.jsonl"))?);
    let mut audit_out = BufWriter::new(File::create(out_dir.join("reassign_audit.jsonl"))?);
    let mut history = Vec::new();
    while !session.finished() {
        let rec = session.step(oracle)?;
        write_json_line(&mut history_out, &rec)?;
        history_out.flush()?;
        if let Some(r) = &rec.round {
            log::info!(
                "epoch {} round {}: {} patterns, {} changed labels{}",
                rec.epoch,
                r.round,
                r.patterns,
                r.changed,
                if r.stale { " (stale)" } else { "" }
            );
            reassign::write_audit(&session.records, r.round, &mut audit_out)?;
            audit_out.flush()?;
            session
                .checkpoint()
                .save(&out_dir.join("checkpoints").join(format!("round_{:03}.json", r.round)))?;
        }
        log::debug!("epoch {}: total loss {:.6}", rec.epoch, rec.losses.total);
        history.push(rec);
    }
    let checkpoint = session.checkpoint();
    checkpoint.save(&out_dir.join("checkpoint.json"))?;
    session.patterns.save(&out_dir.join("patterns.json"))?;
    let evaluation = run_eval(&checkpoint, bundle)?;
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&evaluation.metrics).map_err(|e| PipelineError::Format(e.to_string()))?,
    )?;
    evaluation::write_confusion_csv(
        &evaluation.predicted,
        &evaluation.truth,
        &evaluation.metrics.permutation,
        bundle.num_classes,
        BufWriter::new(File::create(out_dir.join("confusion.csv"))?),
    )?;
    Ok(TrainOutcome {
        history,
        evaluation,
        checkpoint,
    })
}
