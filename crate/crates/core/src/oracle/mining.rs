//! One mining round: walk clusters in rank order, match their confident
//! samples against the growing pattern set, extract a pattern from what is
//! left unmatched, and refine known-class patterns against labeled data.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::backend::ChatBackend;
use super::patterns::{PatternEmbedder, PatternStore};
use super::{Assigned, PatternOracle};

/// Everything mining needs to know about one cluster.
#[derive(Debug, Clone)]
pub struct ClusterJob<'a> {
    pub cluster: usize,
    /// Class id the cluster carries after matching.
    pub owner: usize,
    pub known: bool,
    /// High-confidence `(id, text)` samples, most confident first.
    pub samples: Vec<(&'a str, &'a str)>,
    /// Labeled texts predicted as `owner` whose label is `owner`.
    pub true_positives: Vec<&'a str>,
    /// Labeled texts predicted as `owner` whose label differs.
    pub false_positives: Vec<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterFailure {
    pub cluster: usize,
    pub stage: String,
    pub error: String,
}

/// Per-round results. Every sample of a successfully mined cluster lands in
/// exactly one of `matched`, `members` and `exclusions`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningOutcome {
    /// Samples matched to an existing pattern, mapped to that pattern's owner.
    pub matched: BTreeMap<String, usize>,
    /// Members of a freshly extracted pattern, mapped to its owner.
    pub members: BTreeMap<String, usize>,
    /// Samples neither matched nor covered by extraction.
    pub exclusions: BTreeSet<String>,
    pub failures: Vec<ClusterFailure>,
    pub extracted: usize,
    pub refined: usize,
}

impl MiningOutcome {
    pub fn processed(&self) -> BTreeSet<String> {
        self.matched
            .keys()
            .chain(self.members.keys())
            .chain(self.exclusions.iter())
            .cloned()
            .collect()
    }
}

/// Smallest unmatched remainder that may found a pattern for a spare class.
pub const MIN_REMAINDER: usize = 3;

/// Mines `jobs` in the given order (callers pass them by descending rank
/// score). A cluster whose matching or extraction fails contributes nothing
/// and is recorded in `failures`; a failed refinement keeps the cluster's
/// other results.
///
/// When a cluster's owner keeps its pattern, the unmatched remainder is held
/// back. After all clusters are mined, each remainder (in job order) is
/// matched again and what is still unmatched founds a pattern for the lowest
/// class in `spare` that has none. Remainders without a spare class, or
/// smaller than [`MIN_REMAINDER`], become exclusions.
pub fn mine_all<B: ChatBackend>(
    oracle: &mut PatternOracle<B>,
    store: &mut PatternStore,
    embedder: &dyn PatternEmbedder,
    jobs: &[ClusterJob],
    spare: &BTreeSet<usize>,
) -> MiningOutcome {
    let mut out = MiningOutcome::default();
    let mut remainders = Vec::new();
    for job in jobs {
        if job.samples.is_empty() {
            continue;
        }
        match mine_cluster(oracle, store, embedder, job) {
            Ok(part) => {
                out.extracted += usize::from(part.extracted);
                out.matched.extend(part.matched);
                out.members.extend(part.members);
                out.exclusions.extend(part.exclusions);
                if !part.remainder.is_empty() {
                    remainders.push((job.cluster, part.remainder));
                }
            }
            Err(e) => {
                log::warn!("cluster {} skipped: {e}", job.cluster);
                out.failures.push(ClusterFailure {
                    cluster: job.cluster,
                    stage: "mining".into(),
                    error: e.to_string(),
                });
                continue;
            }
        }
        if !job.known {
            continue;
        }
        let Some(p) = store.by_owner(job.owner) else { continue };
        let (id, text) = (p.pattern_id, p.text.clone());
        match oracle.refine_pattern(&text, &job.true_positives, &job.false_positives) {
            Ok(Some(revised)) => {
                let emb = embedder.embed(&revised);
                if store.revise(id, revised, emb) {
                    out.refined += 1;
                }
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("refinement of pattern {id} failed: {e}");
                out.failures.push(ClusterFailure {
                    cluster: job.cluster,
                    stage: "refinement".into(),
                    error: e.to_string(),
                });
            }
        }
    }
    for (cluster, rest) in remainders {
        let free = spare.iter().copied().find(|c| store.by_owner(*c).is_none());
        match free {
            Some(owner) if rest.len() >= MIN_REMAINDER => {
                if let Err(e) = mine_remainder(oracle, store, embedder, owner, &rest, &mut out) {
                    log::warn!("remainder of cluster {cluster} skipped: {e}");
                    out.exclusions.extend(rest.iter().map(|(id, _)| id.to_string()));
                    out.failures.push(ClusterFailure {
                        cluster,
                        stage: "remainder".into(),
                        error: e.to_string(),
                    });
                }
            }
            _ => out.exclusions.extend(rest.iter().map(|(id, _)| id.to_string())),
        }
    }
    out
}

fn mine_remainder<B: ChatBackend>(
    oracle: &mut PatternOracle<B>,
    store: &mut PatternStore,
    embedder: &dyn PatternEmbedder,
    owner: usize,
    rest: &[(&str, &str)],
    out: &mut MiningOutcome,
) -> Result<(), super::PatternOracleError> {
    let verdicts = oracle.match_samples(rest, &store.active())?;
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for (v, sample) in verdicts.into_iter().zip(rest) {
        match v.assigned {
            Assigned::Pattern(pid) => matched.push((v.sample_id, store.owner_of(pid).expect("active pattern"))),
            Assigned::NewCategory => unmatched.push(*sample),
        }
    }
    if unmatched.len() >= MIN_REMAINDER {
        let report = oracle.extract_pattern(&unmatched)?;
        let emb = embedder.embed(&report.dominant_pattern_text);
        store.set_extracted(owner, report.dominant_pattern_text, emb);
        out.extracted += 1;
        out.members.extend(report.member_ids.into_iter().map(|id| (id, owner)));
        out.exclusions.extend(report.excluded_ids);
    } else {
        out.exclusions.extend(unmatched.iter().map(|(id, _)| id.to_string()));
    }
    out.matched.extend(matched);
    Ok(())
}

struct ClusterPart<'a> {
    matched: Vec<(String, usize)>,
    members: Vec<(String, usize)>,
    exclusions: Vec<String>,
    /// Unmatched samples of a cluster whose owner kept its pattern.
    remainder: Vec<(&'a str, &'a str)>,
    extracted: bool,
}

fn mine_cluster<'a, B: ChatBackend>(
    oracle: &mut PatternOracle<B>,
    store: &mut PatternStore,
    embedder: &dyn PatternEmbedder,
    job: &ClusterJob<'a>,
) -> Result<ClusterPart<'a>, super::PatternOracleError> {
    let verdicts = oracle.match_samples(&job.samples, &store.active())?;
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for (v, sample) in verdicts.into_iter().zip(&job.samples) {
        match v.assigned {
            Assigned::Pattern(pid) => {
                let owner = store.owner_of(pid).expect("verdicts only name active patterns");
                matched.push((v.sample_id, owner));
            }
            Assigned::NewCategory => unmatched.push(*sample),
        }
    }
    let confirmed = matched.iter().any(|(_, o)| *o == job.owner);
    let mut part = ClusterPart {
        matched,
        members: Vec::new(),
        exclusions: Vec::new(),
        remainder: Vec::new(),
        extracted: false,
    };
    if unmatched.is_empty() {
        return Ok(part);
    }
    // An owner whose current pattern still describes part of this cluster
    // keeps it; the unmatched rest is held back for a spare class.
    if confirmed && store.by_owner(job.owner).is_some() {
        part.remainder = unmatched;
        return Ok(part);
    }
    let report = oracle.extract_pattern(&unmatched)?;
    let emb = embedder.embed(&report.dominant_pattern_text);
    store.set_extracted(job.owner, report.dominant_pattern_text, emb);
    part.extracted = true;
    part.members = report.member_ids.into_iter().map(|id| (id, job.owner)).collect();
    part.exclusions = report.excluded_ids;
    Ok(part)
}
