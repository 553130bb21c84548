//! Pseudo-label reassignment from oracle output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::labels::{LabelSource, PseudoLabelRecord};
use crate::oracle::mining::MiningOutcome;

/// Result of the fresh matching call over low-confidence and excluded
/// samples: `Some(owner)` for a pattern match, `None` for "new category".
pub type Revisit = BTreeMap<String, Option<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReassignInput<'a> {
    /// `(sample_id, cluster-derived label)` for every unlabeled sample.
    pub cluster_labels: &'a [(String, usize)],
    pub mining: Option<&'a MiningOutcome>,
    pub revisit: Option<&'a Revisit>,
    pub low_confidence: &'a BTreeSet<String>,
    /// Samples the revisit call should have covered but could not (oracle
    /// failure). They keep their cluster label and are flagged stale.
    pub stale: &'a BTreeSet<String>,
}

/// Builds this round's records. The previous label of every record is its
/// cluster-derived label, so `changed` marks exactly the samples whose label
/// the oracle moved. Revisit verdicts win over mining matches.
pub fn reassign(input: &ReassignInput) -> Vec<PseudoLabelRecord> {
    let empty = MiningOutcome::default();
    let mining = input.mining.unwrap_or(&empty);
    input
        .cluster_labels
        .iter()
        .map(|(id, base)| {
            let revisited = input.revisit.and_then(|r| r.get(id));
            let (label, source) = match revisited {
                Some(Some(owner)) => {
                    let src = if input.low_confidence.contains(id) {
                        LabelSource::LowConfidenceReassign
                    } else {
                        LabelSource::ConsensusReassign
                    };
                    (*owner, src)
                }
                Some(None) => (*base, LabelSource::Cluster),
                None => match mining.matched.get(id) {
                    Some(owner) => (*owner, LabelSource::PatternMatch),
                    None => (*base, LabelSource::Cluster),
                },
            };
            let mut r = PseudoLabelRecord::new(id.clone(), label, Some(*base), source);
            r.stale = input.stale.contains(id);
            r
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct AuditLine<'a> {
    sample_id: &'a str,
    previous: Option<usize>,
    current: usize,
    source: LabelSource,
    round: usize,
}

/// Appends one JSON line per changed record.
pub fn write_audit<W: Write>(records: &[PseudoLabelRecord], round: usize, mut out: W) -> std::io::Result<()> {
    for r in records.iter().filter(|r| r.changed) {
        let line = AuditLine {
            sample_id: &r.sample_id,
            previous: r.previous,
            current: r.current,
            source: r.source,
            round,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[(&str, usize)]) -> Vec<(String, usize)> {
        v.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    }

    #[test]
    fn pattern_match_relabels_and_flags() {
        let cl = labels(&[("a", 2), ("b", 2), ("c", 1)]);
        let mut m = MiningOutcome::default();
        m.matched.insert("a".into(), 4);
        m.matched.insert("c".into(), 1);
        let none = BTreeSet::new();
        let r = reassign(&ReassignInput {
            cluster_labels: &cl,
            mining: Some(&m),
            revisit: None,
            low_confidence: &none,
            stale: &none,
        });
        assert_eq!((r[0].current, r[0].changed, r[0].source), (4, true, LabelSource::PatternMatch));
        assert_eq!((r[1].current, r[1].changed), (2, false));
        assert_eq!((r[2].current, r[2].changed), (1, false));
    }

    #[test]
    fn revisit_wins_and_new_category_keeps_label() {
        let cl = labels(&[("a", 2), ("b", 2), ("c", 3)]);
        let mut m = MiningOutcome::default();
        m.matched.insert("a".into(), 4);
        let mut rv = Revisit::new();
        rv.insert("a".into(), Some(5));
        rv.insert("b".into(), None);
        rv.insert("c".into(), Some(0));
        let low: BTreeSet<String> = ["c".to_string()].into();
        let none = BTreeSet::new();
        let r = reassign(&ReassignInput {
            cluster_labels: &cl,
            mining: Some(&m),
            revisit: Some(&rv),
            low_confidence: &low,
            stale: &none,
        });
        assert_eq!((r[0].current, r[0].source), (5, LabelSource::ConsensusReassign));
        assert_eq!((r[1].current, r[1].changed), (2, false));
        assert_eq!((r[2].current, r[2].source), (0, LabelSource::LowConfidenceReassign));
    }

    #[test]
    fn idempotent_on_identical_inputs() {
        let cl = labels(&[("a", 2), ("b", 1)]);
        let mut m = MiningOutcome::default();
        m.matched.insert("a".into(), 0);
        let none = BTreeSet::new();
        let input = ReassignInput {
            cluster_labels: &cl,
            mining: Some(&m),
            revisit: None,
            low_confidence: &none,
            stale: &none,
        };
        assert_eq!(reassign(&input), reassign(&input));
    }

    #[test]
    fn stale_samples_keep_cluster_label() {
        let cl = labels(&[("a", 2)]);
        let stale: BTreeSet<String> = ["a".to_string()].into();
        let none = BTreeSet::new();
        let r = reassign(&ReassignInput {
            cluster_labels: &cl,
            mining: None,
            revisit: None,
            low_confidence: &none,
            stale: &stale,
        });
        assert_eq!((r[0].current, r[0].changed, r[0].stale), (2, false, true));
    }

    #[test]
    fn audit_lists_changed_only() {
        let recs = vec![
            PseudoLabelRecord::new("a", 4, Some(2), LabelSource::PatternMatch),
            PseudoLabelRecord::new("b", 2, Some(2), LabelSource::Cluster),
        ];
        let mut buf = Vec::new();
        write_audit(&recs, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "{\"sample_id\":\"a\",\"previous\":2,\"current\":4,\"source\":\"pattern-match\",\"round\":3}\n"
        );
    }
}
