//! The pattern oracle: prompts, reply parsing, chat backends, the pattern
//! store and the per-round mining procedure.

pub mod backend;
pub mod mining;
pub mod mock;
pub mod parse;
pub mod patterns;
pub mod prompt;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use backend::{ChatBackend, ChatMessage, ChatRequest, RequestKind, TranscriptWriter};
use parse::CategoryRef;
use patterns::Pattern;
pub use prompt::PromptDomain;

#[derive(Debug, Error)]
pub enum PatternOracleError {
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("unparseable {kind} reply after {attempts} attempts")]
    Unparseable {
        kind: RequestKind,
        attempts: usize,
        /// Every raw reply received, in order.
        transcript: Vec<String>,
    },
    #[error("replay transcript exhausted after {0} exchanges")]
    ReplayExhausted(usize),
    #[error("request {seq} does not match the replay transcript")]
    ReplayMismatch { seq: usize },
    #[error("oracle configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a sample was matched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assigned {
    Pattern(usize),
    NewCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub sample_id: String,
    pub assigned: Assigned,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub dominant_pattern_text: String,
    pub member_ids: Vec<String>,
    pub excluded_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleConfig {
    /// Repair retries after the first unparseable reply.
    pub retries: usize,
    /// Maximum samples per matching request.
    pub batch_size: usize,
    pub domain: PromptDomain,
    /// Caps on labeled examples quoted in one refinement request.
    pub max_true_positives: usize,
    pub max_false_positives: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            retries: 3,
            batch_size: 20,
            domain: PromptDomain::default(),
            max_true_positives: 10,
            max_false_positives: 10,
        }
    }
}

impl ChatBackend for Box<dyn ChatBackend> {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, PatternOracleError> {
        (**self).complete(request)
    }
}

/// Wraps a backend with retries, batching and the transcript log.
pub struct PatternOracle<B = Box<dyn ChatBackend>> {
    backend: B,
    transcript: Option<TranscriptWriter>,
    config: OracleConfig,
    calls: usize,
}

impl<B: ChatBackend> PatternOracle<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            transcript: None,
            config: OracleConfig::default(),
            calls: 0,
        }
    }

    pub fn with_config(mut self, config: OracleConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_transcript(mut self, writer: TranscriptWriter) -> Self {
        self.transcript = Some(writer);
        self
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    /// Backend calls made so far, retries included.
    pub fn calls(&self) -> usize {
        self.calls
    }

    fn exchange<T>(
        &mut self,
        kind: RequestKind,
        prompt: String,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, PatternOracleError> {
        let mut request = ChatRequest {
            kind,
            messages: vec![ChatMessage::user(prompt)],
        };
        let mut replies = Vec::new();
        for attempt in 0..=self.config.retries {
            self.calls += 1;
            let reply = self.backend.complete(&request)?;
            if let Some(t) = &mut self.transcript {
                t.append(&request, &reply)?;
            }
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("{kind} reply rejected (attempt {}): {e}", attempt + 1);
                    request.messages.push(ChatMessage::assistant(reply.clone()));
                    request.messages.push(ChatMessage::user(prompt::REPAIR_SUFFIX));
                    replies.push(reply);
                }
            }
        }
        Err(PatternOracleError::Unparseable {
            kind,
            attempts: replies.len(),
            transcript: replies,
        })
    }

    /// One verdict per `(id, text)` sample, in input order. An empty pattern
    /// set answers "new category" for everything without calling the backend.
    pub fn match_samples(
        &mut self,
        samples: &[(&str, &str)],
        patterns: &[&Pattern],
    ) -> Result<Vec<OracleVerdict>, PatternOracleError> {
        if patterns.is_empty() {
            return Ok(samples
                .iter()
                .map(|(id, _)| OracleVerdict {
                    sample_id: id.to_string(),
                    assigned: Assigned::NewCategory,
                    justification: "empty pattern set".into(),
                })
                .collect());
        }
        let categories: Vec<&str> = patterns.iter().map(|p| p.text.as_str()).collect();
        let mut out = Vec::with_capacity(samples.len());
        for batch in samples.chunks(self.config.batch_size.max(1)) {
            let texts: Vec<&str> = batch.iter().map(|(_, t)| *t).collect();
            let p = prompt::build_match_prompt(&categories, &texts);
            let raw = self.exchange(RequestKind::Match, p, |r| parse::parse_match_reply(r, batch.len()))?;
            for (v, (id, _)) in raw.into_iter().zip(batch) {
                let assigned = match v.category {
                    CategoryRef::Index(i) if (1..=patterns.len()).contains(&i) => {
                        Assigned::Pattern(patterns[i - 1].pattern_id)
                    }
                    CategoryRef::Index(i) => {
                        log::warn!("sample {id}: category index {i} not in the request, treated as new");
                        Assigned::NewCategory
                    }
                    CategoryRef::NewCategory => Assigned::NewCategory,
                };
                out.push(OracleVerdict {
                    sample_id: id.to_string(),
                    assigned,
                    justification: v.justification,
                });
            }
        }
        Ok(out)
    }

    /// Dominant pattern of a group of samples and the samples it covers.
    pub fn extract_pattern(&mut self, samples: &[(&str, &str)]) -> Result<ExtractionReport, PatternOracleError> {
        if samples.is_empty() {
            return Err(PatternOracleError::Config("extraction needs at least one sample".into()));
        }
        let texts: Vec<&str> = samples.iter().map(|(_, t)| *t).collect();
        let p = prompt::build_extraction_prompt(&self.config.domain, &texts);
        let raw = self.exchange(RequestKind::Extract, p, parse::parse_extraction_reply)?;
        let mut members = BTreeSet::new();
        for &n in &raw.members {
            if (1..=samples.len()).contains(&n) {
                members.insert(n - 1);
            } else {
                log::warn!("extraction listed report {n}, outside 1..={}", samples.len());
            }
        }
        let (member_ids, excluded_ids) = samples
            .iter()
            .enumerate()
            .fold((Vec::new(), Vec::new()), |(mut m, mut x), (i, (id, _))| {
                if members.contains(&i) {
                    m.push(id.to_string());
                } else {
                    x.push(id.to_string());
                }
                (m, x)
            });
        Ok(ExtractionReport {
            dominant_pattern_text: raw.pattern_text(),
            member_ids,
            excluded_ids,
        })
    }

    /// Revised text for `pattern`, or `None` (and no call) when there are no
    /// false positives to exclude.
    pub fn refine_pattern(
        &mut self,
        pattern: &str,
        true_positives: &[&str],
        false_positives: &[&str],
    ) -> Result<Option<String>, PatternOracleError> {
        if false_positives.is_empty() {
            return Ok(None);
        }
        let tp = &true_positives[..true_positives.len().min(self.config.max_true_positives)];
        let fp = &false_positives[..false_positives.len().min(self.config.max_false_positives)];
        let p = prompt::build_refine_prompt(pattern, tp, fp);
        self.exchange(RequestKind::Refine, p, parse::parse_refine_reply).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::backend::ScriptedBackend;
    use super::patterns::{Pattern, PatternOrigin};
    use super::*;

    fn pattern(id: usize, text: &str) -> Pattern {
        Pattern {
            pattern_id: id,
            owner: id,
            text: text.into(),
            revisions: Vec::new(),
            origin: PatternOrigin::Extracted,
            embedding: None,
        }
    }

    #[test]
    fn empty_pattern_set_makes_no_calls() {
        let mut o = PatternOracle::new(ScriptedBackend::new(Vec::<String>::new()));
        let s: Vec<(&str, &str)> = (0..5).map(|_| ("x", "text")).collect();
        let v = o.match_samples(&s, &[]).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|v| v.assigned == Assigned::NewCategory));
        assert_eq!(o.calls(), 0);
    }

    #[test]
    fn repair_retry_then_success() {
        let good = r#"{"results": [{"Index": 1, "Assigned Category Index": 1, "Matching Justification": "ok"}]}"#;
        let mut o = PatternOracle::new(ScriptedBackend::new(["not json", good]));
        let p = pattern(7, "Loan: loan");
        let v = o.match_samples(&[("a", "loan")], &[&p]).unwrap();
        assert_eq!(v[0].assigned, Assigned::Pattern(7));
        let reqs = &o.backend().requests;
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[1].messages.len(), 3);
        assert_eq!(reqs[1].messages[2].content, prompt::REPAIR_SUFFIX);
    }

    #[test]
    fn retries_are_bounded() {
        let mut o = PatternOracle::new(ScriptedBackend::new(["x"; 10]));
        let p = pattern(0, "Loan: loan");
        match o.match_samples(&[("a", "loan")], &[&p]) {
            Err(PatternOracleError::Unparseable { attempts, transcript, .. }) => {
                assert_eq!(attempts, 4);
                assert_eq!(transcript.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_index_is_new_category() {
        let r = r#"[{"Index": 1, "Assigned Category Index": 9}]"#;
        let mut o = PatternOracle::new(ScriptedBackend::new([r]));
        let p = pattern(0, "Loan: loan");
        let v = o.match_samples(&[("a", "loan")], &[&p]).unwrap();
        assert_eq!(v[0].assigned, Assigned::NewCategory);
    }

    #[test]
    fn matching_is_batched() {
        let mut o = PatternOracle::new(mock::KeywordMock::default());
        let p = pattern(3, "Loan: reports sharing the keywords loan");
        let s: Vec<(String, &str)> = (0..45).map(|i| (format!("s{i}"), "a loan")).collect();
        let s: Vec<(&str, &str)> = s.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let v = o.match_samples(&s, &[&p]).unwrap();
        assert_eq!(o.calls(), 3);
        assert_eq!(v.len(), 45);
        assert_eq!(v[44].sample_id, "s44");
        assert!(v.iter().all(|v| v.assigned == Assigned::Pattern(3)));
    }

    #[test]
    fn extraction_partitions_input() {
        let mut o = PatternOracle::new(mock::KeywordMock::default());
        let s = [("a", "refund now"), ("b", "my refund"), ("c", "a game")];
        let r = o.extract_pattern(&s).unwrap();
        assert_eq!(r.member_ids, vec!["a", "b"]);
        assert_eq!(r.excluded_ids, vec!["c"]);
    }

    #[test]
    fn refinement_without_false_positives_is_free() {
        let mut o = PatternOracle::new(ScriptedBackend::new(Vec::<String>::new()));
        assert_eq!(o.refine_pattern("p", &["a"], &[]).unwrap(), None);
        assert_eq!(o.calls(), 0);
    }

    #[test]
    fn transport_error_propagates() {
        let mut b = ScriptedBackend::new(Vec::<String>::new());
        b.push_failure("down");
        let mut o = PatternOracle::new(b);
        assert!(matches!(o.extract_pattern(&[("a", "x")]), Err(PatternOracleError::Transport(_))));
    }
}
