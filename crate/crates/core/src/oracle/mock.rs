//! Deterministic keyword oracle.
//!
//! Reads the same prompts a model would receive and answers in the same reply
//! formats. Its judgement is purely lexical over salient tokens (anything not
//! in the stopword list):
//! - matching: a sample goes to the category sharing the most salient tokens
//!   with it (lowest index on ties), or "New Category" if none is shared;
//! - extraction: the salient token present in the most reports (ties broken
//!   alphabetically) becomes the pattern, and the reports containing it are
//!   its members;
//! - refinement: tokens present in any false positive are removed; a token
//!   present in at least half of the true positives and no false positive is
//!   added. An emptied pattern keeps its original tokens.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::backend::{ChatBackend, ChatRequest, RequestKind};
use super::prompt;
use super::PatternOracleError;
use crate::text;

#[derive(Debug, Clone)]
pub struct KeywordMock {
    stopwords: BTreeSet<String>,
}

impl Default for KeywordMock {
    fn default() -> Self {
        Self::new(text::default_stopwords())
    }
}

fn title(word: &str) -> String {
    let mut c = word.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// Formats a keyword set as a pattern line: `Loan Refund: reports sharing the keywords loan refund`.
pub fn keyword_pattern(keywords: &BTreeSet<String>) -> String {
    let words: Vec<&str> = keywords.iter().map(String::as_str).collect();
    let name = words.iter().map(|w| title(w)).collect::<Vec<_>>().join(" ");
    format!("{name}: reports sharing the keywords {}", words.join(" "))
}

/// Text between the line equal to `start` and the next line starting with
/// any of `ends` (or the end of the prompt).
fn section<'a>(prompt: &'a str, start: &str, ends: &[&str]) -> Vec<&'a str> {
    let mut lines = prompt.lines().skip_while(|l| l.trim() != start.trim());
    lines.next();
    lines
        .take_while(|l| !ends.iter().any(|e| l.trim_start().starts_with(e)))
        .collect()
}

/// `N: text` items of a section, with surrounding quotes removed.
fn numbered_items(lines: &[&str]) -> Vec<(usize, String)> {
    lines
        .iter()
        .filter_map(|l| {
            let (n, rest) = l.trim().split_once(':')?;
            let n: usize = n.trim().parse().ok()?;
            Some((n, rest.trim().trim_matches('"').to_string()))
        })
        .collect()
}

impl KeywordMock {
    pub fn new(stopwords: BTreeSet<String>) -> Self {
        Self { stopwords }
    }

    fn tokens(&self, s: &str) -> BTreeSet<String> {
        text::salient_tokens(s, &self.stopwords)
    }

    pub fn answer_match(&self, prompt: &str) -> String {
        let cats = numbered_items(&section(prompt, prompt::CATEGORY_SET, &[prompt::SAMPLES_SECTION]));
        let samples = numbered_items(&section(prompt, prompt::SAMPLES_SECTION, &[prompt::RULES_SECTION]));
        let cat_tokens: Vec<(usize, BTreeSet<String>)> =
            cats.iter().map(|(i, t)| (*i, self.tokens(t))).collect();
        let results: Vec<_> = samples
            .iter()
            .map(|(idx, t)| {
                let toks = self.tokens(t);
                let mut best: Option<(usize, usize, Vec<String>)> = None;
                for (ci, ct) in &cat_tokens {
                    let shared: Vec<String> = toks.intersection(ct).cloned().collect();
                    if !shared.is_empty() && best.as_ref().is_none_or(|b| shared.len() > b.1) {
                        best = Some((*ci, shared.len(), shared));
                    }
                }
                match best {
                    Some((ci, _, shared)) => json!({
                        "Index": idx,
                        "Assigned Category Index": ci,
                        "Matching Justification": format!("shares keywords: {}", shared.join(", ")),
                    }),
                    None => json!({
                        "Index": idx,
                        "Assigned Category Index": "New Category",
                        "Matching Justification": "no category keyword present",
                    }),
                }
            })
            .collect();
        serde_json::to_string_pretty(&json!({ "results": results })).expect("serializable")
    }

    /// Majority salient token over reports and the 1-based reports holding it.
    pub fn majority_keyword(&self, reports: &[(usize, String)]) -> Option<(String, Vec<usize>)> {
        let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (n, r) in reports {
            for t in self.tokens(r) {
                counts.entry(t).or_default().push(*n);
            }
        }
        // BTreeMap iterates alphabetically, so max_by keeps the first maximum
        // only if we compare strictly; use fold for explicit tie-breaking.
        counts
            .into_iter()
            .fold(None, |best: Option<(String, Vec<usize>)>, (tok, members)| match best {
                Some(b) if b.1.len() >= members.len() => Some(b),
                _ => Some((tok, members)),
            })
    }

    pub fn answer_extract(&self, prompt: &str) -> String {
        let reports = numbered_items(&section(prompt, prompt::REPORTS_SECTION, &[]));
        let (keyword, members) = self
            .majority_keyword(&reports)
            .unwrap_or_else(|| ("unknown".to_string(), reports.iter().map(|(n, _)| *n).collect()));
        let kws = BTreeSet::from([keyword.clone()]);
        let analysis: Vec<String> = reports
            .iter()
            .map(|(n, r)| {
                let toks: Vec<String> = self.tokens(r).into_iter().collect();
                format!("   * Report {n}: key phrases ({})", toks.join(", "))
            })
            .collect();
        let list: Vec<_> = members
            .iter()
            .map(|n| json!({"Report Number": n, "Basis": format!("mentions {keyword}")}))
            .collect();
        format!(
            "1. Method Analysis:\n{}\n\n2. Type Statistics:\n   The type with the highest number of reports is \"{}\", with {} of {} reports.\n\n3. Summary of Main Type Patterns:\n   {}\n\n4. List of report numbers belonging to the main types identified in steps 2 and 3:\n{}",
            analysis.join("\n"),
            title(&keyword),
            members.len(),
            reports.len(),
            keyword_pattern(&kws),
            serde_json::to_string_pretty(&list).expect("serializable"),
        )
    }

    pub fn answer_refine(&self, prompt: &str) -> String {
        let pattern_lines = section(prompt, prompt::PATTERN_SECTION, &[prompt::TRUE_POSITIVES]);
        let pattern = pattern_lines.join(" ");
        let tps = numbered_items(&section(prompt, prompt::TRUE_POSITIVES, &[prompt::FALSE_POSITIVES]));
        let fps = numbered_items(&section(prompt, prompt::FALSE_POSITIVES, &[prompt::REVISION_RULES]));
        let original = self.tokens(&pattern);
        let fp_tokens: BTreeSet<String> = fps.iter().flat_map(|(_, t)| self.tokens(t)).collect();
        let mut kws: BTreeSet<String> = original.difference(&fp_tokens).cloned().collect();
        if let Some((tok, holders)) = self.majority_keyword(&tps) {
            if 2 * holders.len() >= tps.len() && !fp_tokens.contains(&tok) {
                kws.insert(tok);
            }
        }
        if kws.is_empty() {
            kws = original.clone();
        }
        let removed: Vec<&String> = original.difference(&kws).collect();
        serde_json::to_string_pretty(&json!({
            "Revised Pattern": keyword_pattern(&kws),
            "Revision Justification": format!("removed {removed:?}"),
        }))
        .expect("serializable")
    }
}

impl ChatBackend for KeywordMock {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, PatternOracleError> {
        let p = request.prompt();
        Ok(match request.kind {
            RequestKind::Match => self.answer_match(p),
            RequestKind::Extract => self.answer_extract(p),
            RequestKind::Refine => self.answer_refine(p),
        })
    }
}
