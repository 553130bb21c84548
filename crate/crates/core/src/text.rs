//! Token-level text utilities used by the synthetic generator, the keyword
//! mock oracle and the corpus text embedder.

use std::collections::BTreeSet;

/// Topic words the synthetic generator attaches to each class, in class order.
/// Classes beyond this list fall back to `topic<c>`.
pub const CLASS_KEYWORDS: &[&str] = &[
    "loan",
    "refund",
    "recharge",
    "game",
    "shopping",
    "investment",
    "romance",
    "impersonation",
    "lottery",
    "job",
    "rental",
    "ticket",
    "crypto",
    "charity",
    "insurance",
    "visa",
    "pension",
    "parcel",
    "tuition",
    "medical",
    "auction",
    "subsidy",
];

/// Filler vocabulary shared by every synthetic class. Carries no class signal.
pub const FILLER_WORDS: &[&str] = &[
    "the", "a", "i", "me", "my", "they", "he", "she", "then", "after", "before", "and", "was",
    "were", "said", "told", "asked", "contacted", "platform", "account", "money", "transfer",
    "transferred", "yuan", "paid", "payment", "phone", "message", "online", "friend", "later",
    "again", "finally", "report", "victim", "scammer", "via", "app", "website", "chat",
];

/// Words that appear in prompt templates and generic prose. Ignored when the
/// mock oracle or the corpus embedder looks for salient tokens.
const TEMPLATE_WORDS: &[&str] = &[
    "of", "to", "in", "on", "for", "with", "is", "it", "this", "that", "an", "or", "by", "as",
    "be", "are", "at", "from", "not", "no", "all", "samples", "sample", "reports", "sharing", "keyword",
    "keywords", "pattern", "category", "new",
];

pub fn class_keyword(class: usize) -> String {
    CLASS_KEYWORDS
        .get(class)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("topic{class}"))
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    FILLER_WORDS
        .iter()
        .chain(TEMPLATE_WORDS)
        .map(|s| s.to_string())
        .collect()
}

/// Distinct tokens of `text` that are not stopwords and are not pure numbers.
pub fn salient_tokens(text: &str, stopwords: &BTreeSet<String>) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !stopwords.contains(t) && !t.chars().all(|c| c.is_ascii_digit()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keywords_and_fillers_are_disjoint() {
        let fill: BTreeSet<_> = FILLER_WORDS.iter().collect();
        assert!(CLASS_KEYWORDS.iter().all(|k| !fill.contains(k)));
        let stop = default_stopwords();
        assert!(CLASS_KEYWORDS.iter().all(|k| !stop.contains(*k)));
    }

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("Loan: loan-Refund 42"), vec!["loan", "loan", "refund", "42"]);
    }

    #[test]
    fn salient_tokens_drop_fillers_and_numbers() {
        let stop = default_stopwords();
        let got = salient_tokens("the victim paid 300 yuan for a game item", &stop);
        assert_eq!(got, ["game", "item"].iter().map(|s| s.to_string()).collect());
    }
}
