//! Prompt builders. All builders are pure: identical inputs give
//! byte-identical prompts.

/// Header line that opens every sample-matching prompt.
pub const MATCH_HEADER: &str = "Task Objective:\n1. Analyze the user-provided text samples.";
pub const CATEGORY_SET: &str = "Category Set:";
pub const SAMPLES_SECTION: &str = "Text Samples to be Classified:";
pub const RULES_SECTION: &str = "Classification Rules:";
pub const REPORTS_SECTION: &str = "Report Information:";
pub const PATTERN_SECTION: &str = "Current Pattern:";
pub const TRUE_POSITIVES: &str = "True Positive Samples (correctly assigned to this category):";
pub const FALSE_POSITIVES: &str = "False Positive Samples (wrongly assigned to this category):";
pub const REVISION_RULES: &str = "Revision Rules:";

/// Appended to the conversation when a reply could not be parsed.
pub const REPAIR_SUFFIX: &str =
    "Your previous reply could not be parsed. Return only valid JSON in the required output format, with no extra text.";

/// Flattens a text to one line so numbered sections stay line-oriented.
pub fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn numbered(items: &[&str], quoted: bool) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let t = one_line(t);
            if quoted {
                format!("{}: \"{}\"", i + 1, t.replace('"', "'"))
            } else {
                format!("{}: {}", i + 1, t)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Sample-matching prompt. Categories and samples are numbered from 1.
pub fn build_match_prompt(categories: &[&str], samples: &[&str]) -> String {
    format!(
        r#"{MATCH_HEADER}
2. Match each sample to a predefined category from the provided category set.
3. Strictly follow the required output format.

{CATEGORY_SET}
{categories}

{SAMPLES_SECTION}
{samples}

{RULES_SECTION}
1. Compare each text sample against the categories. A sample can only be assigned to a category if it fully matches the category definition and satisfies all of its core required features.
2. If a sample matches multiple categories, select the one with the highest degree of matching.
3. If any core feature is missing, classify the sample as a "New Category".

Output Format Requirements:

Please strictly return the result in JSON format (do not use markdown formatting), including the following fields:
{{
    "results": [
        {{
            "Index": Original text sample index,
            "Assigned Category Index": Category index or "New Category",
            "Matching Justification": An explanation of which core required features and auxiliary features were matched. The sample must satisfy all core required features to be assigned.
        }},
        ...
    ]
}}"#,
        categories = numbered(categories, false),
        samples = numbered(samples, true),
    )
}

fn title_case(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Vocabulary for the extraction prompt: the kind of event being categorized
/// and the party that drives it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDomain {
    pub event: String,
    pub actor: String,
}

impl Default for PromptDomain {
    fn default() -> Self {
        Self {
            event: "scam".into(),
            actor: "scammer".into(),
        }
    }
}

/// Consensus-extraction prompt over the reports of one cluster.
pub fn build_extraction_prompt(domain: &PromptDomain, reports: &[&str]) -> String {
    let d = &domain.event;
    let a = &domain.actor;
    let t = title_case(d);
    let reports = reports
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}: {}", i + 1, one_line(r)))
        .collect::<Vec<_>>()
        .join("\n\n");
    format!(
        r#"Task Objective: Analyze the {d} report to identify major {d} patterns.

Output Requirements (do not use markdown format):

<FORMAT>
1. {t} Method Analysis:
   Break down each report into key elements:
   - Identity of the {a} (e.g., impersonating government, company, acquaintance, etc.)
   - Keywords in the {d} dialogue
   - Characteristics of the fund flow
   - Technical methods used

2. {t} Type Statistics:
   [Show the number of reports per {d} type, their proportions, and typical features; identify the {d} type with the highest number of reports]

3. Summary of Main {t} Type Patterns:
   [{t} Type Name]: [Description of the typical {d} flow/process for this type]

4. List of report numbers belonging to the main {d} types identified in steps 2 and 3:
   [
   {{
   "Report Number": number,
   "Basis": "..."
   }},
   {{
   "Report Number": number,
   "Basis": "..."
   }},
   ... // Each element corresponds to a report number and its rationale
   ]

</FORMAT>

{REPORTS_SECTION}
{reports}"#
    )
}

/// Pattern-refinement prompt: keep what the true positives share, exclude
/// what made the false positives match.
pub fn build_refine_prompt(pattern: &str, true_positives: &[&str], false_positives: &[&str]) -> String {
    format!(
        r#"Task Objective: Revise the category pattern so that it still covers the true positive samples and no longer covers the false positive samples.

{PATTERN_SECTION}
{pattern}

{TRUE_POSITIVES}
{tp}

{FALSE_POSITIVES}
{fp}

{REVISION_RULES}
1. Keep the core features shared by the true positive samples.
2. Add conditions or remove features so that none of the false positive samples satisfies the revised pattern.
3. Write the revised pattern in the same style as the current one: a category name, a colon, then the typical event flow.

Output Format Requirements:

Please strictly return the result in JSON format (do not use markdown formatting), including the following fields:
{{
    "Revised Pattern": The revised category name and description,
    "Revision Justification": Which features were kept and which were excluded
}}"#,
        pattern = one_line(pattern),
        tp = if true_positives.is_empty() {
            "(none)".to_string()
        } else {
            numbered(true_positives, true)
        },
        fp = numbered(false_positives, true),
    )
}
