//! Parsers for oracle replies. They accept both the field names the prompts
//! request and the variants models commonly drift to (e.g.
//! `SchemeCategoryIndex` / `MatchingBasis`, a bare array instead of a
//! `results` object).

use serde_json::Value;

/// Category assigned to one sample by a matching reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategoryRef {
    /// 1-based index into the category list sent with the request.
    Index(usize),
    NewCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawVerdict {
    /// 1-based sample index.
    pub index: usize,
    pub category: CategoryRef,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawExtraction {
    pub name: String,
    pub description: String,
    /// 1-based report numbers listed as members of the dominant pattern.
    pub members: Vec<usize>,
}

impl RawExtraction {
    pub fn pattern_text(&self) -> String {
        if self.description.is_empty() {
            self.name.clone()
        } else {
            format!("{}: {}", self.name, self.description)
        }
    }
}

/// The first complete JSON object or array embedded in `text`.
pub fn first_json_value(text: &str) -> Option<Value> {
    for (i, ch) in text.char_indices() {
        if ch != '{' && ch != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if v.is_object() || v.is_array() {
                return Some(v);
            }
        }
    }
    None
}

fn field<'a>(obj: &'a Value, names: &[&str]) -> Option<&'a Value> {
    let map = obj.as_object()?;
    names.iter().find_map(|n| map.get(*n)).or_else(|| {
        // case- and space-insensitive fallback
        let norm = |s: &str| s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        let wanted: Vec<String> = names.iter().map(|n| norm(n)).collect();
        map.iter().find(|(k, _)| wanted.contains(&norm(k))).map(|(_, v)| v)
    })
}

fn as_index(v: &Value) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|x| x as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_category(v: &Value) -> Option<CategoryRef> {
    match v {
        Value::Null => Some(CategoryRef::NewCategory),
        Value::String(s) if s.to_lowercase().contains("new") => Some(CategoryRef::NewCategory),
        other => as_index(other).map(CategoryRef::Index),
    }
}

const INDEX_KEYS: &[&str] = &["Index", "Sample Index", "SampleIndex"];
const CATEGORY_KEYS: &[&str] = &[
    "Assigned Category Index",
    "SchemeCategoryIndex",
    "Category Index",
    "CategoryIndex",
    "Category",
];
const JUSTIFICATION_KEYS: &[&str] = &["Matching Justification", "MatchingBasis", "Justification", "Basis"];

/// Parses a matching reply for `n_samples` samples. Every sample index must
/// be present exactly once.
pub fn parse_match_reply(text: &str, n_samples: usize) -> Result<Vec<RawVerdict>, String> {
    let value = first_json_value(text).ok_or("no JSON value in reply")?;
    let entries: Vec<&Value> = match &value {
        Value::Array(a) => a.iter().collect(),
        Value::Object(_) => match field(&value, &["results", "Results"]) {
            Some(Value::Array(a)) => a.iter().collect(),
            _ => vec![&value],
        },
        _ => unreachable!("first_json_value returns objects or arrays"),
    };
    let mut out: Vec<Option<RawVerdict>> = vec![None; n_samples];
    for e in entries {
        let index = field(e, INDEX_KEYS)
            .and_then(as_index)
            .ok_or_else(|| format!("entry without a sample index: {e}"))?;
        if index == 0 || index > n_samples {
            return Err(format!("sample index {index} outside 1..={n_samples}"));
        }
        let category = field(e, CATEGORY_KEYS)
            .and_then(as_category)
            .ok_or_else(|| format!("entry {index} has no category"))?;
        let justification = field(e, JUSTIFICATION_KEYS)
            .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
            .unwrap_or_default();
        if out[index - 1].is_some() {
            return Err(format!("sample index {index} repeated"));
        }
        out[index - 1] = Some(RawVerdict {
            index,
            category,
            justification,
        });
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| format!("sample {} missing from reply", i + 1)))
        .collect()
}

fn strip_bullet(line: &str) -> &str {
    line.trim().trim_start_matches(['*', '-', '•']).trim()
}

fn section_start(line: &str, number: u32) -> bool {
    let t = line.trim_start();
    t.starts_with(&format!("{number}.")) || t.starts_with(&format!("{number})"))
}

/// Parses a consensus-extraction reply: the pattern line under step 3 and the
/// JSON report list under step 4.
pub fn parse_extraction_reply(text: &str) -> Result<RawExtraction, String> {
    let lines: Vec<&str> = text.lines().collect();
    let s3 = lines
        .iter()
        .position(|l| section_start(l, 3) && l.to_lowercase().contains("pattern"))
        .ok_or("no pattern summary section")?;
    let s4 = lines
        .iter()
        .enumerate()
        .skip(s3 + 1)
        .find(|(_, l)| section_start(l, 4))
        .map(|(i, _)| i)
        .ok_or("no report list section")?;
    let pattern_line = lines[s3 + 1..s4]
        .iter()
        .map(|l| strip_bullet(l))
        .find(|l| !l.is_empty())
        .ok_or("empty pattern summary")?;
    let (name, description) = match pattern_line.split_once(':') {
        Some((n, d)) => (n.trim().to_string(), d.trim().to_string()),
        None => (pattern_line.to_string(), String::new()),
    };
    if name.is_empty() {
        return Err("pattern has no name".into());
    }
    let tail = lines[s4..].join("\n");
    let list = first_json_value(&tail).ok_or("no JSON report list")?;
    let items: Vec<&Value> = match &list {
        Value::Array(a) => a.iter().collect(),
        obj => vec![obj],
    };
    let mut members = Vec::new();
    for item in items {
        let n = field(item, &["Report Number", "ReportNumber", "Index"])
            .and_then(as_index)
            .ok_or_else(|| format!("report entry without a number: {item}"))?;
        if !members.contains(&n) {
            members.push(n);
        }
    }
    Ok(RawExtraction {
        name,
        description,
        members,
    })
}

/// Parses a refinement reply into the revised pattern text.
pub fn parse_refine_reply(text: &str) -> Result<String, String> {
    let v = first_json_value(text).ok_or("no JSON value in reply")?;
    let revised = field(&v, &["Revised Pattern", "RevisedPattern", "Pattern"])
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or("reply has no revised pattern")?;
    Ok(revised.to_string())
}
