//! String normalization shared by the ledger, retrieval, and synthesis
//! layers: fuzzy duplicate detection, URL canonicalization, length caps, and
//! lenient JSON extraction from model output.

use serde_json::Value;
use url::{form_urlencoded, Url};

/// Similarity at or above which two normalized strings are duplicates.
pub const DUPLICATE_THRESHOLD: f64 = 0.85;

/// Leading verbs dropped during normalization.
pub const LEADING_VERBS: &[&str] = &[
    "research",
    "investigate",
    "explore",
    "analyze",
    "survey",
    "examine",
    "study",
];

/// Lowercase, strip punctuation, collapse whitespace, and drop one leading
/// research verb.
pub fn normalize(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words = lowered.split_whitespace().peekable();
    if let Some(first) = words.peek() {
        if LEADING_VERBS.contains(first) {
            words.next();
        }
    }
    words.collect::<Vec<_>>().join(" ")
}

/// Normalized edit-distance similarity in `[0, 1]` of two already
/// normalized strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

pub fn is_fuzzy_duplicate(a: &str, b: &str) -> bool {
    similarity(&normalize(a), &normalize(b)) >= DUPLICATE_THRESHOLD
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "its", "of", "on", "or", "over", "the", "their", "this", "that", "to", "with", "about",
    "more", "less", "only", "please", "focus", "exclude", "prioritize", "prioritise", "avoid",
    "ignore", "emphasize", "add", "task", "tasks", "research", "investigate", "explore",
    "analyze", "survey", "examine", "study", "find", "look",
];

/// Content words of `text`: normalized tokens minus stopwords and steering
/// verbs.
pub fn content_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() >= 3 && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

/// Case-insensitive substring test on whitespace-collapsed text.
pub fn contains_term(haystack: &str, term: &str) -> bool {
    let collapse = |s: &str| s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    let term = collapse(term);
    !term.is_empty() && collapse(haystack).contains(&term)
}

/// Cut `text` to at most `max_chars` characters, preferring the last word
/// boundary inside the limit.
pub fn truncate_at_word_boundary(text: &str, max_chars: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut: String = text.chars().take(max_chars).collect();
    let next_is_space = text
        .chars()
        .nth(max_chars)
        .map(char::is_whitespace)
        .unwrap_or(true);
    if next_is_space {
        return cut.trim_end().to_string();
    }
    match cut.rfind(char::is_whitespace) {
        Some(pos) => cut[..pos].trim_end().to_string(),
        None => cut,
    }
}

/// Query parameters removed during URL canonicalization, besides `utm_*`.
pub const TRACKING_PARAMS: &[&str] = &["ref", "fbclid"];

/// Canonical form of a source URL: lowercase scheme and host, no fragment,
/// no tracking parameters, no default port, no trailing slash.
pub fn canonicalize_url(raw: &str) -> Option<String> {
    let parsed = Url::parse(raw.trim()).ok()?;
    let host = parsed.host_str()?.to_lowercase();
    let mut out = format!("{}://{}", parsed.scheme(), host);
    if let Some(port) = parsed.port() {
        out.push_str(&format!(":{port}"));
    }
    out.push_str(parsed.path().trim_end_matches('/'));
    let kept: Vec<String> = parsed
        .query_pairs()
        .filter(|(k, _)| !k.starts_with("utm_") && !TRACKING_PARAMS.contains(&k.as_ref()))
        .map(|(k, v)| {
            let k: String = form_urlencoded::byte_serialize(k.as_bytes()).collect();
            if v.is_empty() {
                k
            } else {
                let v: String = form_urlencoded::byte_serialize(v.as_bytes()).collect();
                format!("{k}={v}")
            }
        })
        .collect();
    if !kept.is_empty() {
        out.push('?');
        out.push_str(&kept.join("&"));
    }
    Some(out)
}

/// Trim and collapse internal whitespace.
pub fn tidy(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Contents of the first `<tag>...</tag>` block, if any.
pub fn tagged_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(&text[start..end])
}

/// Parse model output as JSON.
///
/// The first `<answer>` block is used when present, otherwise the whole
/// text. If that does not parse, one local repair is attempted: code fences
/// are stripped and the first balanced JSON value opening with `opener`
/// (or either bracket when `None`) is parsed.
pub fn extract_json(text: &str, opener: Option<char>) -> Result<Value, String> {
    let candidate = tagged_block(text, "answer").unwrap_or(text).trim();
    if let Ok(value) = serde_json::from_str::<Value>(candidate) {
        return Ok(value);
    }
    let unfenced: String = candidate
        .lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    let slice = first_balanced(&unfenced, opener)
        .ok_or_else(|| "no JSON value found in model output".to_string())?;
    serde_json::from_str::<Value>(slice).map_err(|e| format!("invalid JSON: {e}"))
}

fn first_balanced(text: &str, opener: Option<char>) -> Option<&str> {
    let start = text.char_indices().find(|(_, c)| match opener {
        Some(o) => *c == o,
        None => *c == '{' || *c == '[',
    })?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start.0..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(&text[start.0..start.0 + i + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}
