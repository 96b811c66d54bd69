//! Prompt templates and single-pass placeholder substitution.
//!
//! Templates live as text assets under `prompts/` and use `{name}`
//! placeholders. Substitution scans the template once, so braces inside
//! substituted values are never re-expanded, and any `{...}` whose name is
//! not supplied (JSON examples, for instance) is left verbatim.

/// Template revision; bump when any asset changes meaning.
pub const PROMPT_CONTRACT_VERSION: &str = "1";

pub const INITIAL_PLAN: &str = include_str!("../prompts/initial_plan.txt");
pub const QUERY_GENERATION: &str = include_str!("../prompts/query_generation.txt");
pub const AUGMENT_KNOWLEDGE_BLOCKS: &str = include_str!("../prompts/augment_knowledge.txt");
pub const REFLECTION: &str = include_str!("../prompts/reflection.txt");
pub const SYNTHESIS: &str = include_str!("../prompts/synthesis.txt");
pub const DIRECTIVE_SUMMARY: &str = include_str!("../prompts/directive_summary.txt");
pub const REPORT: &str = include_str!("../prompts/report.txt");

/// Reminder appended on the single model retry after unparseable output.
pub const JSON_REMINDER: &str = "IMPORTANT: output ONLY valid JSON.";

pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name.and_then(|n| values.iter().find(|(k, _)| *k == n)) {
            Some((_, value)) => {
                out.push_str(value);
                rest = &after[close.unwrap() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
