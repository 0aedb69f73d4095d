use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Matched,
    Fallback,
    Failed,
}

/// Marker convention shared with the prompt templates: plain prompts answer with
/// `HEADLINE: ...`, contrastive prompts with `HEADLINE 1: ...` and `HEADLINE 2: ...`.
#[derive(Debug, Clone)]
pub struct ExtractPattern {
    marker: String,
    plain: Regex,
}

impl Default for ExtractPattern {
    fn default() -> Self {
        Self::new("HEADLINE").expect("default marker is a valid pattern")
    }
}

impl ExtractPattern {
    pub fn new(marker: &str) -> Result<Self, regex::Error> {
        let plain = Regex::new(&format!(r"{}\s*:[ \t]*([^\r\n]*)", regex::escape(marker)))?;
        Ok(Self {
            marker: marker.to_owned(),
            plain,
        })
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    fn numbered(&self, slot: usize) -> Regex {
        Regex::new(&format!(
            r"{}\s*{}\s*:[ \t]*([^\r\n]*)",
            regex::escape(&self.marker),
            slot + 1
        ))
        .expect("escaped marker")
    }
}

fn first_capture(re: &Regex, raw: &str) -> Option<String> {
    re.captures_iter(raw)
        .map(|c| c[1].trim().to_owned())
        .find(|s| !s.is_empty())
}

/// Pull the summary out of a plain completion.
pub fn extract_summary(raw: &str, pattern: &ExtractPattern) -> (String, ExtractionStatus) {
    if let Some(text) = first_capture(&pattern.plain, raw) {
        return (text, ExtractionStatus::Matched);
    }
    nth_line(raw, 0)
}

/// Pull the summary for user `slot` (0-based) out of a contrastive completion.
pub fn extract_slot(raw: &str, slot: usize, pattern: &ExtractPattern) -> (String, ExtractionStatus) {
    if let Some(text) = first_capture(&pattern.numbered(slot), raw) {
        return (text, ExtractionStatus::Matched);
    }
    nth_line(raw, slot)
}

fn nth_line(raw: &str, n: usize) -> (String, ExtractionStatus) {
    match raw.lines().map(str::trim).filter(|l| !l.is_empty()).nth(n) {
        Some(line) => (line.to_owned(), ExtractionStatus::Fallback),
        None => (String::new(), ExtractionStatus::Failed),
    }
}
