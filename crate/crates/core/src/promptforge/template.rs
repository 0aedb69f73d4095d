use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::textdist::Tokenizer;

use super::PromptStyle;

/// Default wording for all six styles.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../templates/default.txt");

const HEADER: &str = "## template:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Slot(String),
}

/// A prompt template: literal text interleaved with `{{slot}}` placeholders.
///
/// Slots must be delimited by whitespace on both sides so that token counts of the
/// rendered text add up section by section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find("{{") {
            let close = rest[open..]
                .find("}}")
                .map(|c| open + c)
                .ok_or_else(|| Error::Template("unterminated `{{`".into()))?;
            let name = rest[open + 2..close].trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Template(format!("invalid slot name `{name}`")));
            }
            let before = &rest[..open];
            let after = &rest[close + 2..];
            let spaced_before = before.chars().last().map_or(segments.is_empty(), char::is_whitespace);
            let spaced_after = after.chars().next().is_none_or(char::is_whitespace);
            if !spaced_before || !spaced_after {
                return Err(Error::Template(format!(
                    "slot `{name}` must be surrounded by whitespace"
                )));
            }
            if !before.is_empty() {
                segments.push(Segment::Literal(before.to_owned()));
            } else if matches!(segments.last(), Some(Segment::Slot(_))) {
                return Err(Error::Template(format!("slot `{name}` directly follows another slot")));
            }
            segments.push(Segment::Slot(name.to_owned()));
            rest = after;
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_owned()));
        }
        Ok(Template { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(name) => Some(name.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Tokens contributed by the fixed wording.
    pub fn literal_tokens(&self, tokenizer: &Tokenizer) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => tokenizer.count(text),
                Segment::Slot(_) => 0,
            })
            .sum()
    }

    pub fn render(&self, values: &BTreeMap<String, String>) -> Result<String> {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(name) => out.push_str(
                    values
                        .get(name)
                        .ok_or_else(|| Error::Template(format!("no value for slot `{name}`")))?,
                ),
            }
        }
        Ok(out)
    }

    /// Recover slot values from a rendered prompt. Returns `None` when the text
    /// does not follow this template.
    pub fn parse_rendered(&self, text: &str) -> Option<BTreeMap<String, String>> {
        let mut values = BTreeMap::new();
        let mut pos = 0;
        for (i, segment) in self.segments.iter().enumerate() {
            match segment {
                Segment::Literal(lit) => {
                    if !text[pos..].starts_with(lit.as_str()) {
                        return None;
                    }
                    pos += lit.len();
                }
                Segment::Slot(name) => {
                    let end = match self.segments.get(i + 1) {
                        Some(Segment::Literal(next)) => pos + text[pos..].find(next.as_str())?,
                        _ => text.len(),
                    };
                    values.insert(name.clone(), text[pos..end].to_owned());
                    pos = end;
                }
            }
        }
        (pos == text.len()).then_some(values)
    }
}

/// Slot names a template for `style` must contain.
pub(crate) fn required_slots(style: PromptStyle) -> BTreeSet<String> {
    let mut slots = BTreeSet::from(["article".to_owned()]);
    if style.has_history() {
        for u in 1..=style.users() {
            slots.insert(format!("history_{u}"));
        }
    }
    for i in 1..=style.shots() {
        slots.insert(format!("example_{i}_article"));
        if style.is_contrastive() {
            slots.insert(format!("example_{i}_headline_1"));
            slots.insert(format!("example_{i}_headline_2"));
        } else {
            slots.insert(format!("example_{i}_headline"));
        }
    }
    slots
}

/// One template per style, read from a file of `## template: <style>` blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<PromptStyle, Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks: Vec<(PromptStyle, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            if let Some(name) = line.strip_prefix(HEADER) {
                blocks.push((name.trim().parse()?, Vec::new()));
            } else if let Some((_, body)) = blocks.last_mut() {
                body.push(line);
            } else if !line.trim().is_empty() {
                return Err(Error::Template("text before the first template header".into()));
            }
        }

        let mut templates = BTreeMap::new();
        for (style, lines) in blocks {
            let body = lines.join("\n");
            let template = Template::parse(body.trim_matches('\n'))?;
            let found: BTreeSet<String> = template.slots().map(str::to_owned).collect();
            let expected = required_slots(style);
            if found != expected {
                return Err(Error::Template(format!(
                    "{style}: slots {:?} do not match required {:?}",
                    found, expected
                )));
            }
            if template.slots().count() != found.len() {
                return Err(Error::Template(format!("{style}: repeated slot")));
            }
            if templates.insert(style, template).is_some() {
                return Err(Error::Template(format!("{style}: defined twice")));
            }
        }
        for style in PromptStyle::ALL {
            if !templates.contains_key(&style) {
                return Err(Error::Template(format!("missing template for {style}")));
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, style: PromptStyle) -> &Template {
        &self.templates[&style]
    }
}
