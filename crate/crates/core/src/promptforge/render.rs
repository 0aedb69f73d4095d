use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ContrastiveSample, Corpus, Document, PerturbationTag, UserProfile};
use crate::error::{Error, Result};
use crate::textdist::{truncate_with, Tokenizer, TruncationSide};

use super::{budget_for, PromptBudget, PromptStyle, TemplateSet};

#[derive(Debug, Clone)]
pub struct ForgeConfig {
    pub tokenizer: Tokenizer,
    pub truncation: TruncationSide,
    pub templates: TemplateSet,
    pub budgets: BTreeMap<PromptStyle, PromptBudget>,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::budget(),
            truncation: TruncationSide::Tail,
            templates: TemplateSet::default(),
            budgets: PromptStyle::ALL.into_iter().map(|s| (s, budget_for(s))).collect(),
        }
    }
}

impl ForgeConfig {
    pub fn budget(&self, style: PromptStyle) -> PromptBudget {
        self.budgets.get(&style).copied().unwrap_or_else(|| budget_for(style))
    }
}

/// Who a prompt is rendered for.
#[derive(Debug, Clone, Copy)]
pub enum PromptSubject<'a> {
    Single { user: &'a UserProfile, query: &'a Document },
    Pair(&'a ContrastiveSample),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub prompt_id: String,
    pub style: PromptStyle,
    pub doc_id: String,
    pub user_ids: Vec<String>,
    pub text: String,
    pub section_token_counts: BTreeMap<String, usize>,
    pub truncation_report: BTreeMap<String, usize>,
    #[serde(default)]
    pub perturbation_tag: PerturbationTag,
}

impl RenderedPrompt {
    pub fn total_tokens(&self) -> usize {
        self.section_token_counts.values().sum()
    }

    pub fn make_id(style: PromptStyle, doc_id: &str, user_ids: &[String], tag: PerturbationTag) -> String {
        let mut id = format!("{style}/{doc_id}/{}", user_ids.join("+"));
        if tag == PerturbationTag::Adversarial {
            id.push_str("#adv");
        }
        id
    }
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Truncate a list of lines to `limit` tokens, cutting inside the boundary line so
/// the kept tokens stay a prefix (or suffix, for head truncation) of the whole.
fn truncate_lines(
    lines: &[String],
    limit: usize,
    tokenizer: &Tokenizer,
    side: TruncationSide,
) -> (String, usize, usize) {
    let counts: Vec<usize> = lines.iter().map(|l| tokenizer.count(l)).collect();
    let total: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..lines.len()).filter(|&i| counts[i] > 0).collect();
    if side == TruncationSide::Head {
        order.reverse();
    }
    let mut kept = Vec::new();
    let mut used = 0;
    for i in order {
        if used + counts[i] <= limit {
            kept.push(lines[i].clone());
            used += counts[i];
            continue;
        }
        let partial = truncate_with(&lines[i], limit - used, tokenizer, side).text;
        let n = tokenizer.count(&partial);
        if n > 0 {
            kept.push(partial);
            used += n;
        }
        break;
    }
    if side == TruncationSide::Head {
        kept.reverse();
    }
    (kept.join("\n"), used, total - used)
}

struct Example<'a> {
    doc: &'a Document,
    headlines: Vec<&'a str>,
}

fn render_error(style: PromptStyle, doc_id: &str, reason: impl Into<String>) -> Error {
    Error::Render {
        style: style.to_string(),
        doc_id: doc_id.to_owned(),
        reason: reason.into(),
    }
}

/// Render one prompt.
///
/// Every section is truncated to its own limit first; if the template wording
/// pushes the sum past the total, the article absorbs the difference and the
/// extra cut shows up in `truncation_report["article"]`.
pub fn render_prompt(
    style: PromptStyle,
    subject: PromptSubject<'_>,
    corpus: &Corpus,
    cfg: &ForgeConfig,
) -> Result<RenderedPrompt> {
    let (query, profiles, tag): (&Document, Vec<&UserProfile>, PerturbationTag) = match subject {
        PromptSubject::Single { user, query } => (query, vec![user], PerturbationTag::Genuine),
        PromptSubject::Pair(sample) => (
            &sample.query_doc,
            vec![&*sample.user1, &*sample.user2],
            sample.perturbation_tag,
        ),
    };
    let doc_id = query.doc_id.as_str();
    if style.is_contrastive() != matches!(subject, PromptSubject::Pair(_)) {
        let reason = if style.is_contrastive() {
            "contrastive style needs a user pair"
        } else {
            "plain style takes a single user"
        };
        return Err(render_error(style, doc_id, reason));
    }
    if query.body.trim().is_empty() {
        return Err(render_error(style, doc_id, "empty query body"));
    }

    let tok = &cfg.tokenizer;
    let side = cfg.truncation;
    let budget = cfg.budget(style);
    let template = cfg.templates.get(style);
    let mut values = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut dropped = BTreeMap::new();

    let literal = template.literal_tokens(tok);
    counts.insert("template".to_owned(), literal);

    if style.has_history() {
        let limit = budget
            .history_tokens
            .ok_or_else(|| render_error(style, doc_id, "no history budget configured"))?;
        for (u, profile) in profiles.iter().enumerate() {
            let titles: Vec<String> = profile
                .click_history
                .iter()
                .filter_map(|id| corpus.get(id))
                .map(|d| collapse(&d.title))
                .collect();
            let (text, used, cut) = truncate_lines(&titles, limit, tok, side);
            let key = format!("history_{}", u + 1);
            values.insert(key.clone(), text);
            counts.insert(key.clone(), used);
            dropped.insert(key, cut);
        }
    }

    if style.shots() > 0 {
        let limit = budget
            .example_tokens
            .ok_or_else(|| render_error(style, doc_id, "no example budget configured"))?;
        let examples: Vec<Example<'_>> = match subject {
            PromptSubject::Single { user, .. } => user
                .gold_refs
                .iter()
                .filter(|(id, _)| id.as_str() != doc_id)
                .filter_map(|(id, headline)| {
                    Some(Example {
                        doc: corpus.get(id)?,
                        headlines: vec![headline.as_str()],
                    })
                })
                .take(style.shots())
                .collect(),
            PromptSubject::Pair(sample) => sample
                .shared_examples
                .iter()
                .filter(|e| e.doc.doc_id != doc_id)
                .map(|e| Example {
                    doc: &e.doc,
                    headlines: vec![e.ref_user1.as_str(), e.ref_user2.as_str()],
                })
                .take(style.shots())
                .collect(),
        };
        if examples.len() < style.shots() {
            return Err(render_error(
                style,
                doc_id,
                format!("needs {} example documents, found {}", style.shots(), examples.len()),
            ));
        }
        // Headlines may use at most half of an example's budget; the article gets the rest.
        let headline_cap = limit / (2 * examples[0].headlines.len());
        for (i, example) in examples.iter().enumerate() {
            let n = i + 1;
            let mut used = 0;
            let mut cut = 0;
            for (h, headline) in example.headlines.iter().enumerate() {
                let t = truncate_with(&collapse(headline), headline_cap, tok, side);
                used += tok.count(&t.text);
                cut += t.dropped;
                let key = if style.is_contrastive() {
                    format!("example_{n}_headline_{}", h + 1)
                } else {
                    format!("example_{n}_headline")
                };
                values.insert(key, t.text);
            }
            let article = truncate_with(&collapse(&example.doc.body), limit - used, tok, side);
            used += tok.count(&article.text);
            cut += article.dropped;
            values.insert(format!("example_{n}_article"), article.text);
            counts.insert(format!("example_{n}"), used);
            dropped.insert(format!("example_{n}"), cut);
        }
    }

    let fixed: usize = counts.values().sum();
    if fixed > budget.total_tokens {
        return Err(render_error(
            style,
            doc_id,
            format!(
                "template and profile sections use {fixed} tokens, over the {} total",
                budget.total_tokens
            ),
        ));
    }
    let article_limit = budget.article_tokens.min(budget.total_tokens - fixed);
    let article = truncate_with(&collapse(&query.body), article_limit, tok, side);
    counts.insert("article".to_owned(), tok.count(&article.text));
    dropped.insert("article".to_owned(), article.dropped);
    values.insert("article".to_owned(), article.text);

    let text = template.render(&values)?;
    let user_ids: Vec<String> = profiles.iter().map(|p| p.user_id.clone()).collect();
    dropped.retain(|_, n| *n > 0);
    Ok(RenderedPrompt {
        prompt_id: RenderedPrompt::make_id(style, doc_id, &user_ids, tag),
        style,
        doc_id: doc_id.to_owned(),
        user_ids,
        text,
        section_token_counts: counts,
        truncation_report: dropped,
        perturbation_tag: tag,
    })
}

/// Sections of `prompt` that exceed `budget`, as readable messages.
pub fn budget_violations(prompt: &RenderedPrompt, budget: &PromptBudget) -> Vec<String> {
    let mut out = Vec::new();
    for (section, &count) in &prompt.section_token_counts {
        let limit = if section.starts_with("history_") {
            budget.history_tokens.or(Some(0))
        } else if section.starts_with("example_") {
            budget.example_tokens.or(Some(0))
        } else if section == "article" {
            Some(budget.article_tokens)
        } else {
            None
        };
        if let Some(limit) = limit {
            if count > limit {
                out.push(format!("{section}: {count} > {limit}"));
            }
        }
    }
    let total = prompt.total_tokens();
    if total > budget.total_tokens {
        out.push(format!("total: {total} > {}", budget.total_tokens));
    }
    out
}
