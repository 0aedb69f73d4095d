use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContrastiveSample, Corpus, EvalInstance};
use crate::error::{Error, Result};

use super::render::{render_prompt, ForgeConfig, PromptSubject, RenderedPrompt};
use super::PromptStyle;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionTruncation {
    pub prompts_truncated: usize,
    pub tokens_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderFailure {
    pub prompt_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: usize,
    pub per_style: BTreeMap<PromptStyle, usize>,
    pub truncation: BTreeMap<String, SectionTruncation>,
    pub failures: Vec<RenderFailure>,
}

#[derive(Debug, Clone, Default)]
pub struct PromptDataset {
    pub records: Vec<RenderedPrompt>,
    pub manifest: DatasetManifest,
}

/// Render every requested style: one prompt per (doc, user) for plain styles and
/// one per sampled pair for contrastive styles. Records come back sorted by
/// (style, doc_id, user ids).
pub fn build_prompt_dataset(
    instances: &[EvalInstance],
    samples: &[ContrastiveSample],
    styles: &[PromptStyle],
    corpus: &Corpus,
    cfg: &ForgeConfig,
) -> PromptDataset {
    let styles: BTreeSet<PromptStyle> = styles.iter().copied().collect();
    let mut jobs: Vec<(PromptStyle, PromptSubject<'_>)> = Vec::new();
    for &style in &styles {
        if style.is_contrastive() {
            jobs.extend(samples.iter().map(|s| (style, PromptSubject::Pair(s))));
        } else {
            for instance in instances {
                for user in &instance.users {
                    jobs.push((
                        style,
                        PromptSubject::Single {
                            user: &user.profile,
                            query: &instance.query_doc,
                        },
                    ));
                }
            }
        }
    }

    let results: Vec<std::result::Result<RenderedPrompt, RenderFailure>> = jobs
        .par_iter()
        .map(|&(style, subject)| {
            render_prompt(style, subject, corpus, cfg).map_err(|e| {
                let (doc_id, users, tag) = match subject {
                    PromptSubject::Single { user, query } => {
                        (&query.doc_id, vec![user.user_id.clone()], Default::default())
                    }
                    PromptSubject::Pair(s) => (
                        &s.query_doc.doc_id,
                        vec![s.user1.user_id.clone(), s.user2.user_id.clone()],
                        s.perturbation_tag,
                    ),
                };
                RenderFailure {
                    prompt_id: RenderedPrompt::make_id(style, doc_id, &users, tag),
                    error: e.to_string(),
                }
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut manifest = DatasetManifest::default();
    for result in results {
        match result {
            Ok(p) => records.push(p),
            Err(f) => {
                tracing::warn!(prompt_id = %f.prompt_id, error = %f.error, "render failed");
                manifest.failures.push(f);
            }
        }
    }
    records.sort_by(|a, b| {
        (a.style, &a.doc_id, &a.user_ids, a.perturbation_tag as u8).cmp(&(
            b.style,
            &b.doc_id,
            &b.user_ids,
            b.perturbation_tag as u8,
        ))
    });
    manifest.failures.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));

    manifest.records = records.len();
    for style in &styles {
        manifest.per_style.insert(*style, 0);
    }
    for record in &records {
        *manifest.per_style.entry(record.style).or_default() += 1;
        for (section, &n) in &record.truncation_report {
            let entry = manifest.truncation.entry(section_kind(section)).or_default();
            entry.prompts_truncated += 1;
            entry.tokens_dropped += n;
        }
    }
    PromptDataset { records, manifest }
}

/// `history_2` → `history`, `example_1` → `example`.
fn section_kind(section: &str) -> String {
    section
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .trim_end_matches('_')
        .to_owned()
}

pub fn write_prompt_dataset(path: &Path, records: &[RenderedPrompt]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_prompt_dataset(path: &Path) -> Result<Vec<RenderedPrompt>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}
