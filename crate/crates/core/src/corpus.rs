//! PENS-style corpus ingestion: news documents, user tables, evaluation
//! instances and contrastive user-pair sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;

/// Default number of user pairs drawn per document.
pub const DEFAULT_PAIRS_PER_DOC: usize = 3;

/// Separator between rewritten titles in the user table.
pub const TITLE_SEPARATOR: &str = "#TAB#";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Document {
    /// Title followed by body; the text the document distribution is built from.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.title, self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Clicked doc ids in temporal order.
    pub click_history: Vec<String>,
    /// doc_id → the user's own headline for that document.
    pub gold_refs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    MalformedRow,
    EmptyBody,
    RefCountMismatch,
    DanglingReference,
    DuplicateReference,
    SkippedDocument,
    NoSharedExamples,
}

/// A non-fatal ingestion problem. Serialized one per line to the diagnostics file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub subject: String,
    pub message: String,
}

impl Diagnostic {
    fn new(
        kind: DiagnosticKind,
        source: &str,
        line: Option<usize>,
        subject: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Self {
            kind,
            source: source.to_owned(),
            line,
            subject: subject.into(),
            message: message.into(),
        }
    }
}

/// Parsed value together with the row-level diagnostics collected on the way.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub value: T,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Tsv,
    Jsonl,
}

impl InputFormat {
    /// `.jsonl` / `.json` → JSONL, everything else → TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => InputFormat::Jsonl,
            _ => InputFormat::Tsv,
        }
    }
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown input format `{other}`"))),
        }
    }
}

/// Immutable doc_id → Document store.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: BTreeMap<String, Document>,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for doc in docs {
            corpus.insert(doc)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, doc: Document) -> Result<()> {
        if self.docs.contains_key(&doc.doc_id) {
            return Err(Error::DuplicateDocId(doc.doc_id));
        }
        self.docs.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents in doc_id order.
    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }
}

fn read_utf8(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct TsvTable<'a> {
    columns: Vec<String>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl TsvTable<'_> {
    fn column(&self, path: &Path, names: &[&str]) -> Result<usize> {
        self.find(names).ok_or_else(|| Error::MissingColumn {
            path: path.to_owned(),
            column: names[0].to_owned(),
        })
    }

    fn find(&self, names: &[&str]) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| names.iter().any(|n| c.eq_ignore_ascii_case(n)))
    }
}

/// Split a TSV file into a header and rows; the header is the first non-blank line.
fn split_tsv(text: &str) -> Option<TsvTable<'_>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next()?;
    let columns = header.split('\t').map(|c| c.trim().to_owned()).collect();
    let rows = lines.map(|(n, l)| (n, l.split('\t').collect())).collect();
    Some(TsvTable { columns, rows })
}

fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parse a news corpus. Rows with missing ids or empty bodies become diagnostics;
/// a repeated doc_id is fatal.
pub fn parse_news_corpus(path: &Path, format: InputFormat) -> Result<Parsed<Corpus>> {
    let text = read_utf8(path)?;
    let source = path.display().to_string();
    let mut corpus = Corpus::default();
    let mut diagnostics = Vec::new();

    let mut accept = |doc: Document, line: usize, diagnostics: &mut Vec<Diagnostic>| {
        if doc.doc_id.is_empty() {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::MalformedRow,
                &source,
                Some(line),
                "",
                "empty doc_id",
            ));
            return Ok(());
        }
        if doc.body.trim().is_empty() {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::EmptyBody,
                &source,
                Some(line),
                doc.doc_id,
                "document body is empty",
            ));
            return Ok(());
        }
        corpus.insert(doc)
    };

    match format {
        InputFormat::Tsv => {
            if let Some(table) = split_tsv(&text) {
                let id_col = table.column(path, &["doc_id", "News ID", "news_id"])?;
                let title_col = table.column(path, &["title", "Headline"])?;
                let body_col = table.column(path, &["body", "News body", "news_body"])?;
                let cat_col = table.find(&["category"]);
                for (line, fields) in &table.rows {
                    if fields.len() != table.columns.len() {
                        diagnostics.push(Diagnostic::new(
                            DiagnosticKind::MalformedRow,
                            &source,
                            Some(*line),
                            fields.first().copied().unwrap_or_default(),
                            format!("expected {} columns, found {}", table.columns.len(), fields.len()),
                        ));
                        continue;
                    }
                    let doc = Document {
                        doc_id: fields[id_col].trim().to_owned(),
                        title: fields[title_col].trim().to_owned(),
                        body: fields[body_col].trim().to_owned(),
                        category: cat_col
                            .map(|c| fields[c].trim())
                            .filter(|c| !c.is_empty())
                            .map(str::to_owned),
                    };
                    accept(doc, *line, &mut diagnostics)?;
                }
            }
        }
        InputFormat::Jsonl => {
            for (line, raw) in jsonl_lines(&text) {
                match serde_json::from_str::<Document>(raw) {
                    Ok(mut doc) => {
                        doc.doc_id = doc.doc_id.trim().to_owned();
                        accept(doc, line, &mut diagnostics)?;
                    }
                    Err(e) => diagnostics.push(Diagnostic::new(
                        DiagnosticKind::MalformedRow,
                        &source,
                        Some(line),
                        "",
                        e.to_string(),
                    )),
                }
            }
        }
    }

    Ok(Parsed {
        value: corpus,
        diagnostics,
    })
}

/// A user-table field that is either a delimited string or an explicit list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ListField {
    Joined(String),
    List(Vec<String>),
}

impl ListField {
    fn split(&self, sep: &str) -> Vec<String> {
        match self {
            ListField::Joined(s) if s.trim().is_empty() => Vec::new(),
            ListField::Joined(s) => s.split(sep).map(|p| p.trim().to_owned()).collect(),
            ListField::List(v) => v.iter().map(|p| p.trim().to_owned()).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct UserRow {
    userid: String,
    #[serde(rename = "clicknewsID", default = "empty_list")]
    clicknews: ListField,
    #[serde(rename = "posnewID", default = "empty_list")]
    posnew: ListField,
    #[serde(default = "empty_list")]
    rewrite_titles: ListField,
}

fn empty_list() -> ListField {
    ListField::List(Vec::new())
}

fn split_ids(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Parse the user table, zipping `posnewID` with the `#TAB#`-separated rewritten
/// titles. Rows whose counts disagree are skipped with a diagnostic; references to
/// documents missing from `corpus` are kept and reported as dangling.
pub fn parse_user_table(path: &Path, format: InputFormat, corpus: &Corpus) -> Result<Parsed<Vec<UserProfile>>> {
    let text = read_utf8(path)?;
    let source = path.display().to_string();
    let mut diagnostics = Vec::new();
    // (line, user_id, clicks, gold doc ids, gold titles)
    #[allow(clippy::type_complexity)]
    let mut rows: Vec<(usize, String, Vec<String>, Vec<String>, Vec<String>)> = Vec::new();

    match format {
        InputFormat::Tsv => {
            if let Some(table) = split_tsv(&text) {
                let user_col = table.column(path, &["userid", "user_id"])?;
                let click_col = table.column(path, &["clicknewsID"])?;
                let pos_col = table.column(path, &["posnewID"])?;
                let titles_col = table.column(path, &["rewrite_titles"])?;
                for (line, fields) in &table.rows {
                    if fields.len() != table.columns.len() {
                        diagnostics.push(Diagnostic::new(
                            DiagnosticKind::MalformedRow,
                            &source,
                            Some(*line),
                            fields.first().copied().unwrap_or_default(),
                            format!("expected {} columns, found {}", table.columns.len(), fields.len()),
                        ));
                        continue;
                    }
                    let titles = if fields[titles_col].trim().is_empty() {
                        Vec::new()
                    } else {
                        fields[titles_col]
                            .split(TITLE_SEPARATOR)
                            .map(|t| t.trim().to_owned())
                            .collect()
                    };
                    rows.push((
                        *line,
                        fields[user_col].trim().to_owned(),
                        split_ids(fields[click_col]),
                        split_ids(fields[pos_col]),
                        titles,
                    ));
                }
            }
        }
        InputFormat::Jsonl => {
            for (line, raw) in jsonl_lines(&text) {
                match serde_json::from_str::<UserRow>(raw) {
                    Ok(row) => rows.push((
                        line,
                        row.userid.trim().to_owned(),
                        row.clicknews.split(",").into_iter().filter(|s| !s.is_empty()).collect(),
                        row.posnew.split(",").into_iter().filter(|s| !s.is_empty()).collect(),
                        row.rewrite_titles.split(TITLE_SEPARATOR),
                    )),
                    Err(e) => diagnostics.push(Diagnostic::new(
                        DiagnosticKind::MalformedRow,
                        &source,
                        Some(line),
                        "",
                        e.to_string(),
                    )),
                }
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut users = Vec::new();
    for (line, user_id, click_history, posnew, titles) in rows {
        if user_id.is_empty() {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::MalformedRow,
                &source,
                Some(line),
                "",
                "empty userid",
            ));
            continue;
        }
        if posnew.len() != titles.len() {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::RefCountMismatch,
                &source,
                Some(line),
                &user_id,
                format!(
                    "ref-count mismatch: {} posnewID entries vs {} rewrite_titles",
                    posnew.len(),
                    titles.len()
                ),
            ));
            continue;
        }
        if !seen.insert(user_id.clone()) {
            return Err(Error::DuplicateUserId(user_id));
        }
        let mut gold_refs = BTreeMap::new();
        for (doc_id, title) in posnew.into_iter().zip(titles) {
            if title.is_empty() {
                diagnostics.push(Diagnostic::new(
                    DiagnosticKind::MalformedRow,
                    &source,
                    Some(line),
                    format!("{user_id}:{doc_id}"),
                    "empty rewritten title",
                ));
                continue;
            }
            if gold_refs.contains_key(&doc_id) {
                diagnostics.push(Diagnostic::new(
                    DiagnosticKind::DuplicateReference,
                    &source,
                    Some(line),
                    format!("{user_id}:{doc_id}"),
                    "repeated posnewID; first title kept",
                ));
                continue;
            }
            gold_refs.insert(doc_id, title);
        }

        let mut reported = BTreeSet::new();
        for doc_id in click_history.iter().chain(gold_refs.keys()) {
            if !corpus.contains(doc_id) && reported.insert(doc_id.clone()) {
                diagnostics.push(Diagnostic::new(
                    DiagnosticKind::DanglingReference,
                    &source,
                    Some(line),
                    format!("{user_id}:{doc_id}"),
                    format!("doc_id {doc_id} not found in corpus"),
                ));
            }
        }

        users.push(UserProfile {
            user_id,
            click_history,
            gold_refs,
        });
    }
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    Ok(Parsed {
        value: users,
        diagnostics,
    })
}

/// One user of an instance with their reference for the query document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceUser {
    pub profile: Arc<UserProfile>,
    pub gold_ref: String,
}

impl InstanceUser {
    pub fn user_id(&self) -> &str {
        &self.profile.user_id
    }
}

/// Lookup key for a generated summary inside an instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenerationKey {
    pub model_id: String,
    pub style: PromptStyle,
    pub user_id: String,
}

/// A query document, the users who wrote references for it, and the summaries
/// generated for those users.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub query_doc: Document,
    pub users: Vec<InstanceUser>,
    pub generated: BTreeMap<GenerationKey, String>,
}

impl EvalInstance {
    pub fn new(query_doc: Document, users: Vec<InstanceUser>) -> Self {
        Self {
            query_doc,
            users,
            generated: BTreeMap::new(),
        }
    }

    pub fn doc_id(&self) -> &str {
        &self.query_doc.doc_id
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.users.iter().map(InstanceUser::user_id)
    }

    pub fn insert_generated(
        &mut self,
        model_id: impl Into<String>,
        style: PromptStyle,
        user_id: impl Into<String>,
        summary: impl Into<String>,
    ) {
        self.generated.insert(
            GenerationKey {
                model_id: model_id.into(),
                style,
                user_id: user_id.into(),
            },
            summary.into(),
        );
    }

    pub fn generated_for(&self, model_id: &str, style: PromptStyle, user_id: &str) -> Option<&str> {
        // BTreeMap lookups need an owned key; instances are small so this stays cheap.
        self.generated
            .get(&GenerationKey {
                model_id: model_id.to_owned(),
                style,
                user_id: user_id.to_owned(),
            })
            .map(String::as_str)
    }

    /// Restrict to the given users (in the given order), keeping their generations.
    pub fn restricted_to(&self, user_ids: &[&str]) -> Option<EvalInstance> {
        let users: Vec<InstanceUser> = user_ids
            .iter()
            .map(|id| self.users.iter().find(|u| u.user_id() == *id).cloned())
            .collect::<Option<_>>()?;
        let generated = self
            .generated
            .iter()
            .filter(|(k, _)| user_ids.contains(&k.user_id.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Some(EvalInstance {
            query_doc: self.query_doc.clone(),
            users,
            generated,
        })
    }
}

/// Group references by document. Documents referenced by fewer than two users are
/// skipped and reported.
pub fn build_eval_instances(corpus: &Corpus, users: &[Arc<UserProfile>]) -> Parsed<Vec<EvalInstance>> {
    let mut by_doc: BTreeMap<&str, Vec<&Arc<UserProfile>>> = BTreeMap::new();
    for user in users {
        for doc_id in user.gold_refs.keys() {
            by_doc.entry(doc_id.as_str()).or_default().push(user);
        }
    }

    let mut instances = Vec::new();
    let mut diagnostics = Vec::new();
    for (doc_id, mut refs) in by_doc {
        let Some(doc) = corpus.get(doc_id) else {
            continue;
        };
        if refs.len() < 2 {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::SkippedDocument,
                "instances",
                None,
                doc_id,
                format!("{} gold reference(s); at least 2 required", refs.len()),
            ));
            continue;
        }
        refs.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        let members = refs
            .into_iter()
            .map(|profile| InstanceUser {
                gold_ref: profile.gold_refs[doc_id].clone(),
                profile: Arc::clone(profile),
            })
            .collect();
        instances.push(EvalInstance::new(doc.clone(), members));
    }
    Parsed {
        value: instances,
        diagnostics,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationTag {
    #[default]
    Genuine,
    Adversarial,
}

/// An example document both users wrote a reference for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SharedExample {
    pub doc: Document,
    pub ref_user1: String,
    pub ref_user2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContrastiveSample {
    pub query_doc: Document,
    pub user1: Arc<UserProfile>,
    pub user2: Arc<UserProfile>,
    pub shared_examples: Vec<SharedExample>,
    pub perturbation_tag: PerturbationTag,
}

impl ContrastiveSample {
    /// Samples without shared example documents can only feed the contrastive 0-shot style.
    pub fn zero_shot_only(&self) -> bool {
        self.shared_examples.is_empty()
    }

    pub fn user_ids(&self) -> [&str; 2] {
        [&self.user1.user_id, &self.user2.user_id]
    }
}

/// Documents other than `query` that both users referenced, ordered by doc_id.
pub fn shared_examples(corpus: &Corpus, query: &str, a: &UserProfile, b: &UserProfile) -> Vec<SharedExample> {
    a.gold_refs
        .iter()
        .filter(|(doc_id, _)| doc_id.as_str() != query)
        .filter_map(|(doc_id, ref_a)| {
            let ref_b = b.gold_refs.get(doc_id)?;
            let doc = corpus.get(doc_id)?;
            Some(SharedExample {
                doc: doc.clone(),
                ref_user1: ref_a.clone(),
                ref_user2: ref_b.clone(),
            })
        })
        .collect()
}

/// Keep a seeded subset of at most `max_docs` instances, in doc_id order.
pub fn sample_documents(instances: Vec<EvalInstance>, max_docs: usize, rng_seed: u64) -> Vec<EvalInstance> {
    let mut instances = instances;
    instances.sort_by(|a, b| a.doc_id().cmp(b.doc_id()));
    if instances.len() <= max_docs {
        return instances;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x646f_6373);
    let mut picked = rand::seq::index::sample(&mut rng, instances.len(), max_docs).into_vec();
    picked.sort_unstable();
    let mut slots: Vec<Option<EvalInstance>> = instances.into_iter().map(Some).collect();
    picked.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// Draw up to `pairs_per_doc` distinct unordered user pairs per instance.
///
/// Pairs are enumerated lexicographically by user id; when an instance has more
/// pairs than requested a seeded subset is taken and re-sorted.
pub fn sample_contrastive_pairs(
    instances: &[EvalInstance],
    corpus: &Corpus,
    rng_seed: u64,
    pairs_per_doc: usize,
) -> Parsed<Vec<ContrastiveSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ordered: Vec<&EvalInstance> = instances.iter().collect();
    ordered.sort_by(|a, b| a.doc_id().cmp(b.doc_id()));

    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    for instance in ordered {
        let mut users: Vec<&InstanceUser> = instance.users.iter().collect();
        users.sort_by(|a, b| a.user_id().cmp(b.user_id()));
        let mut pairs = Vec::new();
        for (i, a) in users.iter().enumerate() {
            for b in &users[i + 1..] {
                if a.user_id() != b.user_id() {
                    pairs.push((*a, *b));
                }
            }
        }
        if pairs.len() > pairs_per_doc {
            let mut picked = rand::seq::index::sample(&mut rng, pairs.len(), pairs_per_doc).into_vec();
            picked.sort_unstable();
            pairs = picked.into_iter().map(|i| pairs[i]).collect();
        }
        for (a, b) in pairs {
            let shared = shared_examples(corpus, instance.doc_id(), &a.profile, &b.profile);
            if shared.is_empty() {
                diagnostics.push(Diagnostic::new(
                    DiagnosticKind::NoSharedExamples,
                    "samples",
                    None,
                    format!("{}:{}+{}", instance.doc_id(), a.user_id(), b.user_id()),
                    "no shared example documents; usable for contrastive 0-shot only",
                ));
            }
            samples.push(ContrastiveSample {
                query_doc: instance.query_doc.clone(),
                user1: Arc::clone(&a.profile),
                user2: Arc::clone(&b.profile),
                shared_examples: shared,
                perturbation_tag: PerturbationTag::Genuine,
            });
        }
    }
    Parsed {
        value: samples,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    fn doc(id: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: format!("title {id}"),
            body: format!("body of {id}"),
            category: None,
        }
    }

    fn user(id: &str, refs: &[(&str, &str)]) -> Arc<UserProfile> {
        Arc::new(UserProfile {
            user_id: id.into(),
            click_history: vec![],
            gold_refs: refs.iter().map(|(d, t)| (d.to_string(), t.to_string())).collect(),
        })
    }

    #[test]
    fn parses_news_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "news.tsv",
            "doc_id\ttitle\tbody\tcategory\nN1\tTitle A\tBody text\tsports\n",
        );
        let parsed = parse_news_corpus(&path, InputFormat::Tsv).unwrap();
        assert!(parsed.diagnostics.is_empty());
        assert_eq!(
            parsed.value.get("N1").unwrap(),
            &Document {
                doc_id: "N1".into(),
                title: "Title A".into(),
                body: "Body text".into(),
                category: Some("sports".into()),
            }
        );
    }

    #[test]
    fn empty_news_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "news.tsv", "");
        let parsed = parse_news_corpus(&path, InputFormat::Tsv).unwrap();
        assert!(parsed.value.is_empty());
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn duplicate_doc_id_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "news.tsv",
            "doc_id\ttitle\tbody\tcategory\nN1\tA\tx\t\nN1\tB\ty\t\n",
        );
        match parse_news_corpus(&path, InputFormat::Tsv) {
            Err(Error::DuplicateDocId(id)) => assert_eq!(id, "N1"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn empty_body_and_short_rows_are_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "news.tsv",
            "doc_id\ttitle\tbody\tcategory\nN1\tA\t \tx\nN2\tonly two\nN3\tC\tbody\t\n",
        );
        let parsed = parse_news_corpus(&path, InputFormat::Tsv).unwrap();
        assert_eq!(parsed.value.len(), 1);
        let kinds: Vec<_> = parsed.diagnostics.iter().map(|d| d.kind).collect();
        assert_eq!(kinds, vec![DiagnosticKind::EmptyBody, DiagnosticKind::MalformedRow]);
        assert_eq!(parsed.diagnostics[0].line, Some(2));
    }

    #[test]
    fn unreadable_file_is_fatal() {
        let err = parse_news_corpus(Path::new("/nonexistent/news.tsv"), InputFormat::Tsv);
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn news_jsonl_mirror() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "news.jsonl",
            "{\"doc_id\":\"N1\",\"title\":\"T\",\"body\":\"B\"}\nnot json\n",
        );
        let parsed = parse_news_corpus(&path, InputFormat::Jsonl).unwrap();
        assert_eq!(parsed.value.len(), 1);
        assert_eq!(parsed.diagnostics.len(), 1);
    }

    #[test]
    fn user_table_example_row() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::from_documents(["N108480", "N38238", "N24110"].map(doc)).unwrap();
        let path = write(
            &dir,
            "users.tsv",
            "userid\tclicknewsID\tposnewID\trewrite_titles\n\
             NT1\tN108480,N38238\tN24110\tLegal battle looms over Trump EPA's rule change of Obama's Clean Power Plan rule\n",
        );
        let parsed = parse_user_table(&path, InputFormat::Tsv, &corpus).unwrap();
        assert!(parsed.diagnostics.is_empty());
        let nt1 = &parsed.value[0];
        assert_eq!(nt1.user_id, "NT1");
        assert_eq!(nt1.click_history, vec!["N108480", "N38238"]);
        assert_eq!(nt1.gold_refs.len(), 1);
        assert!(nt1.gold_refs["N24110"].starts_with("Legal battle looms"));
    }

    #[test]
    fn user_table_split_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::from_documents(["N1", "N2"].map(doc)).unwrap();
        let path = write(
            &dir,
            "users.tsv",
            "userid\tclicknewsID\tposnewID\trewrite_titles\n\
             U1\t\tN1,N2\tA#TAB#B\n\
             U2\t\tN1,N2\tA\n",
        );
        let parsed = parse_user_table(&path, InputFormat::Tsv, &corpus).unwrap();
        assert_eq!(parsed.value.len(), 1);
        let u1 = &parsed.value[0];
        assert_eq!(u1.gold_refs["N1"], "A");
        assert_eq!(u1.gold_refs["N2"], "B");
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].kind, DiagnosticKind::RefCountMismatch);
        assert!(parsed.diagnostics[0].message.contains("ref-count mismatch"));
    }

    #[test]
    fn dangling_references_reported_once() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::from_documents(["N1"].map(doc)).unwrap();
        let path = write(
            &dir,
            "users.jsonl",
            r#"{"userid":"U1","clicknewsID":"N1, N404, N404","posnewID":["N405"],"rewrite_titles":["x"]}"#,
        );
        let parsed = parse_user_table(&path, InputFormat::Jsonl, &corpus).unwrap();
        let dangling: Vec<_> = parsed.diagnostics.iter().map(|d| d.subject.as_str()).collect();
        assert_eq!(dangling, vec!["U1:N404", "U1:N405"]);
        assert_eq!(parsed.value[0].click_history, vec!["N1", "N404", "N404"]);
    }

    #[test]
    fn instances_need_two_refs() {
        let corpus = Corpus::from_documents(["N1", "N9"].map(doc)).unwrap();
        let users: Vec<_> = ["d", "a", "c", "b"]
            .iter()
            .map(|id| user(id, &[("N9", "ref")]))
            .chain([user("e", &[("N1", "only")])])
            .collect();
        let built = build_eval_instances(&corpus, &users);
        assert_eq!(built.value.len(), 1);
        assert_eq!(built.value[0].users.len(), 4);
        assert_eq!(built.value[0].user_ids().collect::<Vec<_>>(), ["a", "b", "c", "d"]);
        assert_eq!(built.diagnostics.len(), 1);
        assert_eq!(built.diagnostics[0].subject, "N1");
        assert!(build_eval_instances(&corpus, &[]).value.is_empty());
    }

    #[test]
    fn pairs_are_all_combinations_when_budget_allows() {
        let corpus = Corpus::from_documents(["N5", "N7", "N9"].map(doc)).unwrap();
        let users = vec![
            user("a", &[("N9", "ra"), ("N5", "a5"), ("N7", "a7")]),
            user("b", &[("N9", "rb"), ("N5", "b5"), ("N7", "b7")]),
            user("c", &[("N9", "rc")]),
        ];
        let instances = build_eval_instances(&corpus, &users).value;
        let instances: Vec<_> = instances.into_iter().filter(|i| i.doc_id() == "N9").collect();
        let sampled = sample_contrastive_pairs(&instances, &corpus, 7, 3);
        let pairs: Vec<_> = sampled.value.iter().map(|s| s.user_ids()).collect();
        assert_eq!(pairs, vec![["a", "b"], ["a", "c"], ["b", "c"]]);
        let shared: Vec<_> = sampled.value[0]
            .shared_examples
            .iter()
            .map(|e| e.doc.doc_id.as_str())
            .collect();
        assert_eq!(shared, vec!["N5", "N7"]);
        assert!(sampled.value[1].zero_shot_only());
        assert_eq!(sampled.diagnostics.len(), 2);
    }

    #[test]
    fn sampling_is_seeded() {
        let corpus = Corpus::from_documents(["N9"].map(doc)).unwrap();
        let users: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|id| user(id, &[("N9", id)]))
            .collect();
        let instances = build_eval_instances(&corpus, &users).value;
        let run = |seed| serde_json::to_string(&sample_contrastive_pairs(&instances, &corpus, seed, 3).value).unwrap();
        assert_eq!(run(11), run(11));
        let picked = sample_contrastive_pairs(&instances, &corpus, 11, 3).value;
        assert_eq!(picked.len(), 3);
        for s in &picked {
            assert!(s.user1.user_id < s.user2.user_id);
        }
    }

    #[test]
    fn document_sample_is_seeded_and_ordered() {
        let instances: Vec<EvalInstance> = (0..20)
            .map(|i| {
                EvalInstance::new(
                    Document {
                        doc_id: format!("N{i:02}"),
                        title: "t".into(),
                        body: "b".into(),
                        category: None,
                    },
                    vec![],
                )
            })
            .collect();
        let ids = |v: Vec<EvalInstance>| v.iter().map(|i| i.doc_id().to_owned()).collect::<Vec<_>>();
        let a = ids(sample_documents(instances.clone(), 5, 9));
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, ids(sample_documents(instances.clone(), 5, 9)));
        assert_ne!(a, ids(sample_documents(instances.clone(), 5, 10)));
        assert_eq!(ids(sample_documents(instances, 50, 9)).len(), 20);
    }
}
