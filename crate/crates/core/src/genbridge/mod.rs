//! Completion collection: send prompts to an adapter, extract the summaries, and
//! keep a resumable checkpoint plus an audit trail.

mod adapter;
mod extract;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::PerturbationTag;
use crate::egises::{write_jsonl, ScoringRecord};
use crate::error::{Error, Result};
use crate::promptforge::{PromptStyle, RenderedPrompt};
use crate::seeding::sha256_hex;

pub use adapter::{
    AdapterError, CompletionAdapter, Decoding, HttpJsonAdapter, OracleAdapter, PlaybackAdapter, PlaybackEntry,
};
pub use extract::{extract_slot, extract_summary, ExtractPattern, ExtractionStatus};

pub const CHECKPOINT_FORMAT: &str = "icpl-generation-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub model_id: String,
    pub style: PromptStyle,
    pub doc_id: String,
    pub user_ids: Vec<String>,
    #[serde(default)]
    pub perturbation_tag: PerturbationTag,
    pub raw_completion: String,
    /// Per-user summaries joined by newlines.
    pub extracted_summary: String,
    pub summaries: Vec<String>,
    pub extraction_status: ExtractionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    fn from_completion(prompt: &RenderedPrompt, model_id: &str, raw: String, pattern: &ExtractPattern) -> Self {
        let extracted: Vec<(String, ExtractionStatus)> = if prompt.style.is_contrastive() {
            (0..prompt.user_ids.len())
                .map(|slot| extract_slot(&raw, slot, pattern))
                .collect()
        } else {
            vec![extract_summary(&raw, pattern)]
        };
        let status = extracted
            .iter()
            .map(|(_, s)| *s)
            .max()
            .unwrap_or(ExtractionStatus::Failed);
        let summaries: Vec<String> = extracted.into_iter().map(|(t, _)| t).collect();
        let (extracted_summary, summaries, error) = if status == ExtractionStatus::Failed {
            (
                String::new(),
                Vec::new(),
                Some("no summary found in completion".to_owned()),
            )
        } else {
            (summaries.join("\n"), summaries, None)
        };
        Self {
            prompt_id: prompt.prompt_id.clone(),
            model_id: model_id.to_owned(),
            style: prompt.style,
            doc_id: prompt.doc_id.clone(),
            user_ids: prompt.user_ids.clone(),
            perturbation_tag: prompt.perturbation_tag,
            raw_completion: raw,
            extracted_summary,
            summaries,
            extraction_status: status,
            error,
        }
    }

    fn failed(prompt: &RenderedPrompt, model_id: &str, reason: String) -> Self {
        Self {
            prompt_id: prompt.prompt_id.clone(),
            model_id: model_id.to_owned(),
            style: prompt.style,
            doc_id: prompt.doc_id.clone(),
            user_ids: prompt.user_ids.clone(),
            perturbation_tag: prompt.perturbation_tag,
            raw_completion: String::new(),
            extracted_summary: String::new(),
            summaries: Vec::new(),
            extraction_status: ExtractionStatus::Failed,
            error: Some(reason),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(16);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub model_id: String,
    pub workers: usize,
    pub retry: RetryPolicy,
    pub checkpoint: PathBuf,
    pub audit: Option<PathBuf>,
    pub pattern: ExtractPattern,
}

impl CollectConfig {
    pub fn new(model_id: &str, checkpoint: PathBuf) -> Self {
        Self {
            model_id: model_id.to_owned(),
            workers: 4,
            retry: RetryPolicy::default(),
            checkpoint,
            audit: None,
            pattern: ExtractPattern::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub prompt_id: String,
    pub model_id: String,
    pub attempt: u32,
    pub prompt_sha256: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CollectOutcome {
    /// One record per prompt, sorted by prompt id.
    pub records: Vec<GenerationRecord>,
    pub adapter_calls: usize,
    pub resumed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    model_id: String,
}

fn read_checkpoint(path: &Path, model_id: &str) -> Result<Vec<GenerationRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else {
        return Ok(Vec::new());
    };
    let first = first.map_err(|e| Error::io(path, e))?;
    if first.trim().is_empty() {
        return Ok(Vec::new());
    }
    let header: CheckpointHeader =
        serde_json::from_str(&first).map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    if header.model_id != model_id {
        return Err(Error::Checkpoint(format!(
            "{} belongs to model {}, not {model_id}",
            path.display(),
            header.model_id
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => records.push(r),
            // A torn final line from a killed run is dropped and redone.
            Err(e) => tracing::warn!(line = i + 2, error = %e, "skipping unreadable checkpoint line"),
        }
    }
    Ok(records)
}

fn header_line(model_id: &str) -> Result<String> {
    Ok(serde_json::to_string(&CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_owned(),
        version: CHECKPOINT_VERSION,
        model_id: model_id.to_owned(),
    })?)
}

fn write_sorted_checkpoint(path: &Path, model_id: &str, records: &[GenerationRecord]) -> Result<()> {
    let mut text = header_line(model_id)?;
    text.push('\n');
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

enum WorkerResult {
    Done(GenerationRecord, Vec<AuditEntry>),
    Exhausted(Vec<AuditEntry>, String),
}

fn run_one(
    prompt: &RenderedPrompt,
    adapter: &dyn CompletionAdapter,
    cfg: &CollectConfig,
    calls: &AtomicUsize,
) -> WorkerResult {
    let prompt_sha256 = sha256_hex(prompt.text.as_bytes());
    let mut audit = Vec::new();
    let entry = |attempt, outcome: &str, response: Option<String>, error: Option<String>| AuditEntry {
        prompt_id: prompt.prompt_id.clone(),
        model_id: cfg.model_id.clone(),
        attempt,
        prompt_sha256: prompt_sha256.clone(),
        outcome: outcome.to_owned(),
        response,
        error,
    };
    let attempts = cfg.retry.max_attempts.max(1);
    for attempt in 1..=attempts {
        calls.fetch_add(1, Ordering::SeqCst);
        match adapter.complete(prompt) {
            Ok(raw) => {
                audit.push(entry(attempt, "ok", Some(raw.clone()), None));
                let record = GenerationRecord::from_completion(prompt, &cfg.model_id, raw, &cfg.pattern);
                return WorkerResult::Done(record, audit);
            }
            Err(AdapterError::Permanent(reason)) => {
                audit.push(entry(attempt, "permanent", None, Some(reason.clone())));
                return WorkerResult::Done(GenerationRecord::failed(prompt, &cfg.model_id, reason), audit);
            }
            Err(AdapterError::Transient(reason)) => {
                audit.push(entry(attempt, "transient", None, Some(reason.clone())));
                if attempt == attempts {
                    return WorkerResult::Exhausted(
                        audit,
                        format!("{}: retries exhausted: {reason}", prompt.prompt_id),
                    );
                }
                std::thread::sleep(cfg.retry.delay(attempt));
            }
        }
    }
    unreachable!("loop returns on the last attempt")
}

fn append_audit(path: &Path, new_entries: Vec<AuditEntry>) -> Result<()> {
    let mut entries: Vec<AuditEntry> = if path.exists() {
        crate::egises::read_jsonl(path)?
    } else {
        Vec::new()
    };
    entries.extend(new_entries);
    entries.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
    write_jsonl(path, &entries)
}

/// Collect one generation per prompt.
///
/// Prompts already present in the checkpoint are not sent again. When an adapter
/// keeps failing transiently past the retry budget, the run stops with
/// [`Error::Interrupted`]; everything finished so far stays in the checkpoint and
/// the next call resumes from there.
pub fn collect(
    prompts: &[RenderedPrompt],
    adapter: &dyn CompletionAdapter,
    cfg: &CollectConfig,
) -> Result<CollectOutcome> {
    let mut seen = BTreeSet::new();
    for p in prompts {
        if !seen.insert(p.prompt_id.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate prompt id {}", p.prompt_id)));
        }
    }

    let mut done: BTreeMap<String, GenerationRecord> = read_checkpoint(&cfg.checkpoint, &cfg.model_id)?
        .into_iter()
        .filter(|r| seen.contains(r.prompt_id.as_str()))
        .map(|r| (r.prompt_id.clone(), r))
        .collect();
    let resumed = done.len();
    let pending: Vec<&RenderedPrompt> = prompts.iter().filter(|p| !done.contains_key(&p.prompt_id)).collect();

    let fresh = !cfg.checkpoint.exists() || std::fs::metadata(&cfg.checkpoint).map(|m| m.len() == 0).unwrap_or(true);
    let mut checkpoint = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&cfg.checkpoint)
        .map_err(|e| Error::io(&cfg.checkpoint, e))?;
    if fresh {
        writeln!(checkpoint, "{}", header_line(&cfg.model_id)?).map_err(|e| Error::io(&cfg.checkpoint, e))?;
    }

    let calls = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut audit = Vec::new();
    let mut interruption = None;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..cfg.workers.max(1).min(pending.len().max(1)) {
            let tx = tx.clone();
            let (pending, calls, next, stop) = (&pending, &calls, &next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(prompt) = pending.get(i) else {
                    break;
                };
                let result = run_one(prompt, adapter, cfg, calls);
                if matches!(result, WorkerResult::Exhausted(..)) {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for result in rx {
            match result {
                WorkerResult::Done(record, entries) => {
                    let line = serde_json::to_string(&record)?;
                    writeln!(checkpoint, "{line}")
                        .and_then(|_| checkpoint.flush())
                        .map_err(|e| Error::io(&cfg.checkpoint, e))?;
                    audit.extend(entries);
                    done.insert(record.prompt_id.clone(), record);
                }
                WorkerResult::Exhausted(entries, reason) => {
                    audit.extend(entries);
                    interruption.get_or_insert(reason);
                }
            }
        }
        Ok(())
    })?;

    if let Some(path) = &cfg.audit {
        append_audit(path, audit)?;
    }
    if let Some(reason) = interruption {
        return Err(Error::Interrupted {
            completed: done.len(),
            total: prompts.len(),
            reason,
        });
    }

    let records: Vec<GenerationRecord> = done.into_values().collect();
    write_sorted_checkpoint(&cfg.checkpoint, &cfg.model_id, &records)?;
    Ok(CollectOutcome {
        records,
        adapter_calls: calls.into_inner(),
        resumed,
    })
}

pub fn write_generations(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Flatten generation records into per-user scoring records. Failed records are
/// skipped; contrastive records keep their prompt id as the scoring group.
pub fn to_scoring_records(records: &[GenerationRecord]) -> Vec<ScoringRecord> {
    let mut out = Vec::new();
    for r in records {
        if r.extraction_status == ExtractionStatus::Failed {
            continue;
        }
        let group = r.style.is_contrastive().then(|| r.prompt_id.clone());
        for (user_id, summary) in r.user_ids.iter().zip(&r.summaries) {
            out.push(ScoringRecord {
                model_id: r.model_id.clone(),
                prompt_style: r.style,
                doc_id: r.doc_id.clone(),
                user_id: user_id.clone(),
                summary: summary.clone(),
                group: group.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn prompt(id: &str, style: PromptStyle) -> RenderedPrompt {
        let users = if style.is_contrastive() {
            vec!["a".into(), "b".into()]
        } else {
            vec!["a".into()]
        };
        RenderedPrompt {
            prompt_id: id.into(),
            style,
            doc_id: "N1".into(),
            user_ids: users,
            text: format!("prompt {id}"),
            section_token_counts: BTreeMap::new(),
            truncation_report: BTreeMap::new(),
            perturbation_tag: PerturbationTag::Genuine,
        }
    }

    struct Fixed(String);

    impl CompletionAdapter for Fixed {
        fn complete(&self, _: &RenderedPrompt) -> std::result::Result<String, AdapterError> {
            Ok(self.0.clone())
        }
    }

    /// Fails transiently on the listed prompt ids until `heal` is set.
    struct Flaky {
        inner: PlaybackAdapter,
        broken: Vec<String>,
        healed: Mutex<bool>,
    }

    impl CompletionAdapter for Flaky {
        fn complete(&self, p: &RenderedPrompt) -> std::result::Result<String, AdapterError> {
            if !*self.healed.lock().unwrap() && self.broken.contains(&p.prompt_id) {
                return Err(AdapterError::Transient("connection reset".into()));
            }
            self.inner.complete(p)
        }
    }

    fn quick(dir: &Path, workers: usize) -> CollectConfig {
        let mut cfg = CollectConfig::new("m", dir.join("ckpt.jsonl"));
        cfg.workers = workers;
        cfg.retry = RetryPolicy {
            max_attempts: 2,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        };
        cfg.audit = Some(dir.join("audit.jsonl"));
        cfg
    }

    #[test]
    fn fixed_endpoint_text() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = [prompt("p1", PromptStyle::ZeroShot)];
        let out = collect(&prompts, &Fixed("HEADLINE: X".into()), &quick(dir.path(), 1)).unwrap();
        assert_eq!(out.records[0].extracted_summary, "X");
        assert_eq!(out.records[0].extraction_status, ExtractionStatus::Matched);
    }

    #[test]
    fn playback_gaps_become_failed_records() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = [
            prompt("p1", PromptStyle::ZeroShot),
            prompt("p2", PromptStyle::CZeroShot),
        ];
        let adapter = PlaybackAdapter::new([PlaybackEntry {
            prompt_id: "p2".into(),
            model_id: None,
            raw_completion: "HEADLINE 1: one\nHEADLINE 2: two".into(),
        }]);
        let out = collect(&prompts, &adapter, &quick(dir.path(), 3)).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].extraction_status, ExtractionStatus::Failed);
        assert!(out.records[0]
            .error
            .as_deref()
            .unwrap()
            .contains("missing playback key"));
        assert_eq!(out.records[1].summaries, ["one", "two"]);
        let scoring = to_scoring_records(&out.records);
        assert_eq!(scoring.len(), 2);
        assert_eq!(scoring[1].group.as_deref(), Some("p2"));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let prompts: Vec<_> = (0..12)
            .map(|i| prompt(&format!("p{i:02}"), PromptStyle::ZeroShot))
            .collect();
        let entries: Vec<_> = prompts
            .iter()
            .map(|p| PlaybackEntry {
                prompt_id: p.prompt_id.clone(),
                model_id: None,
                raw_completion: format!("HEADLINE: for {}", p.prompt_id),
            })
            .collect();

        let clean_dir = tempfile::tempdir().unwrap();
        let clean = collect(
            &prompts,
            &PlaybackAdapter::new(entries.clone()),
            &quick(clean_dir.path(), 2),
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(dir.path(), 2);
        let flaky = Flaky {
            inner: PlaybackAdapter::new(entries),
            broken: vec!["p07".into()],
            healed: Mutex::new(false),
        };
        match collect(&prompts, &flaky, &cfg) {
            Err(Error::Interrupted { total, completed, .. }) => {
                assert_eq!(total, 12);
                assert!(completed < 12);
            }
            other => panic!("expected interruption, got {other:?}"),
        }
        *flaky.healed.lock().unwrap() = true;
        let resumed = collect(&prompts, &flaky, &cfg).unwrap();
        assert!(resumed.resumed > 0);
        assert_eq!(resumed.records, clean.records);

        let again = collect(&prompts, &flaky, &cfg).unwrap();
        assert_eq!(again.adapter_calls, 0);
        assert_eq!(again.records, clean.records);
        let audit: Vec<AuditEntry> = crate::egises::read_jsonl(cfg.audit.as_ref().unwrap()).unwrap();
        assert!(audit.iter().any(|a| a.outcome == "transient"));
    }

    #[test]
    fn checkpoint_of_other_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = [prompt("p1", PromptStyle::ZeroShot)];
        let cfg = quick(dir.path(), 1);
        collect(&prompts, &Fixed("x".into()), &cfg).unwrap();
        let mut other = cfg.clone();
        other.model_id = "other".into();
        assert!(matches!(
            collect(&prompts, &Fixed("x".into()), &other),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let r = RetryPolicy {
            max_attempts: 9,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(r.delay(1), Duration::from_millis(100));
        assert_eq!(r.delay(2), Duration::from_millis(200));
        assert_eq!(r.delay(3), Duration::from_millis(350));
    }
}
