use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use icpl_core::egises::{MetricConfig, MetricDivergence};
use icpl_core::probes::RuleSet;
use icpl_core::promptforge::{ForgeConfig, PromptBudget, PromptStyle, TemplateSet};
use icpl_core::seeding::sha256_hex;
use icpl_core::textdist::{Tokenizer, TokenizerKind, TruncationSide};

/// Everything a run depends on. Loaded from a flat TOML file, then overridden by
/// environment variables (paths only) and flags. The whole value is written into
/// every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,

    pub pairs_per_doc: usize,
    /// Seeded cap on the number of query documents; all of them when unset.
    pub max_docs: Option<usize>,
    pub styles: Vec<PromptStyle>,
    pub templates: Option<PathBuf>,
    pub truncation: TruncationSide,
    pub budget_tokenizer: TokenizerKind,
    pub budgets: BTreeMap<PromptStyle, PromptBudget>,

    pub epsilon: f64,
    pub divergence: MetricDivergence,
    pub include_self_term: bool,
    pub doc_distance_floor: f64,
    pub distribution_tokenizer: TokenizerKind,
    pub lowercase: bool,
    pub strip_punct: bool,

    pub rules: RuleSet,
    pub tau_u: Option<f64>,
    pub tau_s: Option<f64>,
    /// Optional model → base model map for the 0-shot comparison column.
    pub base_models: BTreeMap<String, String>,

    pub oracle_length: usize,
    pub extraction_marker: String,
    pub temperature: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let metric = MetricConfig::default();
        Self {
            corpus: None,
            users: None,
            out: PathBuf::from("out"),
            seed: 0,
            workers: 4,
            pairs_per_doc: icpl_core::corpus::DEFAULT_PAIRS_PER_DOC,
            max_docs: None,
            styles: PromptStyle::ALL.to_vec(),
            templates: None,
            truncation: TruncationSide::Tail,
            budget_tokenizer: TokenizerKind::Whitespace,
            budgets: BTreeMap::new(),
            epsilon: metric.epsilon,
            divergence: metric.divergence,
            include_self_term: metric.include_self_term,
            doc_distance_floor: metric.doc_distance_floor,
            distribution_tokenizer: metric.tokenizer.kind,
            lowercase: metric.tokenizer.lowercase,
            strip_punct: metric.tokenizer.strip_punct,
            rules: RuleSet::Empirical,
            tau_u: None,
            tau_s: None,
            base_models: BTreeMap::new(),
            oracle_length: 30,
            extraction_marker: "HEADLINE".into(),
            temperature: 0.6,
            top_k: 16,
            max_tokens: 4096,
            max_attempts: 5,
            retry_base_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.metric().validate()?;
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.max_docs == Some(0) {
            bail!("max_docs must be at least 1 when set");
        }
        for (name, tau) in [("tau_u", self.tau_u), ("tau_s", self.tau_s)] {
            if let Some(t) = tau {
                if !(t > 0.0 && t < 1.0) {
                    bail!("{name} must lie in (0, 1), got {t}");
                }
            }
        }
        Ok(())
    }

    pub fn metric(&self) -> MetricConfig {
        MetricConfig {
            epsilon: self.epsilon,
            divergence: self.divergence,
            include_self_term: self.include_self_term,
            doc_distance_floor: self.doc_distance_floor,
            tokenizer: Tokenizer {
                kind: self.distribution_tokenizer,
                lowercase: self.lowercase,
                strip_punct: self.strip_punct,
            },
        }
    }

    pub fn forge(&self) -> anyhow::Result<ForgeConfig> {
        let mut cfg = ForgeConfig {
            tokenizer: Tokenizer {
                kind: self.budget_tokenizer,
                ..Tokenizer::budget()
            },
            truncation: self.truncation,
            ..ForgeConfig::default()
        };
        if let Some(path) = &self.templates {
            cfg.templates = TemplateSet::load(path)?;
        }
        cfg.budgets.extend(self.budgets.iter().map(|(s, b)| (*s, *b)));
        Ok(cfg)
    }

    pub fn corpus_path(&self) -> anyhow::Result<&Path> {
        self.corpus
            .as_deref()
            .context("missing input: news corpus (pass --corpus, set ICPL_CORPUS, or add `corpus` to the config)")
    }

    pub fn users_path(&self) -> anyhow::Result<&Path> {
        self.users
            .as_deref()
            .context("missing input: user table (pass --users, set ICPL_USERS, or add `users` to the config)")
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> anyhow::Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: String,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Write `<dir>/<command>.manifest.json`. Output paths are recorded relative to `dir`.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> anyhow::Result<PathBuf> {
    let mut outs = Vec::new();
    for p in outputs {
        let mut d = digest(p)?;
        d.path = p.strip_prefix(dir).unwrap_or(p).display().to_string();
        outs.push(d);
    }
    outs.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: "icpl",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash: cfg.hash(),
        config: cfg,
        inputs: inputs.iter().map(|p| digest(p)).collect::<anyhow::Result<_>>()?,
        outputs: outs,
    };
    let path = dir.join(format!("{command}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
