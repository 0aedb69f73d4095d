use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;

use icpl_core::corpus::{
    build_eval_instances, parse_news_corpus, parse_user_table, sample_contrastive_pairs, sample_documents,
    ContrastiveSample, Corpus, Diagnostic, EvalInstance, InputFormat, PerturbationTag, UserProfile,
};
use icpl_core::egises::{
    degress_system_detailed, egises_hj, read_jsonl, scoring_units, write_jsonl, HjRatingSet, MetricDivergence,
    ScoringRecord, SystemScore,
};
use icpl_core::genbridge::{
    collect, to_scoring_records, CollectConfig, CompletionAdapter, Decoding, ExtractPattern, GenerationRecord,
    HttpJsonAdapter, OracleAdapter, PlaybackAdapter, RetryPolicy,
};
use icpl_core::oracles::{OracleContext, OracleKind, OracleModel};
use icpl_core::probes::{
    aggregate_deltas, classify_icpl, default_threshold, detect_paradoxes, emit_report, improves_on_base,
    pair_distances, IcplVerdict, ReportInputs, RuleSet, ScoreTable,
};
use icpl_core::promptforge::{
    adversarial_perturb, build_prompt_dataset, read_prompt_dataset, write_prompt_dataset, PromptStyle, RenderedPrompt,
};

use crate::config::{write_manifest, RunConfig};

pub struct Loaded {
    pub corpus: Corpus,
    pub users: Vec<Arc<UserProfile>>,
    pub instances: Vec<EvalInstance>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn load_inputs(cfg: &RunConfig) -> anyhow::Result<Loaded> {
    let news_path = cfg.corpus_path()?;
    let users_path = cfg.users_path()?;
    let news = parse_news_corpus(news_path, InputFormat::from_path(news_path))?;
    let parsed_users = parse_user_table(users_path, InputFormat::from_path(users_path), &news.value)?;
    let users: Vec<Arc<UserProfile>> = parsed_users.value.into_iter().map(Arc::new).collect();
    let mut instances = build_eval_instances(&news.value, &users);
    if let Some(n) = cfg.max_docs {
        instances.value = sample_documents(instances.value, n, cfg.seed);
    }
    let mut diagnostics = news.diagnostics;
    diagnostics.extend(parsed_users.diagnostics);
    diagnostics.extend(instances.diagnostics);
    Ok(Loaded {
        corpus: news.value,
        users,
        instances: instances.value,
        diagnostics,
    })
}

fn input_paths(cfg: &RunConfig) -> anyhow::Result<Vec<&Path>> {
    Ok(vec![cfg.corpus_path()?, cfg.users_path()?])
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn samples(cfg: &RunConfig, data: &Loaded) -> (Vec<ContrastiveSample>, Vec<Diagnostic>) {
    let parsed = sample_contrastive_pairs(&data.instances, &data.corpus, cfg.seed, cfg.pairs_per_doc);
    (parsed.value, parsed.diagnostics)
}

#[derive(Serialize)]
struct InstanceRow<'a> {
    doc_id: &'a str,
    users: Vec<&'a str>,
}

#[derive(Serialize)]
struct PairRow<'a> {
    doc_id: &'a str,
    user1: &'a str,
    user2: &'a str,
    shared_examples: Vec<&'a str>,
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let data = load_inputs(cfg)?;
    let (pairs, pair_diags) = samples(cfg, &data);
    let out = &cfg.out;
    ensure_dir(out)?;

    let mut diagnostics = data.diagnostics.clone();
    diagnostics.extend(pair_diags);
    let diag_path = out.join("diagnostics.jsonl");
    write_jsonl(&diag_path, &diagnostics)?;

    let rows: Vec<InstanceRow> = data
        .instances
        .iter()
        .map(|i| InstanceRow {
            doc_id: i.doc_id(),
            users: i.user_ids().collect(),
        })
        .collect();
    let inst_path = out.join("instances.jsonl");
    write_jsonl(&inst_path, &rows)?;

    let pair_rows: Vec<PairRow> = pairs
        .iter()
        .map(|p| PairRow {
            doc_id: &p.query_doc.doc_id,
            user1: &p.user1.user_id,
            user2: &p.user2.user_id,
            shared_examples: p.shared_examples.iter().map(|e| e.doc.doc_id.as_str()).collect(),
        })
        .collect();
    let pair_path = out.join("pairs.jsonl");
    write_jsonl(&pair_path, &pair_rows)?;

    let outputs = [diag_path, inst_path, pair_path];
    write_manifest(out, "ingest", cfg, &input_paths(cfg)?, &outputs)?;
    Ok(json!({
        "documents": data.corpus.len(),
        "users": data.users.len(),
        "instances": data.instances.len(),
        "pairs": pairs.len(),
        "diagnostics": diagnostics.len(),
    }))
}

pub fn build_prompts(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let data = load_inputs(cfg)?;
    let (pairs, _) = samples(cfg, &data);
    let forge = cfg.forge()?;
    let dataset = build_prompt_dataset(&data.instances, &pairs, &cfg.styles, &data.corpus, &forge);
    ensure_dir(&cfg.out)?;
    let prompts = cfg.out.join("prompts.jsonl");
    write_prompt_dataset(&prompts, &dataset.records)?;
    let stats = cfg.out.join("prompt_stats.json");
    std::fs::write(&stats, serde_json::to_string_pretty(&dataset.manifest)? + "\n")?;
    for f in &dataset.manifest.failures {
        tracing::warn!(prompt_id = %f.prompt_id, error = %f.error, "prompt not rendered");
    }
    write_manifest(&cfg.out, "build-prompts", cfg, &input_paths(cfg)?, &[prompts, stats])?;
    Ok(json!({
        "prompts": dataset.records.len(),
        "per_style": dataset.manifest.per_style,
        "failures": dataset.manifest.failures.len(),
    }))
}

/// Build perturbed contrastive prompts next to their genuine counterparts.
fn adversarial_prompts(cfg: &RunConfig, data: &Loaded) -> anyhow::Result<(Vec<RenderedPrompt>, Vec<RenderedPrompt>)> {
    let (pairs, _) = samples(cfg, data);
    let perturbed = pairs
        .iter()
        .map(|s| adversarial_perturb(s, &data.users, cfg.seed))
        .collect::<icpl_core::Result<Vec<_>>>()?;
    let styles: Vec<PromptStyle> = cfg.styles.iter().copied().filter(|s| s.is_contrastive()).collect();
    if styles.is_empty() {
        bail!("adversarial prompts need at least one contrastive style in `styles`");
    }
    let forge = cfg.forge()?;
    let genuine = build_prompt_dataset(&[], &pairs, &styles, &data.corpus, &forge);
    let attacked = build_prompt_dataset(&[], &perturbed, &styles, &data.corpus, &forge);
    Ok((genuine.records, attacked.records))
}

pub fn adversarial(cfg: &RunConfig, oracle: Option<&str>) -> anyhow::Result<serde_json::Value> {
    let data = load_inputs(cfg)?;
    let (genuine, attacked) = adversarial_prompts(cfg, &data)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("prompts_adversarial.jsonl");
    write_prompt_dataset(&path, &attacked)?;
    let mut outputs = vec![path];
    let mut summary = json!({ "adversarial_prompts": attacked.len() });

    if let Some(spec) = oracle {
        let model = oracle_model(cfg, spec)?;
        let forge = cfg.forge()?;
        let ctx = OracleContext::new(&data.corpus, &data.users, &forge.templates);
        let adapter = OracleAdapter { model, context: ctx };
        let dir = cfg.out.join("adversarial");
        ensure_dir(&dir)?;
        let mut rows = Vec::new();
        for (tag, prompts) in [("genuine", &genuine), ("adversarial", &attacked)] {
            let mut cc = collect_config(
                cfg,
                &adapter.model.model_id(),
                &dir.join(format!("{tag}.checkpoint.jsonl")),
            )?;
            cc.audit = None;
            let _ = std::fs::remove_file(&cc.checkpoint);
            let generated = collect(prompts, &adapter, &cc)?.records;
            std::fs::remove_file(&cc.checkpoint).ok();
            let gen_path = dir.join(format!("{tag}.generations.jsonl"));
            write_jsonl(&gen_path, &generated)?;
            outputs.push(gen_path);
            let scores = score_records(cfg, &data.instances, &to_scoring_records(&generated))?;
            for (s, _) in scores {
                rows.push((tag, s));
            }
        }
        let mut comparison = Vec::new();
        for (_, s) in rows.iter().filter(|(t, _)| *t == "genuine") {
            if let Some((_, a)) = rows
                .iter()
                .find(|(t, x)| *t == "adversarial" && x.prompt_style == s.prompt_style && x.model_id == s.model_id)
            {
                comparison.push(json!({
                    "model_id": s.model_id,
                    "prompt_style": s.prompt_style,
                    "genuine_egises": s.egises,
                    "adversarial_egises": a.egises,
                    "delta": a.egises - s.egises,
                }));
            }
        }
        let cmp_path = dir.join("comparison.json");
        std::fs::write(&cmp_path, serde_json::to_string_pretty(&comparison)? + "\n")?;
        outputs.push(cmp_path);
        summary["comparison"] = serde_json::Value::Array(comparison);
    }
    write_manifest(&cfg.out, "adversarial", cfg, &input_paths(cfg)?, &outputs)?;
    Ok(summary)
}

pub fn oracle_model(cfg: &RunConfig, spec: &str) -> anyhow::Result<OracleModel> {
    let kind: OracleKind = spec.parse()?;
    let mut model = OracleModel::new(kind, cfg.seed);
    model.length = cfg.oracle_length;
    Ok(model)
}

fn collect_config(cfg: &RunConfig, model_id: &str, checkpoint: &Path) -> anyhow::Result<CollectConfig> {
    let mut cc = CollectConfig::new(model_id, checkpoint.to_path_buf());
    cc.workers = cfg.workers;
    cc.retry = RetryPolicy {
        max_attempts: cfg.max_attempts,
        base_delay: Duration::from_millis(cfg.retry_base_ms),
        ..RetryPolicy::default()
    };
    cc.pattern = ExtractPattern::new(&cfg.extraction_marker)
        .with_context(|| format!("bad extraction marker `{}`", cfg.extraction_marker))?;
    Ok(cc)
}

pub enum AdapterChoice {
    Playback(PathBuf),
    HttpJson { endpoint: String },
    Oracle(String),
}

pub struct CollectArgs {
    pub prompts: Option<PathBuf>,
    pub adapter: AdapterChoice,
    pub model: Option<String>,
    pub output: Option<PathBuf>,
}

fn file_stem_safe(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn collect_cmd(cfg: &RunConfig, args: CollectArgs) -> anyhow::Result<serde_json::Value> {
    let prompts_path = args.prompts.unwrap_or_else(|| cfg.out.join("prompts.jsonl"));
    let prompts = read_prompt_dataset(&prompts_path)
        .with_context(|| format!("missing input: prompt dataset {}", prompts_path.display()))?;

    // Oracles need the corpus; other adapters must not require it.
    let data = match args.adapter {
        AdapterChoice::Oracle(_) => Some(load_inputs(cfg)?),
        _ => None,
    };
    let forge = cfg.forge()?;
    let (adapter, model_id): (Box<dyn CompletionAdapter + '_>, String) = match &args.adapter {
        AdapterChoice::Playback(path) => {
            let model = args.model.clone().context("playback needs --model")?;
            (Box::new(PlaybackAdapter::load(path, &model)?), model)
        }
        AdapterChoice::HttpJson { endpoint } => {
            let model = args.model.clone().context("http_json needs --model")?;
            let decoding = Decoding {
                temperature: cfg.temperature,
                top_k: cfg.top_k,
                max_tokens: cfg.max_tokens,
            };
            let adapter = HttpJsonAdapter::new(endpoint, &model, decoding, Duration::from_secs(cfg.timeout_secs));
            (Box::new(adapter), model)
        }
        AdapterChoice::Oracle(spec) => {
            let model = oracle_model(cfg, spec)?;
            let data = data.as_ref().expect("loaded above");
            let id = args.model.clone().unwrap_or_else(|| model.model_id());
            let context = OracleContext::new(&data.corpus, &data.users, &forge.templates);
            (Box::new(OracleAdapter { model, context }), id)
        }
    };

    let stem = file_stem_safe(&model_id);
    for sub in ["checkpoints", "audit", "generations"] {
        ensure_dir(&cfg.out.join(sub))?;
    }
    let mut cc = collect_config(
        cfg,
        &model_id,
        &cfg.out.join("checkpoints").join(format!("{stem}.jsonl")),
    )?;
    cc.audit = Some(cfg.out.join("audit").join(format!("{stem}.jsonl")));
    let outcome = collect(&prompts, adapter.as_ref(), &cc)?;
    let output = args
        .output
        .unwrap_or_else(|| cfg.out.join("generations").join(format!("{stem}.jsonl")));
    write_jsonl(&output, &outcome.records)?;

    let failed = outcome.records.iter().filter(|r| r.error.is_some()).count();
    let mut inputs: Vec<&Path> = vec![&prompts_path];
    if let AdapterChoice::Playback(p) = &args.adapter {
        inputs.push(p);
    }
    write_manifest(
        &cfg.out,
        &format!("collect-{stem}"),
        cfg,
        &inputs,
        std::slice::from_ref(&output),
    )?;
    Ok(json!({
        "model_id": model_id,
        "records": outcome.records.len(),
        "failed": failed,
        "resumed": outcome.resumed,
        "adapter_calls": outcome.adapter_calls,
        "output": output.display().to_string(),
    }))
}

fn generation_files(cfg: &RunConfig, given: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    if !given.is_empty() {
        return Ok(given.to_vec());
    }
    let dir = cfg.out.join("generations");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    if files.is_empty() {
        bail!(
            "missing input: no generated summaries (pass --generations or run `collect` first; looked in {})",
            dir.display()
        );
    }
    Ok(files)
}

fn read_generations(files: &[PathBuf], tag: PerturbationTag) -> anyhow::Result<Vec<GenerationRecord>> {
    let mut out = Vec::new();
    for f in files {
        let rows: Vec<GenerationRecord> =
            read_jsonl(f).with_context(|| format!("missing input: generated summaries {}", f.display()))?;
        out.extend(rows.into_iter().filter(|r| r.perturbation_tag == tag));
    }
    Ok(out)
}

fn model_styles(records: &[ScoringRecord]) -> BTreeSet<(String, PromptStyle)> {
    records.iter().map(|r| (r.model_id.clone(), r.prompt_style)).collect()
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    model_id: &'a str,
    prompt_style: PromptStyle,
    doc_id: &'a str,
    user_id: &'a str,
    degress: f64,
}

type Scored = (SystemScore, Vec<icpl_core::egises::SummaryScore>);

fn score_records(
    cfg: &RunConfig,
    instances: &[EvalInstance],
    records: &[ScoringRecord],
) -> anyhow::Result<Vec<Scored>> {
    if cfg.divergence == MetricDivergence::HumanRatings {
        bail!("human-rating scores come from `hj-score`, not `score`");
    }
    let metric = cfg.metric();
    let mut out = Vec::new();
    for (model, style) in model_styles(records) {
        let units = scoring_units(instances, records, &model, style);
        let scored = degress_system_detailed(&units, &model, style, &metric)
            .with_context(|| format!("scoring {model} / {style}"))?;
        out.push(scored);
    }
    Ok(out)
}

pub fn score(cfg: &RunConfig, generations: &[PathBuf], tag: PerturbationTag) -> anyhow::Result<serde_json::Value> {
    let files = generation_files(cfg, generations)?;
    let data = load_inputs(cfg)?;
    let records = to_scoring_records(&read_generations(&files, tag)?);
    if records.is_empty() {
        bail!("missing input: the generation files hold no usable {tag:?} summaries");
    }
    let scored = score_records(cfg, &data.instances, &records)?;

    ensure_dir(&cfg.out)?;
    let systems: Vec<&SystemScore> = scored.iter().map(|(s, _)| s).collect();
    let rows: Vec<SummaryRow> = scored
        .iter()
        .flat_map(|(s, details)| {
            details.iter().map(move |d| SummaryRow {
                model_id: &s.model_id,
                prompt_style: s.prompt_style,
                doc_id: &d.doc_id,
                user_id: &d.user_id,
                degress: d.degress,
            })
        })
        .collect();
    let sys_path = cfg.out.join("scores.jsonl");
    write_jsonl(&sys_path, &systems)?;
    let sum_path = cfg.out.join("summary_scores.jsonl");
    write_jsonl(&sum_path, &rows)?;
    let table = ScoreTable::from_system_scores(&scored.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
    let csv_path = cfg.out.join("scores.csv");
    table.write_csv(&csv_path)?;

    let mut inputs = input_paths(cfg)?;
    inputs.extend(files.iter().map(PathBuf::as_path));
    write_manifest(&cfg.out, "score", cfg, &inputs, &[sys_path, sum_path, csv_path.clone()])?;
    Ok(json!({
        "systems": systems,
        "table": csv_path.display().to_string(),
    }))
}

pub fn hj_score(cfg: &RunConfig, ratings: &Path, generations: &[PathBuf]) -> anyhow::Result<serde_json::Value> {
    let files = generation_files(cfg, generations)?;
    let data = load_inputs(cfg)?;
    let ratings_set = HjRatingSet::load(ratings)?;
    let records = to_scoring_records(&read_generations(&files, PerturbationTag::Genuine)?);
    let metric = cfg.metric();
    let mut rows = Vec::new();
    for (model, style) in model_styles(&records) {
        let units = scoring_units(&data.instances, &records, &model, style);
        let (hj, _) = egises_hj(&units, &ratings_set, &model, style, &metric)
            .with_context(|| format!("human-rating score for {model} / {style}"))?;
        let jsd_cfg = icpl_core::egises::MetricConfig {
            divergence: MetricDivergence::Jsd,
            ..metric
        };
        let (jsd, _) = degress_system_detailed(&units, &model, style, &jsd_cfg)?;
        rows.push(json!({
            "model_id": model,
            "prompt_style": style,
            "egises_hj": hj.egises,
            "egises_jsd": jsd.egises,
            "documents": hj.documents,
            "summaries": hj.summaries,
        }));
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("hj_scores.jsonl");
    write_jsonl(&path, &rows)?;
    let mut inputs = input_paths(cfg)?;
    inputs.push(ratings);
    inputs.extend(files.iter().map(PathBuf::as_path));
    write_manifest(&cfg.out, "hj-score", cfg, &inputs, &[path])?;
    Ok(json!({ "scores": rows }))
}

fn icpl_verdicts(cfg: &RunConfig, generations: &[PathBuf]) -> anyhow::Result<Vec<IcplVerdict>> {
    let data = load_inputs(cfg)?;
    let records = to_scoring_records(&read_generations(generations, PerturbationTag::Genuine)?);
    let metric = cfg.metric();
    let mut verdicts = Vec::new();
    for (model, style) in model_styles(&records) {
        if !style.is_contrastive() {
            continue;
        }
        let units = scoring_units(&data.instances, &records, &model, style);
        let pairs = pair_distances(&units, &model, style, &metric)?;
        let Some(median) = default_threshold(&pairs) else {
            continue;
        };
        let tau_u = cfg.tau_u.unwrap_or(median);
        let tau_s = cfg.tau_s.unwrap_or(tau_u);
        verdicts.push(classify_icpl(&model, style, &pairs, tau_u, tau_s));
    }
    Ok(verdicts)
}

fn read_table(cfg: &RunConfig, scores: Option<&Path>) -> anyhow::Result<(ScoreTable, PathBuf)> {
    let path = scores.map_or_else(|| cfg.out.join("scores.csv"), Path::to_path_buf);
    let table =
        ScoreTable::read_csv(&path).with_context(|| format!("missing input: score table {}", path.display()))?;
    Ok((table, path))
}

pub fn probe(cfg: &RunConfig, scores: Option<&Path>, generations: &[PathBuf]) -> anyhow::Result<serde_json::Value> {
    let (table, table_path) = read_table(cfg, scores)?;
    let matrix = detect_paradoxes(&table, cfg.rules);
    let aggregates = aggregate_deltas(&table, cfg.rules);
    let verdicts = if generations.is_empty() {
        Vec::new()
    } else {
        icpl_verdicts(cfg, generations)?
    };
    let base_flags = (!cfg.base_models.is_empty()).then(|| improves_on_base(&table, &cfg.base_models));
    let inputs = ReportInputs {
        matrix: Some(&matrix),
        aggregates: Some(&aggregates),
        verdicts: &verdicts,
        base_flags: base_flags.as_ref(),
    };
    let dir = cfg.out.join("probe");
    let written = emit_report(&dir, &table, &inputs)?;
    let mut input_files: Vec<&Path> = vec![&table_path];
    input_files.extend(generations.iter().map(PathBuf::as_path));
    write_manifest(&dir, "probe", cfg, &input_files, &written)?;

    let counts: BTreeMap<&str, usize> = matrix.paradox_counts().into_iter().collect();
    Ok(json!({
        "rule_set": cfg.rules,
        "models": matrix.models.len(),
        "paradoxes": counts,
        "report": dir.display().to_string(),
    }))
}

pub fn report(cfg: &RunConfig, scores: Option<&Path>, rules: Option<RuleSet>) -> anyhow::Result<serde_json::Value> {
    let (table, table_path) = read_table(cfg, scores)?;
    let matrix = rules.map(|r| detect_paradoxes(&table, r));
    let aggregates = rules.map(|r| aggregate_deltas(&table, r));
    let base_flags = (!cfg.base_models.is_empty()).then(|| improves_on_base(&table, &cfg.base_models));
    let inputs = ReportInputs {
        matrix: matrix.as_ref(),
        aggregates: aggregates.as_ref(),
        verdicts: &[],
        base_flags: base_flags.as_ref(),
    };
    let dir = cfg.out.join("report");
    let written = emit_report(&dir, &table, &inputs)?;
    write_manifest(&dir, "report", cfg, &[&table_path], &written)?;
    let top: Vec<_> = icpl_core::probes::leaderboard(&table).into_iter().take(5).collect();
    Ok(json!({ "top": top, "report": dir.display().to_string() }))
}
