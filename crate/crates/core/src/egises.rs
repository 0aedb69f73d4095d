//! DEGRESS / EGISES scoring.
//!
//! For a document with users `1..n`, gold references `u_j` and generated summaries
//! `s_j`, the reference-side deviation of user `j` against `k` is
//!
//! ```text
//! w(j|k) = σ(u_j, u_k) / max(σ(u_j, d), floor)
//! X_jk   = softmax_k(w(j|·)) · σ(u_j, u_k)
//! ```
//!
//! and `Y_jk` is the same quantity over generated summaries. A summary's DEGRESS is
//! the mean of `(min(X,Y)+ε)/(max(X,Y)+ε)` over `k`; the system score averages users
//! within a document, then documents. EGISES is `1 − DEGRESS`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EvalInstance;
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;
use crate::textdist::{jsd, sqrt_jsd, Tokenizer, WordDistribution};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDivergence {
    #[default]
    Jsd,
    SqrtJsd,
    HumanRatings,
}

impl std::str::FromStr for MetricDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsd" => Ok(Self::Jsd),
            "sqrt_jsd" => Ok(Self::SqrtJsd),
            "human_ratings" => Ok(Self::HumanRatings),
            other => Err(Error::InvalidConfig(format!("unknown divergence `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub epsilon: f64,
    pub divergence: MetricDivergence,
    pub include_self_term: bool,
    pub doc_distance_floor: f64,
    pub tokenizer: Tokenizer,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            divergence: MetricDivergence::Jsd,
            include_self_term: true,
            doc_distance_floor: 1e-9,
            tokenizer: Tokenizer::distribution(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.doc_distance_floor > 0.0 && self.doc_distance_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "doc_distance_floor must be > 0, got {}",
                self.doc_distance_floor
            )));
        }
        Ok(())
    }

    /// Divergence between two texts' distributions. Human ratings fall back to
    /// JSD, which is what they use for summary-document distances.
    pub fn text_divergence(&self, p: &WordDistribution, q: &WordDistribution) -> Result<f64> {
        match self.divergence {
            MetricDivergence::SqrtJsd => sqrt_jsd(p, q),
            MetricDivergence::Jsd | MetricDivergence::HumanRatings => jsd(p, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryScore {
    pub doc_id: String,
    pub user_id: String,
    pub degress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub model_id: String,
    pub prompt_style: PromptStyle,
    pub degress: f64,
    pub egises: f64,
    pub documents: usize,
    pub summaries: usize,
}

/// `σ(a,b) / max(σ(a,doc), floor)` with the configured text divergence.
pub fn deviation_weight(
    a: &WordDistribution,
    b: &WordDistribution,
    doc: &WordDistribution,
    cfg: &MetricConfig,
) -> Result<f64> {
    let pair = cfg.text_divergence(a, b)?;
    let to_doc = cfg.text_divergence(a, doc)?;
    Ok(pair / to_doc.max(cfg.doc_distance_floor))
}

/// Distances among one side's texts and from each text to the document.
#[derive(Debug, Clone, PartialEq)]
pub struct SideDistances {
    pub pair: Vec<Vec<f64>>,
    pub doc: Vec<f64>,
}

impl SideDistances {
    fn from_distributions(dists: &[WordDistribution], doc: &WordDistribution, cfg: &MetricConfig) -> Result<Self> {
        let n = dists.len();
        let mut pair = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in j + 1..n {
                let d = cfg.text_divergence(&dists[j], &dists[k])?;
                pair[j][k] = d;
                pair[k][j] = d;
            }
        }
        let doc = dists
            .iter()
            .map(|p| cfg.text_divergence(p, doc))
            .collect::<Result<_>>()?;
        Ok(SideDistances { pair, doc })
    }

    /// Softmax-weighted deviations of user `j` over the index set `ks`.
    fn deviations(&self, j: usize, ks: &[usize], floor: f64) -> Vec<f64> {
        let denom = self.doc[j].max(floor);
        let w: Vec<f64> = ks.iter().map(|&k| self.pair[j][k] / denom).collect();
        let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = w.iter().map(|x| (x - top).exp()).collect();
        let z: f64 = e.iter().sum();
        ks.iter().zip(e).map(|(&k, ek)| ek / z * self.pair[j][k]).collect()
    }
}

/// DEGRESS of user `j` given precomputed distances on both sides.
pub fn degress_from_distances(refs: &SideDistances, gens: &SideDistances, j: usize, cfg: &MetricConfig) -> f64 {
    let n = refs.doc.len();
    let ks: Vec<usize> = (0..n).filter(|&k| cfg.include_self_term || k != j).collect();
    if ks.is_empty() {
        return 1.0;
    }
    let x = refs.deviations(j, &ks, cfg.doc_distance_floor);
    let y = gens.deviations(j, &ks, cfg.doc_distance_floor);
    let eps = cfg.epsilon;
    let sum: f64 = x
        .iter()
        .zip(&y)
        .map(|(&a, &b)| (a.min(b) + eps) / (a.max(b) + eps))
        .sum();
    (sum / ks.len() as f64).clamp(0.0, 1.0)
}

fn check_users(instance: &EvalInstance) -> Result<()> {
    if instance.users.len() < 2 {
        return Err(Error::TooFewUsers {
            doc_id: instance.doc_id().to_owned(),
            found: instance.users.len(),
        });
    }
    Ok(())
}

fn generated_texts<'a>(instance: &'a EvalInstance, model_id: &str, style: PromptStyle) -> Result<Vec<&'a str>> {
    instance
        .users
        .iter()
        .map(|u| {
            instance
                .generated_for(model_id, style, u.user_id())
                .ok_or_else(|| Error::MissingGeneration {
                    model_id: model_id.to_owned(),
                    style: style.to_string(),
                    user_id: u.user_id().to_owned(),
                    doc_id: instance.doc_id().to_owned(),
                })
        })
        .collect()
}

fn summary_distributions(
    instance: &EvalInstance,
    texts: &[&str],
    tokenizer: &Tokenizer,
) -> Result<Vec<WordDistribution>> {
    texts
        .iter()
        .zip(&instance.users)
        .map(|(text, user)| {
            let dist = WordDistribution::from_text(text, tokenizer);
            if dist.is_empty() {
                Err(Error::EmptySummary {
                    doc_id: instance.doc_id().to_owned(),
                    user_id: user.user_id().to_owned(),
                })
            } else {
                Ok(dist)
            }
        })
        .collect()
}

fn doc_distribution(instance: &EvalInstance, cfg: &MetricConfig) -> WordDistribution {
    WordDistribution::from_text(&instance.query_doc.full_text(), &cfg.tokenizer)
}

fn reference_side(instance: &EvalInstance, doc: &WordDistribution, cfg: &MetricConfig) -> Result<SideDistances> {
    let refs: Vec<WordDistribution> = instance
        .users
        .iter()
        .map(|u| WordDistribution::from_text(&u.gold_ref, &cfg.tokenizer))
        .collect();
    SideDistances::from_distributions(&refs, doc, cfg)
}

/// Scores for every user of one instance.
pub fn degress_instance(
    instance: &EvalInstance,
    model_id: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<Vec<SummaryScore>> {
    if cfg.divergence == MetricDivergence::HumanRatings {
        return Err(Error::InvalidConfig(
            "human_ratings divergence needs a rating set; use egises_hj".into(),
        ));
    }
    check_users(instance)?;
    let texts = generated_texts(instance, model_id, style)?;
    let gens = summary_distributions(instance, &texts, &cfg.tokenizer)?;
    let doc = doc_distribution(instance, cfg);
    let ref_side = reference_side(instance, &doc, cfg)?;
    let gen_side = SideDistances::from_distributions(&gens, &doc, cfg)?;
    Ok(per_user(instance, &ref_side, &gen_side, cfg))
}

fn per_user(
    instance: &EvalInstance,
    refs: &SideDistances,
    gens: &SideDistances,
    cfg: &MetricConfig,
) -> Vec<SummaryScore> {
    instance
        .users
        .iter()
        .enumerate()
        .map(|(j, u)| SummaryScore {
            doc_id: instance.doc_id().to_owned(),
            user_id: u.user_id().to_owned(),
            degress: degress_from_distances(refs, gens, j, cfg),
        })
        .collect()
}

/// DEGRESS of user `user_index` of `instance`.
pub fn degress_summary(
    instance: &EvalInstance,
    model_id: &str,
    style: PromptStyle,
    user_index: usize,
    cfg: &MetricConfig,
) -> Result<SummaryScore> {
    let mut scores = degress_instance(instance, model_id, style, cfg)?;
    if user_index >= scores.len() {
        return Err(Error::InvalidConfig(format!(
            "user index {user_index} out of range for {}",
            instance.doc_id()
        )));
    }
    Ok(scores.swap_remove(user_index))
}

/// Mean over users within each doc_id, then mean over doc_ids. Units that share a
/// doc_id (for example the user pairs of contrastive prompts) pool into one document.
fn aggregate(
    model_id: &str,
    style: PromptStyle,
    per_instance: Vec<Vec<SummaryScore>>,
) -> Result<(SystemScore, Vec<SummaryScore>)> {
    let mut by_doc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for score in per_instance.iter().flatten() {
        let entry = by_doc.entry(&score.doc_id).or_default();
        entry.0 += score.degress;
        entry.1 += 1;
    }
    if by_doc.is_empty() {
        return Err(Error::NoScoreableInstances {
            model_id: model_id.to_owned(),
            style: style.to_string(),
        });
    }
    let documents = by_doc.len();
    let degress = by_doc.values().map(|(s, n)| s / *n as f64).sum::<f64>() / documents as f64;
    let details: Vec<SummaryScore> = per_instance.into_iter().flatten().collect();
    Ok((
        SystemScore {
            model_id: model_id.to_owned(),
            prompt_style: style,
            degress,
            egises: 1.0 - degress,
            documents,
            summaries: details.len(),
        },
        details,
    ))
}

/// System-level score plus the per-summary details.
pub fn degress_system_detailed(
    instances: &[EvalInstance],
    model_id: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<(SystemScore, Vec<SummaryScore>)> {
    cfg.validate()?;
    let per_instance = instances
        .par_iter()
        .map(|i| degress_instance(i, model_id, style, cfg))
        .collect::<Result<Vec<_>>>()?;
    aggregate(model_id, style, per_instance)
}

pub fn degress_system(
    instances: &[EvalInstance],
    model_id: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<SystemScore> {
    degress_system_detailed(instances, model_id, style, cfg).map(|(s, _)| s)
}

/// One generated summary, as consumed by scoring. Contrastive outputs carry the
/// prompt they came from in `group`, so each pair is scored as its own unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringRecord {
    pub model_id: String,
    pub prompt_style: PromptStyle,
    pub doc_id: String,
    pub user_id: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Build the scoring units for one (model, style). Ungrouped records attach to the
/// instance of their document; grouped records form one unit per group holding
/// only that group's users. Instances with no records are left out.
pub fn scoring_units(
    instances: &[EvalInstance],
    records: &[ScoringRecord],
    model_id: &str,
    style: PromptStyle,
) -> Vec<EvalInstance> {
    let by_doc: BTreeMap<&str, &EvalInstance> = instances.iter().map(|i| (i.doc_id(), i)).collect();
    let mut plain: BTreeMap<&str, EvalInstance> = BTreeMap::new();
    let mut groups: BTreeMap<&str, (&str, Vec<&ScoringRecord>)> = BTreeMap::new();
    for record in records
        .iter()
        .filter(|r| r.model_id == model_id && r.prompt_style == style)
    {
        let Some(instance) = by_doc.get(record.doc_id.as_str()) else {
            tracing::warn!(doc_id = %record.doc_id, "generation for a document without an instance");
            continue;
        };
        match &record.group {
            None => {
                plain
                    .entry(instance.doc_id())
                    .or_insert_with(|| (*instance).clone())
                    .insert_generated(model_id, style, &record.user_id, &record.summary);
            }
            Some(group) => groups
                .entry(group.as_str())
                .or_insert_with(|| (instance.doc_id(), Vec::new()))
                .1
                .push(record),
        }
    }

    let mut units: Vec<EvalInstance> = plain.into_values().collect();
    for (group, (doc_id, members)) in groups {
        let instance = by_doc[doc_id];
        let wanted: BTreeSet<&str> = members.iter().map(|r| r.user_id.as_str()).collect();
        let ids: Vec<&str> = instance.user_ids().filter(|u| wanted.contains(u)).collect();
        let Some(mut unit) = instance.restricted_to(&ids) else {
            continue;
        };
        if ids.len() != wanted.len() {
            tracing::warn!(group, "group names users without a reference for its document");
        }
        for r in members {
            unit.insert_generated(model_id, style, &r.user_id, &r.summary);
        }
        units.push(unit);
    }
    units
}

pub fn read_scoring_records(path: &Path) -> Result<Vec<ScoringRecord>> {
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingSide {
    Reference,
    Generated,
}

/// One human similarity judgement between two summaries of the same document.
/// `a_id`/`b_id` are user ids; generated-side ratings may name the model and style
/// they apply to, otherwise they apply to every model and style.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HjRating {
    pub doc_id: String,
    pub side: RatingSide,
    pub a_id: String,
    pub b_id: String,
    pub rating: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_style: Option<PromptStyle>,
}

type RatingKey = (String, RatingSide, Option<(String, PromptStyle)>, String, String);

/// Similarity ratings on a 1..=6 scale, symmetric in the two summary ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HjRatingSet {
    ratings: BTreeMap<RatingKey, u8>,
}

/// `(6 − r) / 5`: rating 6 maps to distance 0, rating 1 to distance 1.
pub fn rating_to_distance(rating: u8) -> f64 {
    (6.0 - f64::from(rating)) / 5.0
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl HjRatingSet {
    pub fn from_records(records: impl IntoIterator<Item = HjRating>) -> Result<Self> {
        let mut set = HjRatingSet::default();
        for r in records {
            let (lo, hi) = ordered(&r.a_id, &r.b_id);
            let scope = match (r.side, r.model_id, r.prompt_style) {
                (RatingSide::Generated, Some(m), Some(s)) => Some((m, s)),
                _ => None,
            };
            let label = format!("{}/{:?}/{lo}~{hi}", r.doc_id, r.side);
            let rating =
                u8::try_from(r.rating)
                    .ok()
                    .filter(|v| (1..=6).contains(v))
                    .ok_or(Error::RatingOutOfRange {
                        key: label.clone(),
                        rating: r.rating,
                    })?;
            if let Some(previous) = set.ratings.insert((r.doc_id, r.side, scope, lo, hi), rating) {
                if previous != rating {
                    return Err(Error::InvalidConfig(format!(
                        "conflicting ratings {previous} and {rating} for {label}"
                    )));
                }
            }
        }
        Ok(set)
    }

    /// Read ratings from `.csv` or JSONL.
    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
        let records: Vec<HjRating> = if is_csv {
            let mut reader = csv::Reader::from_path(path)?;
            reader.deserialize().collect::<std::result::Result<_, _>>()?
        } else {
            read_jsonl(path)?
        };
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn get(
        &self,
        doc_id: &str,
        side: RatingSide,
        scope: Option<(&str, PromptStyle)>,
        a: &str,
        b: &str,
    ) -> Option<u8> {
        let (lo, hi) = ordered(a, b);
        let scoped = scope.map(|(m, s)| (m.to_owned(), s));
        let exact = (doc_id.to_owned(), side, scoped, lo.clone(), hi.clone());
        self.ratings
            .get(&exact)
            .or_else(|| self.ratings.get(&(doc_id.to_owned(), side, None, lo, hi)))
            .copied()
    }
}

fn rated_side(
    instance: &EvalInstance,
    ratings: &HjRatingSet,
    side: RatingSide,
    scope: Option<(&str, PromptStyle)>,
    doc_distances: Vec<f64>,
    missing: &mut Vec<String>,
) -> SideDistances {
    let ids: Vec<&str> = instance.user_ids().collect();
    let n = ids.len();
    let mut pair = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in j + 1..n {
            match ratings.get(instance.doc_id(), side, scope, ids[j], ids[k]) {
                Some(r) => {
                    pair[j][k] = rating_to_distance(r);
                    pair[k][j] = pair[j][k];
                }
                None => {
                    let (lo, hi) = ordered(ids[j], ids[k]);
                    let side_name = match side {
                        RatingSide::Reference => "reference",
                        RatingSide::Generated => "generated",
                    };
                    missing.push(format!("{}/{side_name}/{lo}~{hi}", instance.doc_id()));
                }
            }
        }
    }
    SideDistances {
        pair,
        doc: doc_distances,
    }
}

/// EGISES with summary-summary distances taken from human ratings and
/// summary-document distances from JSD.
pub fn egises_hj(
    instances: &[EvalInstance],
    ratings: &HjRatingSet,
    model_id: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<(SystemScore, Vec<SummaryScore>)> {
    cfg.validate()?;
    let doc_cfg = MetricConfig {
        divergence: MetricDivergence::Jsd,
        ..*cfg
    };
    let mut missing = Vec::new();
    let mut per_instance = Vec::new();
    for instance in instances {
        check_users(instance)?;
        let texts = generated_texts(instance, model_id, style)?;
        let gens = summary_distributions(instance, &texts, &cfg.tokenizer)?;
        let doc = doc_distribution(instance, cfg);
        let ref_doc = reference_side(instance, &doc, &doc_cfg)?.doc;
        let gen_doc = gens.iter().map(|g| jsd(g, &doc)).collect::<Result<Vec<_>>>()?;
        let refs = rated_side(instance, ratings, RatingSide::Reference, None, ref_doc, &mut missing);
        let gens = rated_side(
            instance,
            ratings,
            RatingSide::Generated,
            Some((model_id, style)),
            gen_doc,
            &mut missing,
        );
        per_instance.push(per_user(instance, &refs, &gens, cfg));
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::MissingRatings(missing));
    }
    aggregate(model_id, style, per_instance)
}
