//! Synthetic summarizers with known personalization behaviour, an independent
//! brute-force metric evaluator, seeded fixture generators, and the rating
//! quantization bound used to check the human-judgment variant.

mod brute;
mod hj;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, UserProfile};
use crate::error::{Error, Result};
use crate::promptforge::{RenderedPrompt, TemplateSet};
use crate::seeding::rng_for;
use crate::textdist::Tokenizer;

pub use brute::{brute_force_degress, BruteForceScore};
pub use hj::{quantize_distance, quantized_ratings, QuantizedRatings};
pub use synth::{random_fixture, synthetic_corpus, FixtureSpec, SyntheticCorpus, SyntheticSpec};

/// Default oracle summary length in tokens.
pub const DEFAULT_LENGTH: usize = 30;

/// Tokens kept from the article when a profile matches nothing.
const FALLBACK_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OracleKind {
    /// Returns the user's gold reference.
    Parrot,
    /// Returns the same document digest for every user.
    Constant,
    /// Mixes `lambda·N` reference tokens with `(1−lambda)·N` document tokens.
    Interpolate { lambda: f64 },
    /// Keeps the article tokens that also occur in the profile sections of the prompt.
    ProfileSensitive,
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parrot" => Ok(Self::Parrot),
            "constant" => Ok(Self::Constant),
            "profile-sensitive" | "profile_sensitive" => Ok(Self::ProfileSensitive),
            other => {
                let lambda = other
                    .strip_prefix("interpolate:")
                    .and_then(|l| l.parse::<f64>().ok())
                    .ok_or_else(|| Error::Oracle(format!("unknown oracle `{other}`")))?;
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::Oracle(format!("lambda {lambda} outside [0,1]")));
                }
                Ok(Self::Interpolate { lambda })
            }
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleKind::Parrot => f.write_str("parrot"),
            OracleKind::Constant => f.write_str("constant"),
            OracleKind::Interpolate { lambda } => write!(f, "interpolate:{lambda}"),
            OracleKind::ProfileSensitive => f.write_str("profile-sensitive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    pub kind: OracleKind,
    pub seed: u64,
    pub length: usize,
}

/// What an oracle may look up besides the prompt itself.
pub struct OracleContext<'a> {
    pub corpus: &'a Corpus,
    pub users: BTreeMap<&'a str, &'a UserProfile>,
    pub templates: &'a TemplateSet,
}

impl<'a> OracleContext<'a> {
    pub fn new(corpus: &'a Corpus, users: &'a [Arc<UserProfile>], templates: &'a TemplateSet) -> Self {
        Self {
            corpus,
            users: users.iter().map(|u| (u.user_id.as_str(), &**u)).collect(),
            templates,
        }
    }
}

fn words(text: &str) -> Vec<String> {
    Tokenizer::distribution().tokenize(text)
}

impl OracleModel {
    pub fn new(kind: OracleKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            length: DEFAULT_LENGTH,
        }
    }

    /// Model id used in generation and score records.
    pub fn model_id(&self) -> String {
        match self.kind {
            OracleKind::Interpolate { lambda } => format!("oracle-interpolate-{lambda}"),
            other => format!("oracle-{other}"),
        }
    }

    /// Summary for the `slot`-th user of `prompt` (0 for plain prompts).
    pub fn summarize(&self, prompt: &RenderedPrompt, slot: usize, ctx: &OracleContext<'_>) -> Result<String> {
        let user_id = prompt
            .user_ids
            .get(slot)
            .ok_or_else(|| Error::Oracle(format!("{}: no user in slot {slot}", prompt.prompt_id)))?;
        let doc = ctx
            .corpus
            .get(&prompt.doc_id)
            .ok_or_else(|| Error::Oracle(format!("unknown document {}", prompt.doc_id)))?;
        let gold_ref = || {
            ctx.users
                .get(user_id.as_str())
                .and_then(|u| u.gold_refs.get(&prompt.doc_id))
                .ok_or_else(|| Error::Oracle(format!("no gold reference for {user_id} on {}", prompt.doc_id)))
        };
        let n = self.length;

        let tokens: Vec<String> = match self.kind {
            OracleKind::Parrot => return gold_ref().cloned(),
            OracleKind::Constant => words(&doc.body).into_iter().take(n).collect(),
            OracleKind::Interpolate { lambda } => {
                let from_ref = (lambda * n as f64).round() as usize;
                let mut mixed: Vec<String> = words(gold_ref()?).into_iter().take(from_ref).collect();
                mixed.extend(words(&doc.body).into_iter().take(n - from_ref.min(n)));
                mixed.shuffle(&mut rng_for(self.seed, &["interpolate", &prompt.doc_id, user_id]));
                mixed
            }
            OracleKind::ProfileSensitive => {
                let template = ctx.templates.get(prompt.style);
                let slots = template
                    .parse_rendered(&prompt.text)
                    .ok_or_else(|| Error::Oracle(format!("{} does not follow its template", prompt.prompt_id)))?;
                let profile: BTreeSet<String> = profile_sections(&slots, slot, prompt.style.is_contrastive())
                    .flat_map(words)
                    .collect();
                let article = words(slots.get("article").map(String::as_str).unwrap_or_default());
                let hits: Vec<String> = article
                    .iter()
                    .filter(|t| profile.contains(*t))
                    .take(n)
                    .cloned()
                    .collect();
                if hits.is_empty() {
                    article.into_iter().take(FALLBACK_TOKENS).collect()
                } else {
                    hits
                }
            }
        };
        if tokens.is_empty() {
            return Err(Error::Oracle(format!(
                "{} produced an empty summary for {user_id}",
                self.model_id()
            )));
        }
        Ok(tokens.join(" "))
    }

    /// Raw completion in the output format the prompt asks for.
    pub fn complete(&self, prompt: &RenderedPrompt, ctx: &OracleContext<'_>) -> Result<String> {
        if prompt.style.is_contrastive() {
            let first = self.summarize(prompt, 0, ctx)?;
            let second = self.summarize(prompt, 1, ctx)?;
            Ok(format!("HEADLINE 1: {first}\nHEADLINE 2: {second}\n"))
        } else {
            Ok(format!("HEADLINE: {}\n", self.summarize(prompt, 0, ctx)?))
        }
    }
}

/// Slot values carrying the profile of user `slot` (0-based).
fn profile_sections(slots: &BTreeMap<String, String>, slot: usize, contrastive: bool) -> impl Iterator<Item = &str> {
    let n = slot + 1;
    let history = format!("history_{n}");
    let headline_suffix = if contrastive {
        format!("_headline_{n}")
    } else {
        "_headline".to_owned()
    };
    slots
        .iter()
        .filter(move |(k, _)| **k == history || (k.starts_with("example_") && k.ends_with(&headline_suffix)))
        .map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_eval_instances, sample_contrastive_pairs, Document};
    use crate::promptforge::{render_prompt, ForgeConfig, PromptStyle, PromptSubject};

    fn setup() -> (Corpus, Vec<Arc<UserProfile>>) {
        let docs = [
            (
                "N1",
                "rain storm coast",
                "storm rain hits the coast hard today while markets rally",
            ),
            ("N2", "markets rally", "markets rally on bank news and strong earnings"),
            (
                "N9",
                "query",
                "the storm moved across markets and coast towns with rain and earnings",
            ),
        ]
        .map(|(id, t, b)| Document {
            doc_id: id.into(),
            title: t.into(),
            body: b.into(),
            category: None,
        });
        let corpus = Corpus::from_documents(docs).unwrap();
        let users = vec![
            Arc::new(UserProfile {
                user_id: "a".into(),
                click_history: vec!["N1".into()],
                gold_refs: [("N9", "storm hits coast towns"), ("N2", "rally")]
                    .map(|(d, t)| (d.to_owned(), t.to_owned()))
                    .into(),
            }),
            Arc::new(UserProfile {
                user_id: "b".into(),
                click_history: vec!["N2".into()],
                gold_refs: [("N9", "markets and earnings"), ("N1", "rain")]
                    .map(|(d, t)| (d.to_owned(), t.to_owned()))
                    .into(),
            }),
        ];
        (corpus, users)
    }

    fn prompt(corpus: &Corpus, user: &UserProfile, style: PromptStyle) -> RenderedPrompt {
        let query = corpus.get("N9").unwrap();
        render_prompt(
            style,
            PromptSubject::Single { user, query },
            corpus,
            &ForgeConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn parses_oracle_names() {
        assert_eq!("parrot".parse::<OracleKind>().unwrap(), OracleKind::Parrot);
        assert_eq!(
            "interpolate:0.25".parse::<OracleKind>().unwrap(),
            OracleKind::Interpolate { lambda: 0.25 }
        );
        assert!("interpolate:2".parse::<OracleKind>().is_err());
        assert!("echo".parse::<OracleKind>().is_err());
        assert_eq!(
            OracleModel::new(OracleKind::Interpolate { lambda: 0.5 }, 0).model_id(),
            "oracle-interpolate-0.5"
        );
    }

    #[test]
    fn parrot_and_constant() {
        let (corpus, users) = setup();
        let templates = TemplateSet::default();
        let ctx = OracleContext::new(&corpus, &users, &templates);
        let parrot = OracleModel::new(OracleKind::Parrot, 0);
        let p = prompt(&corpus, &users[0], PromptStyle::ZeroShot);
        assert_eq!(parrot.summarize(&p, 0, &ctx).unwrap(), "storm hits coast towns");
        assert_eq!(parrot.complete(&p, &ctx).unwrap(), "HEADLINE: storm hits coast towns\n");

        let constant = OracleModel::new(OracleKind::Constant, 0);
        let q = prompt(&corpus, &users[1], PromptStyle::ZeroShot);
        assert_eq!(
            constant.summarize(&p, 0, &ctx).unwrap(),
            constant.summarize(&q, 0, &ctx).unwrap()
        );
    }

    #[test]
    fn parrot_needs_a_reference() {
        let (corpus, mut users) = setup();
        let mut stranger = (*users[0]).clone();
        stranger.user_id = "c".into();
        stranger.gold_refs.clear();
        users.push(Arc::new(stranger.clone()));
        let templates = TemplateSet::default();
        let ctx = OracleContext::new(&corpus, &users, &templates);
        let p = prompt(&corpus, &stranger, PromptStyle::ZeroShot);
        assert!(OracleModel::new(OracleKind::Parrot, 0).summarize(&p, 0, &ctx).is_err());
    }

    #[test]
    fn interpolate_endpoints() {
        let (corpus, users) = setup();
        let templates = TemplateSet::default();
        let ctx = OracleContext::new(&corpus, &users, &templates);
        let p = prompt(&corpus, &users[0], PromptStyle::ZeroShot);
        let full = OracleModel::new(OracleKind::Interpolate { lambda: 1.0 }, 3)
            .summarize(&p, 0, &ctx)
            .unwrap();
        let mut got: Vec<&str> = full.split(' ').collect();
        got.sort_unstable();
        assert_eq!(got, ["coast", "hits", "storm", "towns"]);
        let none = OracleModel::new(OracleKind::Interpolate { lambda: 0.0 }, 3)
            .summarize(&p, 0, &ctx)
            .unwrap();
        let constant = OracleModel::new(OracleKind::Constant, 0)
            .summarize(&p, 0, &ctx)
            .unwrap();
        let mut a: Vec<&str> = none.split(' ').collect();
        let mut b: Vec<&str> = constant.split(' ').collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn profile_sensitive_follows_the_prompt() {
        let (corpus, users) = setup();
        let templates = TemplateSet::default();
        let ctx = OracleContext::new(&corpus, &users, &templates);
        let oracle = OracleModel::new(OracleKind::ProfileSensitive, 0);
        let a = oracle
            .summarize(&prompt(&corpus, &users[0], PromptStyle::ZeroShot), 0, &ctx)
            .unwrap();
        let b = oracle
            .summarize(&prompt(&corpus, &users[1], PromptStyle::ZeroShot), 0, &ctx)
            .unwrap();
        assert_eq!(a, "storm coast rain");
        assert_eq!(b, "markets");

        let instances = build_eval_instances(&corpus, &users).value;
        let samples = sample_contrastive_pairs(&instances, &corpus, 0, 3).value;
        let sample = samples.iter().find(|s| s.query_doc.doc_id == "N9").unwrap();
        let cfg = ForgeConfig::default();
        let c = render_prompt(PromptStyle::CZeroShot, PromptSubject::Pair(sample), &corpus, &cfg).unwrap();
        assert_eq!(
            oracle.complete(&c, &ctx).unwrap(),
            "HEADLINE 1: storm coast rain\nHEADLINE 2: markets\n"
        );
    }
}
