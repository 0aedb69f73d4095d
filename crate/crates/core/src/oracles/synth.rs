use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, EvalInstance, InstanceUser, UserProfile};
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;

const TOPICS: [&str; 8] = [
    "politics", "sports", "science", "health", "travel", "finance", "music", "food",
];
const COMMON: [&str; 12] = [
    "the", "a", "of", "new", "report", "says", "after", "week", "city", "people", "year", "plan",
];

/// Shape of a synthetic PENS-like corpus.
///
/// Users are split into panels; every panel member writes a reference for every
/// document assigned to the panel, so each document has `panel_size` references
/// and any two panel members share the panel's other documents as examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub panels: usize,
    pub panel_size: usize,
    pub docs_per_panel: usize,
    /// Extra documents that only appear in click histories.
    pub background_docs: usize,
    pub clicks_per_user: usize,
    pub body_tokens: usize,
    pub words_per_topic: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            panels: 3,
            panel_size: 4,
            docs_per_panel: 5,
            background_docs: 40,
            clicks_per_user: 10,
            body_tokens: 120,
            words_per_topic: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub users: Vec<Arc<UserProfile>>,
}

fn topic_word(topic: usize, j: usize) -> String {
    format!("{}{j}", TOPICS[topic])
}

/// A user's voice word; it never occurs in documents, so references stay distinct.
fn voice_word(user: usize) -> String {
    format!("voice{user}")
}

pub fn synthetic_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topic_count = TOPICS.len();

    let make_doc = |id: String, rng: &mut ChaCha8Rng| {
        let mut topics: Vec<usize> = (0..topic_count).collect();
        topics.shuffle(rng);
        let (primary, secondary) = (topics[0], [topics[1], topics[2]]);
        let word = |t: usize, rng: &mut ChaCha8Rng| topic_word(t, rng.random_range(0..spec.words_per_topic));
        let body: Vec<String> = (0..spec.body_tokens)
            .map(|_| match rng.random_range(0..10) {
                0..=3 => word(primary, rng),
                4 | 5 => word(secondary[0], rng),
                6 | 7 => word(secondary[1], rng),
                _ => COMMON.choose(rng).expect("non-empty").to_string(),
            })
            .collect();
        let mut title: Vec<String> = (0..4).map(|_| word(primary, rng)).collect();
        title.push(COMMON.choose(rng).expect("non-empty").to_string());
        (
            Document {
                doc_id: id,
                title: title.join(" "),
                body: body.join(" "),
                category: Some(TOPICS[primary].to_owned()),
            },
            primary,
        )
    };

    let mut docs = Vec::new();
    let mut primary_of = BTreeMap::new();
    for i in 0..spec.panels * spec.docs_per_panel + spec.background_docs {
        let (doc, primary) = make_doc(format!("N{:04}", i + 1), &mut rng);
        primary_of.insert(doc.doc_id.clone(), primary);
        docs.push(doc);
    }

    let mut users = Vec::new();
    for panel in 0..spec.panels {
        let block: Vec<&Document> = docs[panel * spec.docs_per_panel..(panel + 1) * spec.docs_per_panel]
            .iter()
            .collect();
        let mut pairs: Vec<(usize, usize)> = (0..topic_count)
            .flat_map(|a| (a + 1..topic_count).map(move |b| (a, b)))
            .collect();
        pairs.shuffle(&mut rng);
        for member in 0..spec.panel_size {
            let index = panel * spec.panel_size + member;
            let (ta, tb) = pairs[member % pairs.len()];
            let interests = [ta, tb];

            let mut liked: Vec<&Document> = docs
                .iter()
                .filter(|d| interests.contains(&primary_of[&d.doc_id]))
                .collect();
            liked.shuffle(&mut rng);
            let click_history = liked
                .into_iter()
                .take(spec.clicks_per_user)
                .map(|d| d.doc_id.clone())
                .collect();

            let gold_refs = block
                .iter()
                .map(|d| {
                    let mut words: Vec<&str> = Vec::new();
                    for w in d.body.split(' ') {
                        let on_topic = interests.iter().any(|&t| {
                            w.strip_prefix(TOPICS[t])
                                .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
                        });
                        if on_topic && !words.contains(&w) {
                            words.push(w);
                        }
                        if words.len() == 8 {
                            break;
                        }
                    }
                    if words.len() < 3 {
                        words.extend(d.title.split(' ').take(3));
                    }
                    let mut text = words.join(" ");
                    text.push(' ');
                    text.push_str(&voice_word(index));
                    (d.doc_id.clone(), text)
                })
                .collect();

            users.push(Arc::new(UserProfile {
                user_id: format!("NT{}", index + 1),
                click_history,
                gold_refs,
            }));
        }
    }
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    SyntheticCorpus {
        corpus: Corpus::from_documents(docs).expect("generated ids are unique"),
        users,
    }
}

impl SyntheticCorpus {
    /// Write `news.tsv` and `users.tsv` into `dir`.
    pub fn write_tsv(&self, dir: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        let news = dir.join("news.tsv");
        let users = dir.join("users.tsv");
        let mut out = String::from("doc_id\ttitle\tbody\tcategory\n");
        for d in self.corpus.iter() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                d.doc_id,
                d.title,
                d.body,
                d.category.as_deref().unwrap_or_default()
            ));
        }
        write_file(&news, &out)?;
        let mut out = String::from("userid\tclicknewsID\tposnewID\trewrite_titles\n");
        for u in &self.users {
            let ids: Vec<&str> = u.gold_refs.keys().map(String::as_str).collect();
            let titles: Vec<&str> = u.gold_refs.values().map(String::as_str).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                u.user_id,
                u.click_history.join(","),
                ids.join(","),
                titles.join("#TAB#")
            ));
        }
        write_file(&users, &out)?;
        Ok((news, users))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Bounds for small random metric fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub max_users: usize,
    pub max_docs: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            max_users: 5,
            max_docs: 6,
            vocab: 12,
            max_len: 6,
        }
    }
}

/// Random instances with generated summaries under (`model_id`, `style`).
/// Every text has at least one token.
pub fn random_fixture(seed: u64, spec: &FixtureSpec, model_id: &str, style: PromptStyle) -> Vec<EvalInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..spec.vocab).map(|i| format!("v{i}")).collect();
    let text = |rng: &mut ChaCha8Rng, max: usize| {
        let len = rng.random_range(1..=max);
        (0..len)
            .map(|_| vocab.choose(rng).expect("non-empty vocab").as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let docs = rng.random_range(1..=spec.max_docs);
    (0..docs)
        .map(|d| {
            let doc_id = format!("D{d}");
            let n = rng.random_range(2..=spec.max_users.max(2));
            let users = (0..n)
                .map(|u| {
                    let gold = text(&mut rng, spec.max_len);
                    InstanceUser {
                        profile: Arc::new(UserProfile {
                            user_id: format!("U{u}"),
                            click_history: vec![],
                            gold_refs: [(doc_id.clone(), gold.clone())].into(),
                        }),
                        gold_ref: gold,
                    }
                })
                .collect();
            let doc = Document {
                doc_id: doc_id.clone(),
                title: text(&mut rng, 3),
                body: text(&mut rng, 3 * spec.max_len),
                category: None,
            };
            let mut instance = EvalInstance::new(doc, users);
            for u in 0..n {
                let summary = text(&mut rng, spec.max_len);
                instance.insert_generated(model_id, style, format!("U{u}"), summary);
            }
            instance
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_eval_instances, sample_contrastive_pairs};

    #[test]
    fn synthetic_corpus_shape() {
        let spec = SyntheticSpec::default();
        let synth = synthetic_corpus(&spec);
        assert_eq!(synth.users.len(), 12);
        assert_eq!(synth.corpus.len(), 55);
        let instances = build_eval_instances(&synth.corpus, &synth.users);
        assert_eq!(instances.value.len(), 15);
        assert!(instances.value.iter().all(|i| i.users.len() == 4));
        for inst in &instances.value {
            let refs: Vec<&str> = inst.users.iter().map(|u| u.gold_ref.as_str()).collect();
            for (i, a) in refs.iter().enumerate() {
                assert!(refs[i + 1..].iter().all(|b| a != b));
            }
        }
        let samples = sample_contrastive_pairs(&instances.value, &synth.corpus, 1, 3);
        assert!(samples.diagnostics.is_empty());
        assert!(samples.value.iter().all(|s| s.shared_examples.len() == 4));
    }

    #[test]
    fn synthetic_corpus_is_seeded() {
        let a = synthetic_corpus(&SyntheticSpec::default());
        let b = synthetic_corpus(&SyntheticSpec::default());
        assert_eq!(a.users, b.users);
        assert!(a.corpus.iter().eq(b.corpus.iter()));
    }

    #[test]
    fn tsv_round_trip() {
        let synth = synthetic_corpus(&SyntheticSpec::default());
        let dir = tempfile::tempdir().unwrap();
        let (news, users) = synth.write_tsv(dir.path()).unwrap();
        let corpus = crate::corpus::parse_news_corpus(&news, crate::corpus::InputFormat::Tsv).unwrap();
        assert!(corpus.diagnostics.is_empty());
        let parsed = crate::corpus::parse_user_table(&users, crate::corpus::InputFormat::Tsv, &corpus.value).unwrap();
        assert!(parsed.diagnostics.is_empty());
        let originals: Vec<UserProfile> = synth.users.iter().map(|u| (**u).clone()).collect();
        assert_eq!(parsed.value, originals);
    }

    #[test]
    fn fixtures_respect_bounds() {
        let spec = FixtureSpec::default();
        for seed in 0..20 {
            let f = random_fixture(seed, &spec, "m", PromptStyle::ZeroShot);
            assert!((1..=6).contains(&f.len()));
            assert!(f.iter().all(|i| (2..=5).contains(&i.users.len())));
        }
    }
}
