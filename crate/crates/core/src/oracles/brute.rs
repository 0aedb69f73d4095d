//! Literal re-evaluation of the DEGRESS formulas, written without reusing any of
//! the engine's distance, softmax or aggregation code. Only tokenization is shared.

use std::collections::HashMap;

use crate::corpus::EvalInstance;
use crate::egises::{MetricConfig, MetricDivergence};
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceScore {
    /// (doc_id, user_id, degress) in instance order.
    pub per_user: Vec<(String, String, f64)>,
    pub degress: f64,
    pub egises: f64,
}

fn unigram(text: &str, cfg: &MetricConfig) -> HashMap<String, f64> {
    let tokens = cfg.tokenizer.tokenize(text);
    let mut counts: HashMap<String, f64> = HashMap::new();
    for t in &tokens {
        *counts.entry(t.clone()).or_insert(0.0) += 1.0;
    }
    let n = tokens.len() as f64;
    for v in counts.values_mut() {
        *v /= n;
    }
    counts
}

fn kl_part(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

fn divergence(p: &HashMap<String, f64>, q: &HashMap<String, f64>, cfg: &MetricConfig) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut vocab: Vec<&String> = p.keys().chain(q.keys()).collect();
    vocab.sort();
    vocab.dedup();
    let mut total = 0.0;
    for w in vocab {
        let pw = p.get(w).copied().unwrap_or(0.0);
        let qw = q.get(w).copied().unwrap_or(0.0);
        let m = 0.5 * pw + 0.5 * qw;
        total += 0.5 * kl_part(pw, m) + 0.5 * kl_part(qw, m);
    }
    let js = (total / std::f64::consts::LN_2).clamp(0.0, 1.0);
    match cfg.divergence {
        MetricDivergence::Jsd => Ok(js),
        MetricDivergence::SqrtJsd => Ok(js.sqrt()),
        MetricDivergence::HumanRatings => Err(Error::InvalidConfig(
            "brute-force evaluator only covers text divergences".into(),
        )),
    }
}

/// Evaluate every user of every instance, then average per document and overall.
pub fn brute_force_degress(
    instances: &[EvalInstance],
    model_id: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<BruteForceScore> {
    let mut per_user = Vec::new();
    let mut doc_sums: Vec<(String, f64, f64)> = Vec::new();

    for inst in instances {
        let n = inst.users.len();
        if n < 2 {
            return Err(Error::TooFewUsers {
                doc_id: inst.doc_id().to_owned(),
                found: n,
            });
        }
        let d = unigram(&format!("{}\n{}", inst.query_doc.title, inst.query_doc.body), cfg);
        let mut u = Vec::new();
        let mut s = Vec::new();
        for user in &inst.users {
            u.push(unigram(&user.gold_ref, cfg));
            let text = inst
                .generated_for(model_id, style, user.user_id())
                .ok_or_else(|| Error::MissingGeneration {
                    model_id: model_id.to_owned(),
                    style: style.to_string(),
                    user_id: user.user_id().to_owned(),
                    doc_id: inst.doc_id().to_owned(),
                })?;
            let dist = unigram(text, cfg);
            if dist.is_empty() {
                return Err(Error::EmptySummary {
                    doc_id: inst.doc_id().to_owned(),
                    user_id: user.user_id().to_owned(),
                });
            }
            s.push(dist);
        }

        for j in 0..n {
            let ks: Vec<usize> = (0..n).filter(|&k| k != j || cfg.include_self_term).collect();
            let ref_doc = divergence(&u[j], &d, cfg)?.max(cfg.doc_distance_floor);
            let gen_doc = divergence(&s[j], &d, cfg)?.max(cfg.doc_distance_floor);

            let mut ref_exp_sum = 0.0;
            let mut gen_exp_sum = 0.0;
            for &l in &ks {
                ref_exp_sum += (divergence(&u[j], &u[l], cfg)? / ref_doc).exp();
                gen_exp_sum += (divergence(&s[j], &s[l], cfg)? / gen_doc).exp();
            }

            let mut ratio_sum = 0.0;
            for &k in &ks {
                let ref_pair = divergence(&u[j], &u[k], cfg)?;
                let gen_pair = divergence(&s[j], &s[k], cfg)?;
                let x = (ref_pair / ref_doc).exp() / ref_exp_sum * ref_pair;
                let y = (gen_pair / gen_doc).exp() / gen_exp_sum * gen_pair;
                let lo = if x < y { x } else { y };
                let hi = if x < y { y } else { x };
                ratio_sum += (lo + cfg.epsilon) / (hi + cfg.epsilon);
            }
            let score = if ks.is_empty() {
                1.0
            } else {
                (ratio_sum / ks.len() as f64).clamp(0.0, 1.0)
            };
            per_user.push((inst.doc_id().to_owned(), inst.users[j].user_id().to_owned(), score));

            match doc_sums.iter_mut().find(|(id, _, _)| id == inst.doc_id()) {
                Some(entry) => {
                    entry.1 += score;
                    entry.2 += 1.0;
                }
                None => doc_sums.push((inst.doc_id().to_owned(), score, 1.0)),
            }
        }
    }

    if doc_sums.is_empty() {
        return Err(Error::NoScoreableInstances {
            model_id: model_id.to_owned(),
            style: style.to_string(),
        });
    }
    doc_sums.sort_by(|a, b| a.0.cmp(&b.0));
    let mut total = 0.0;
    for (_, sum, count) in &doc_sums {
        total += sum / count;
    }
    let degress = total / doc_sums.len() as f64;
    Ok(BruteForceScore {
        per_user,
        degress,
        egises: 1.0 - degress,
    })
}
