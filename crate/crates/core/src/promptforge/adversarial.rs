use std::sync::Arc;

use rand::seq::IndexedRandom;

use crate::corpus::{ContrastiveSample, PerturbationTag, UserProfile};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Replace user 2's profile in a contrastive sample with someone else's.
///
/// User 2's click history is swapped for the history of a uniformly drawn other
/// user, and each of user 2's example headlines is replaced by the headline a random
/// user wrote for a random article. User 2's reference for the query document is
/// untouched, so scoring still runs against the true references.
pub fn adversarial_perturb(
    sample: &ContrastiveSample,
    pool: &[Arc<UserProfile>],
    rng_seed: u64,
) -> Result<ContrastiveSample> {
    if sample.perturbation_tag != PerturbationTag::Genuine {
        return Err(Error::InvalidConfig("sample is already perturbed".into()));
    }
    let target = &sample.user2;
    let donors: Vec<&Arc<UserProfile>> = pool.iter().filter(|u| u.user_id != target.user_id).collect();
    let query = sample.query_doc.doc_id.as_str();
    let mut rng = rng_for(
        rng_seed,
        &["adversarial", query, &sample.user1.user_id, &target.user_id],
    );

    let donor = donors
        .choose(&mut rng)
        .ok_or_else(|| Error::PoolTooSmall(format!("no user other than {} to draw from", target.user_id)))?;

    let mut perturbed = sample.clone();
    perturbed.user2 = Arc::new(UserProfile {
        user_id: target.user_id.clone(),
        click_history: donor.click_history.clone(),
        gold_refs: target.gold_refs.clone(),
    });

    if !sample.shared_examples.is_empty() {
        let writers: Vec<&Arc<UserProfile>> = pool.iter().filter(|u| u.gold_refs.keys().any(|d| d != query)).collect();
        if writers.is_empty() {
            return Err(Error::PoolTooSmall(
                "no headlines to draw example replacements from".into(),
            ));
        }
        for example in &mut perturbed.shared_examples {
            let writer = writers.choose(&mut rng).expect("non-empty");
            let headlines: Vec<&String> = writer
                .gold_refs
                .iter()
                .filter(|(d, _)| d.as_str() != query)
                .map(|(_, h)| h)
                .collect();
            example.ref_user2 = (*headlines.choose(&mut rng).expect("non-empty")).clone();
        }
    }
    perturbed.perturbation_tag = PerturbationTag::Adversarial;
    Ok(perturbed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Document, SharedExample};
    use crate::promptforge::{render_prompt, ForgeConfig, PromptStyle, PromptSubject};

    fn profile(id: &str, clicks: &[&str], refs: &[(&str, &str)]) -> Arc<UserProfile> {
        Arc::new(UserProfile {
            user_id: id.into(),
            click_history: clicks.iter().map(|s| s.to_string()).collect(),
            gold_refs: refs.iter().map(|(d, h)| (d.to_string(), h.to_string())).collect(),
        })
    }

    fn doc(id: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: format!("title of {id}"),
            body: format!("body of {id}"),
            category: None,
        }
    }

    fn fixture() -> (Corpus, Vec<Arc<UserProfile>>, ContrastiveSample) {
        let corpus = Corpus::from_documents(["N1", "N2", "N3", "N4", "N9"].map(doc)).unwrap();
        let a = profile("a", &["N1"], &[("N9", "a9"), ("N3", "a3"), ("N4", "a4")]);
        let b = profile("b", &["N2"], &[("N9", "b9"), ("N3", "b3"), ("N4", "b4")]);
        let c = profile("c", &["N3", "N4"], &[("N1", "c1"), ("N2", "c2")]);
        let sample = ContrastiveSample {
            query_doc: corpus.get("N9").unwrap().clone(),
            user1: a.clone(),
            user2: b.clone(),
            shared_examples: ["N3", "N4"]
                .iter()
                .map(|d| SharedExample {
                    doc: corpus.get(d).unwrap().clone(),
                    ref_user1: a.gold_refs[*d].clone(),
                    ref_user2: b.gold_refs[*d].clone(),
                })
                .collect(),
            perturbation_tag: PerturbationTag::Genuine,
        };
        (corpus, vec![a, b, c], sample)
    }

    #[test]
    fn single_donor_is_always_chosen() {
        let (_, pool, mut sample) = fixture();
        sample.shared_examples.clear();
        let only_c = vec![pool[2].clone(), pool[1].clone()];
        for seed in 0..10 {
            let p = adversarial_perturb(&sample, &only_c, seed).unwrap();
            assert_eq!(p.user2.click_history, vec!["N3", "N4"]);
            assert_eq!(p.user1, sample.user1);
            assert_eq!(p.perturbation_tag, PerturbationTag::Adversarial);
        }
    }

    #[test]
    fn seeded_and_query_ref_untouched() {
        let (_, pool, sample) = fixture();
        let first = adversarial_perturb(&sample, &pool, 5).unwrap();
        assert_eq!(first, adversarial_perturb(&sample, &pool, 5).unwrap());
        assert_eq!(first.user2.gold_refs["N9"], "b9");
        for e in &first.shared_examples {
            assert_ne!(e.ref_user2, "b9");
            assert_ne!(e.ref_user2, "a9");
        }
        assert!(adversarial_perturb(&first, &pool, 5).is_err());
    }

    #[test]
    fn pool_too_small() {
        let (_, pool, sample) = fixture();
        let err = adversarial_perturb(&sample, &pool[1..2], 0);
        assert!(matches!(err, Err(Error::PoolTooSmall(_))));
    }

    #[test]
    fn only_user_two_sections_change() {
        let (corpus, pool, sample) = fixture();
        let cfg = ForgeConfig::default();
        let template = cfg.templates.get(PromptStyle::CTwoShotHist);
        let genuine = render_prompt(PromptStyle::CTwoShotHist, PromptSubject::Pair(&sample), &corpus, &cfg).unwrap();
        let swapped = adversarial_perturb(&sample, &pool, 3).unwrap();
        let adv = render_prompt(PromptStyle::CTwoShotHist, PromptSubject::Pair(&swapped), &corpus, &cfg).unwrap();
        let g = template.parse_rendered(&genuine.text).unwrap();
        let a = template.parse_rendered(&adv.text).unwrap();
        for (slot, value) in &g {
            let user2_slot = slot == "history_2" || slot.ends_with("_headline_2");
            if !user2_slot {
                assert_eq!(value, &a[slot], "{slot} changed");
            }
        }
        assert_ne!(g["history_2"], a["history_2"]);
        assert!(adv.prompt_id.ends_with("#adv"));
    }
}
