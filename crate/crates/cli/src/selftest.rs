use serde::Serialize;

use icpl_core::corpus::{Document, EvalInstance, InstanceUser, UserProfile};
use icpl_core::egises::{degress_system, degress_system_detailed, MetricConfig};
use icpl_core::oracles::{brute_force_degress, random_fixture, FixtureSpec};
use icpl_core::promptforge::PromptStyle;
use icpl_core::textdist::{jsd, WordDistribution};

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const MODEL: &str = "selftest";
const STYLE: PromptStyle = PromptStyle::ZeroShot;

fn with_generations(
    mut instances: Vec<EvalInstance>,
    make: impl Fn(&EvalInstance, &InstanceUser) -> String,
) -> Vec<EvalInstance> {
    for inst in &mut instances {
        let texts: Vec<(String, String)> = inst
            .users
            .iter()
            .map(|u| (u.user_id().to_owned(), make(inst, u)))
            .collect();
        for (user, text) in texts {
            inst.insert_generated(MODEL, STYLE, user, text);
        }
    }
    instances
}

fn equivalence() -> Check {
    let cfg = MetricConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let fixture = random_fixture(seed, &FixtureSpec::default(), MODEL, STYLE);
        let engine = match degress_system_detailed(&fixture, MODEL, STYLE, &cfg) {
            Ok(r) => r,
            Err(e) => return fail("oracle equivalence", format!("engine failed on seed {seed}: {e}")),
        };
        let brute = match brute_force_degress(&fixture, MODEL, STYLE, &cfg) {
            Ok(r) => r,
            Err(e) => return fail("oracle equivalence", format!("brute force failed on seed {seed}: {e}")),
        };
        worst = worst.max((engine.0.degress - brute.degress).abs());
        for (a, b) in engine.1.iter().zip(&brute.per_user) {
            worst = worst.max((a.degress - b.2).abs());
        }
    }
    Check {
        name: "oracle equivalence",
        passed: worst <= 1e-12,
        detail: format!("max |engine - brute force| over 100 fixtures = {worst:e}"),
    }
}

fn fail(name: &'static str, detail: String) -> Check {
    Check {
        name,
        passed: false,
        detail,
    }
}

fn parrot() -> Check {
    let cfg = MetricConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let fixture = with_generations(
            random_fixture(seed, &FixtureSpec::default(), "unused", STYLE),
            |_, u| u.gold_ref.clone(),
        );
        match degress_system(&fixture, MODEL, STYLE, &cfg) {
            Ok(s) => worst = worst.max(s.egises.abs()),
            Err(e) => return fail("parrot identity", e.to_string()),
        }
    }
    Check {
        name: "parrot identity",
        passed: worst <= 1e-9,
        detail: format!("max EGISES over 50 fixtures = {worst:e}"),
    }
}

/// Four users with pairwise-distinct references and one shared generated summary.
pub fn constant_fixture() -> Vec<EvalInstance> {
    let refs = [
        "storm hits coast",
        "coast towns flooded",
        "rain record broken",
        "storm damage costs",
    ];
    let doc = Document {
        doc_id: "D1".into(),
        title: "Storm season".into(),
        body: "a storm hit the coast and flooded towns after record rain with heavy damage costs".into(),
        category: None,
    };
    let users = refs
        .iter()
        .enumerate()
        .map(|(i, r)| InstanceUser {
            profile: std::sync::Arc::new(UserProfile {
                user_id: format!("U{i}"),
                click_history: vec![],
                gold_refs: [("D1".to_owned(), (*r).to_owned())].into(),
            }),
            gold_ref: (*r).to_owned(),
        })
        .collect();
    with_generations(vec![EvalInstance::new(doc, users)], |_, _| "storm on the coast".into())
}

fn constant() -> Check {
    let cfg = MetricConfig::default();
    match degress_system_detailed(&constant_fixture(), MODEL, STYLE, &cfg) {
        Ok((system, per_user)) => {
            let lo = 0.25 - 1e-6;
            let hi = 0.25 + 10.0 * cfg.epsilon;
            let ok = per_user.iter().all(|s| (lo..=hi).contains(&s.degress));
            Check {
                name: "constant summary",
                passed: ok && (system.egises - 0.75).abs() <= 1e-6,
                detail: format!(
                    "per-user DEGRESS {:?}, EGISES {:.9}",
                    per_user.iter().map(|s| s.degress).collect::<Vec<_>>(),
                    system.egises
                ),
            }
        }
        Err(e) => fail("constant summary", e.to_string()),
    }
}

fn jsd_properties() -> Check {
    let a = WordDistribution::from_tokens(["a"]);
    let ab = WordDistribution::from_tokens(["a", "b"]);
    let c = WordDistribution::from_tokens(["c"]);
    let expected = 1.5 - 0.75 * 3f64.log2();
    let checks = (|| -> icpl_core::Result<Vec<(&str, bool)>> {
        Ok(vec![
            ("symmetry", jsd(&a, &ab)? == jsd(&ab, &a)?),
            ("identity", jsd(&ab, &ab)? == 0.0),
            ("disjoint", jsd(&a, &c)? == 1.0),
            ("hand case", (jsd(&a, &ab)? - expected).abs() <= 1e-6),
        ])
    })();
    match checks {
        Ok(list) => {
            let failed: Vec<&str> = list.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
            Check {
                name: "divergence properties",
                passed: failed.is_empty(),
                detail: if failed.is_empty() {
                    "symmetry, identity, disjoint support, hand-derived case".into()
                } else {
                    format!("failed: {}", failed.join(", "))
                },
            }
        }
        Err(e) => fail("divergence properties", e.to_string()),
    }
}

pub fn run() -> Vec<Check> {
    vec![jsd_properties(), parrot(), constant(), equivalence()]
}
