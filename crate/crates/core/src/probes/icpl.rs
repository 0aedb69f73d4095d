use serde::{Deserialize, Serialize};

use crate::corpus::EvalInstance;
use crate::egises::MetricConfig;
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;
use crate::textdist::WordDistribution;

/// Reference and generated divergence for one user pair on one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub doc_id: String,
    pub user_a: String,
    pub user_b: String,
    pub reference: f64,
    pub generated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcplVerdict {
    pub model_id: String,
    pub prompt_style: PromptStyle,
    pub tau_u: f64,
    pub tau_s: f64,
    pub pairs: usize,
    pub weak: bool,
    pub strong: bool,
    /// Pairs breaking the weak biconditional.
    pub violating: Vec<PairDistance>,
    /// Insensitivity-to-subjectivity, the negative counterpart of the two ICPL flags.
    pub weakly_insensitive: bool,
    pub strongly_insensitive: bool,
}

/// Divergences for every user pair of every unit (each pair once, a < b in unit order).
pub fn pair_distances(
    units: &[EvalInstance],
    model_id: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<Vec<PairDistance>> {
    let mut out = Vec::new();
    for unit in units {
        let mut refs = Vec::new();
        let mut gens = Vec::new();
        for user in &unit.users {
            let generated =
                unit.generated_for(model_id, style, user.user_id())
                    .ok_or_else(|| Error::MissingGeneration {
                        model_id: model_id.to_owned(),
                        style: style.to_string(),
                        user_id: user.user_id().to_owned(),
                        doc_id: unit.doc_id().to_owned(),
                    })?;
            refs.push(WordDistribution::from_text(&user.gold_ref, &cfg.tokenizer));
            gens.push(WordDistribution::from_text(generated, &cfg.tokenizer));
        }
        for a in 0..unit.users.len() {
            for b in a + 1..unit.users.len() {
                out.push(PairDistance {
                    doc_id: unit.doc_id().to_owned(),
                    user_a: unit.users[a].user_id().to_owned(),
                    user_b: unit.users[b].user_id().to_owned(),
                    reference: cfg.text_divergence(&refs[a], &refs[b])?,
                    generated: cfg.text_divergence(&gens[a], &gens[b])?,
                });
            }
        }
    }
    Ok(out)
}

/// Median reference-pair divergence; the default for both thresholds.
pub fn default_threshold(pairs: &[PairDistance]) -> Option<f64> {
    let mut values: Vec<f64> = pairs.iter().map(|p| p.reference).collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Apply the weak and strong conditions to every pair.
///
/// Weak: `ref ≤ τ_U ⇔ gen ≤ τ_S` for all pairs. Strong additionally requires
/// `ref > τ_U ⇔ gen > τ_S`, the contrapositive form of the same biconditional,
/// so the two flags always agree; both are evaluated as written.
pub fn classify_icpl(
    model_id: &str,
    style: PromptStyle,
    pairs: &[PairDistance],
    tau_u: f64,
    tau_s: f64,
) -> IcplVerdict {
    let near_ref = |p: &PairDistance| p.reference <= tau_u;
    let near_gen = |p: &PairDistance| p.generated <= tau_s;
    let far_ref = |p: &PairDistance| p.reference > tau_u;
    let far_gen = |p: &PairDistance| p.generated > tau_s;

    let violating: Vec<PairDistance> = pairs.iter().filter(|p| near_ref(p) != near_gen(p)).cloned().collect();
    let weak = violating.is_empty();
    let strong = weak && pairs.iter().all(|p| far_ref(p) == far_gen(p));
    let weakly_insensitive = pairs.iter().all(|p| near_ref(p) == far_gen(p));
    let strongly_insensitive = weakly_insensitive && pairs.iter().all(|p| far_ref(p) == near_gen(p));

    IcplVerdict {
        model_id: model_id.to_owned(),
        prompt_style: style,
        tau_u,
        tau_s,
        pairs: pairs.len(),
        weak,
        strong,
        violating,
        weakly_insensitive,
        strongly_insensitive,
    }
}
