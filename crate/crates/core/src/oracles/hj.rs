use std::collections::BTreeMap;

use crate::corpus::EvalInstance;
use crate::egises::{rating_to_distance, HjRating, MetricConfig, RatingSide};
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;
use crate::textdist::{jsd, WordDistribution};

/// Rating whose `(6 - r) / 5` distance is closest to `d`.
pub fn quantize_distance(d: f64) -> u8 {
    (6.0 - 5.0 * d).round().clamp(1.0, 6.0) as u8
}

/// Ratings synthesized from a fixture, and the DEGRESS interval reachable when
/// every summary-pair distance may sit anywhere between its JSD and its rating.
#[derive(Debug, Clone)]
pub struct QuantizedRatings {
    pub ratings: Vec<HjRating>,
    pub degress_low: f64,
    pub degress_high: f64,
}

impl QuantizedRatings {
    pub fn width(&self) -> f64 {
        (self.degress_high - self.degress_low).max(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Iv(f64, f64);

impl Iv {
    fn around(a: f64, b: f64) -> Self {
        Iv(a.min(b), a.max(b))
    }
}

fn deviation_bounds(pair: &[Vec<Iv>], doc: f64, j: usize, ks: &[usize], floor: f64) -> Vec<Iv> {
    let d = doc.max(floor);
    let shift = ks.iter().map(|&l| pair[j][l].1 / d).fold(f64::NEG_INFINITY, f64::max);
    let e = |x: f64| (x / d - shift).exp();
    let lo_sum: f64 = ks.iter().map(|&l| e(pair[j][l].0)).sum();
    let hi_sum: f64 = ks.iter().map(|&l| e(pair[j][l].1)).sum();
    ks.iter()
        .map(|&k| {
            let Iv(a, b) = pair[j][k];
            // the k term sits in both numerator and denominator; bound the others apart
            let lo = e(a) / (hi_sum - e(b) + e(a)) * a;
            let hi = e(b) / (lo_sum - e(a) + e(b)) * b;
            Iv(lo, hi)
        })
        .collect()
}

fn ratio_bounds(x: Iv, y: Iv, eps: f64) -> Iv {
    let f = |a: f64, b: f64| (a.min(b) + eps) / (a.max(b) + eps);
    let lo = f(x.0, y.1).min(f(x.1, y.0));
    let hi = if x.0 <= y.1 && y.0 <= x.1 {
        1.0
    } else if x.1 < y.0 {
        f(x.1, y.0)
    } else {
        f(y.1, x.0)
    };
    Iv(lo, hi)
}

/// Quantize every reference and generated pair of `instances` into a rating
/// and bound the resulting DEGRESS by interval arithmetic.
pub fn quantized_ratings(
    instances: &[EvalInstance],
    model: &str,
    style: PromptStyle,
    cfg: &MetricConfig,
) -> Result<QuantizedRatings> {
    let dist = |t: &str| WordDistribution::from_text(t, &cfg.tokenizer);
    let mut ratings = Vec::new();
    let mut per_doc: BTreeMap<&str, (Iv, usize)> = BTreeMap::new();
    for inst in instances {
        let n = inst.users.len();
        let doc = dist(&inst.query_doc.full_text());
        let refs: Vec<WordDistribution> = inst.users.iter().map(|u| dist(&u.gold_ref)).collect();
        let gens = inst
            .users
            .iter()
            .map(|u| {
                inst.generated_for(model, style, u.user_id())
                    .map(dist)
                    .ok_or_else(|| Error::MissingGeneration {
                        model_id: model.to_owned(),
                        style: style.to_string(),
                        doc_id: inst.doc_id().to_owned(),
                        user_id: u.user_id().to_owned(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut boxes = [vec![vec![Iv(0.0, 0.0); n]; n], vec![vec![Iv(0.0, 0.0); n]; n]];
        for (side, texts, rated) in [(0, &refs, RatingSide::Reference), (1, &gens, RatingSide::Generated)] {
            for a in 0..n {
                for b in a + 1..n {
                    let exact = jsd(&texts[a], &texts[b])?;
                    let r = quantize_distance(exact);
                    boxes[side][a][b] = Iv::around(exact, rating_to_distance(r));
                    boxes[side][b][a] = boxes[side][a][b];
                    ratings.push(HjRating {
                        doc_id: inst.doc_id().to_owned(),
                        side: rated,
                        a_id: inst.users[a].user_id().to_owned(),
                        b_id: inst.users[b].user_id().to_owned(),
                        rating: i64::from(r),
                        model_id: None,
                        prompt_style: None,
                    });
                }
            }
        }
        let mut sum = Iv(0.0, 0.0);
        for j in 0..n {
            let ks: Vec<usize> = (0..n).filter(|&k| cfg.include_self_term || k != j).collect();
            if ks.is_empty() {
                sum = Iv(sum.0 + 1.0, sum.1 + 1.0);
                continue;
            }
            let x = deviation_bounds(&boxes[0], jsd(&refs[j], &doc)?, j, &ks, cfg.doc_distance_floor);
            let y = deviation_bounds(&boxes[1], jsd(&gens[j], &doc)?, j, &ks, cfg.doc_distance_floor);
            let mut s = Iv(0.0, 0.0);
            for (xi, yi) in x.iter().zip(&y) {
                let r = ratio_bounds(*xi, *yi, cfg.epsilon);
                s = Iv(s.0 + r.0, s.1 + r.1);
            }
            let m = ks.len() as f64;
            sum = Iv(sum.0 + (s.0 / m).clamp(0.0, 1.0), sum.1 + (s.1 / m).clamp(0.0, 1.0));
        }
        let entry = per_doc.entry(inst.doc_id()).or_insert((Iv(0.0, 0.0), 0));
        entry.0 = Iv(entry.0 .0 + sum.0, entry.0 .1 + sum.1);
        entry.1 += n;
    }
    let docs = per_doc.len().max(1) as f64;
    let (lo, hi) = per_doc.values().fold((0.0, 0.0), |acc, (s, n)| {
        let n = (*n).max(1) as f64;
        (acc.0 + s.0 / n / docs, acc.1 + s.1 / n / docs)
    });
    Ok(QuantizedRatings {
        ratings,
        degress_low: lo.clamp(0.0, 1.0),
        degress_high: hi.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizer_inverts_the_rating_map() {
        for r in 1..=6u8 {
            assert_eq!(quantize_distance(rating_to_distance(r)), r);
        }
        assert_eq!(quantize_distance(0.0), 6);
        assert_eq!(quantize_distance(1.0), 1);
        assert_eq!(quantize_distance(0.45), 4);
    }

    #[test]
    fn exact_ratings_collapse_the_interval() {
        let a = Iv(0.2, 0.2);
        let r = ratio_bounds(a, a, 1e-8);
        assert_eq!((r.0, r.1), (1.0, 1.0));
        let r = ratio_bounds(Iv(0.1, 0.2), Iv(0.4, 0.5), 0.0);
        assert!((r.0 - 0.2).abs() < 1e-12 && (r.1 - 0.5).abs() < 1e-12);
    }
}
