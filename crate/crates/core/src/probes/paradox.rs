use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::table::ScoreTable;
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;

use PromptStyle::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSet {
    /// The five comparisons behind the published paradox matrix.
    #[default]
    Empirical,
    /// The nine comparisons as the probes define them.
    Definitional,
}

impl RuleSet {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleSet::Empirical => "empirical",
            RuleSet::Definitional => "definitional",
        }
    }

    /// One-paragraph note printed next to every matrix.
    pub fn note(self) -> &'static str {
        match self {
            RuleSet::Empirical => {
                "Empirical rules: PX-2 compares 0-shot with 2-shot w/ hist and PX-5 compares \
                 C-0-shot with C-2-shot w/ hist. These are the pairings under which the published \
                 paradox matrix follows from the published scores; the probe definitions pair \
                 PX-2 as 2-shot w/o hist vs 2-shot w/ hist and PX-5 as 2-shot w/ hist vs \
                 C-2-shot w/ hist (see the definitional rule set)."
            }
            RuleSet::Definitional => {
                "Definitional rules: the nine richer-vs-poorer prompt comparisons of probes 1 to 3. \
                 PX-2 and PX-5 differ from the empirical rule set used for the published matrix."
            }
        }
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(RuleSet::Empirical),
            "definitional" => Ok(RuleSet::Definitional),
            other => Err(Error::InvalidConfig(format!(
                "unknown rule set `{other}` (expected empirical or definitional)"
            ))),
        }
    }
}

/// A paradox is flagged when the richer prompt does not lower EGISES.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParadoxRule {
    pub name: &'static str,
    pub poorer: PromptStyle,
    pub richer: PromptStyle,
    pub description: &'static str,
}

const fn rule(name: &'static str, poorer: PromptStyle, richer: PromptStyle, description: &'static str) -> ParadoxRule {
    ParadoxRule {
        name,
        poorer,
        richer,
        description,
    }
}

const EMPIRICAL: [ParadoxRule; 5] = [
    rule("PX-1", ZeroShot, TwoShotNoHist, "examples without history"),
    rule("PX-2", ZeroShot, TwoShotHist, "examples with reading history"),
    rule("PX-3", ZeroShot, CZeroShot, "contrastive profile, no examples"),
    rule(
        "PX-4",
        TwoShotNoHist,
        CTwoShotNoHist,
        "contrastive examples without history",
    ),
    rule(
        "PX-5",
        CZeroShot,
        CTwoShotHist,
        "contrastive examples with history over contrastive 0-shot",
    ),
];

const DEFINITIONAL: [ParadoxRule; 9] = [
    rule("PX-1", ZeroShot, TwoShotNoHist, "k-shot w/o history over 0-shot"),
    rule("PX-1-h", ZeroShot, TwoShotHist, "k-shot w/ history over 0-shot"),
    rule(
        "PX-1-C",
        CZeroShot,
        CTwoShotNoHist,
        "contrastive k-shot w/o history over contrastive 0-shot",
    ),
    rule(
        "PX-1-h-C",
        CZeroShot,
        CTwoShotHist,
        "contrastive k-shot w/ history over contrastive 0-shot",
    ),
    rule("PX-2", TwoShotNoHist, TwoShotHist, "reading history added to k-shot"),
    rule(
        "PX-2-C",
        CTwoShotNoHist,
        CTwoShotHist,
        "reading history added to contrastive k-shot",
    ),
    rule("PX-3", ZeroShot, CZeroShot, "contrastive 0-shot over 0-shot"),
    rule(
        "PX-4",
        TwoShotNoHist,
        CTwoShotNoHist,
        "contrastive k-shot w/o history over k-shot w/o history",
    ),
    rule(
        "PX-5",
        TwoShotHist,
        CTwoShotHist,
        "contrastive k-shot w/ history over k-shot w/ history",
    ),
];

pub fn rule_set(kind: RuleSet) -> Vec<ParadoxRule> {
    match kind {
        RuleSet::Empirical => EMPIRICAL.to_vec(),
        RuleSet::Definitional => DEFINITIONAL.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVerdict {
    Paradox,
    Pass,
    NotEvaluable,
}

impl CellVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            CellVerdict::Paradox => "paradox",
            CellVerdict::Pass => "pass",
            CellVerdict::NotEvaluable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadoxCell {
    pub verdict: CellVerdict,
    /// (richer − poorer) × 100; absent when a style is missing.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParadoxMatrix {
    pub rule_set: RuleSet,
    pub rules: Vec<ParadoxRule>,
    pub models: Vec<String>,
    /// Indexed `[model][rule]`.
    pub cells: Vec<Vec<ParadoxCell>>,
}

impl ParadoxMatrix {
    pub fn cell(&self, model_id: &str, rule: &str) -> Option<&ParadoxCell> {
        let m = self.models.iter().position(|x| x == model_id)?;
        let r = self.rules.iter().position(|x| x.name == rule)?;
        Some(&self.cells[m][r])
    }

    /// Paradox count per model.
    pub fn paradox_counts(&self) -> Vec<(&str, usize)> {
        self.models
            .iter()
            .zip(&self.cells)
            .map(|(m, row)| {
                (
                    m.as_str(),
                    row.iter().filter(|c| c.verdict == CellVerdict::Paradox).count(),
                )
            })
            .collect()
    }
}

fn compare(table: &ScoreTable, model: &str, rule: &ParadoxRule) -> ParadoxCell {
    match (table.get(model, rule.poorer), table.get(model, rule.richer)) {
        (Some(poor), Some(rich)) => {
            let diff = rich - poor;
            ParadoxCell {
                verdict: if diff >= 0.0 {
                    CellVerdict::Paradox
                } else {
                    CellVerdict::Pass
                },
                delta: Some(diff * 100.0),
            }
        }
        _ => ParadoxCell {
            verdict: CellVerdict::NotEvaluable,
            delta: None,
        },
    }
}

pub fn detect_paradoxes(table: &ScoreTable, kind: RuleSet) -> ParadoxMatrix {
    let rules = rule_set(kind);
    let models: Vec<String> = table.models().map(str::to_owned).collect();
    let cells = models
        .iter()
        .map(|m| rules.iter().map(|r| compare(table, m, r)).collect())
        .collect();
    ParadoxMatrix {
        rule_set: kind,
        rules,
        models,
        cells,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDelta {
    pub model_id: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleAggregate {
    pub rule: String,
    pub poorer: PromptStyle,
    pub richer: PromptStyle,
    pub evaluated: usize,
    pub improving: usize,
    /// Mean |Δ| × 100 over improving models.
    pub improving_mean: Option<f64>,
    pub violating: usize,
    pub violating_mean: Option<f64>,
    pub max_improvement: Option<ModelDelta>,
    pub max_degradation: Option<ModelDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub rule_set: RuleSet,
    pub rules: Vec<RuleAggregate>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn largest(items: &[(&str, f64)]) -> Option<ModelDelta> {
    items
        .iter()
        .fold(None::<&(&str, f64)>, |best, x| match best {
            Some(b) if b.1 >= x.1 => Some(b),
            _ => Some(x),
        })
        .map(|(m, d)| ModelDelta {
            model_id: (*m).to_owned(),
            delta: *d,
        })
}

pub fn aggregate_deltas(table: &ScoreTable, kind: RuleSet) -> AggregateReport {
    let matrix = detect_paradoxes(table, kind);
    let rules = matrix
        .rules
        .iter()
        .enumerate()
        .map(|(r, rule)| {
            let mut better: Vec<(&str, f64)> = Vec::new();
            let mut worse: Vec<(&str, f64)> = Vec::new();
            for (m, model) in matrix.models.iter().enumerate() {
                let cell = &matrix.cells[m][r];
                let Some(delta) = cell.delta else { continue };
                match cell.verdict {
                    CellVerdict::Pass => better.push((model, delta.abs())),
                    CellVerdict::Paradox => worse.push((model, delta.abs())),
                    CellVerdict::NotEvaluable => {}
                }
            }
            let abs = |v: &[(&str, f64)]| v.iter().map(|x| x.1).collect::<Vec<_>>();
            RuleAggregate {
                rule: rule.name.to_owned(),
                poorer: rule.poorer,
                richer: rule.richer,
                evaluated: better.len() + worse.len(),
                improving: better.len(),
                improving_mean: mean(&abs(&better)),
                violating: worse.len(),
                violating_mean: mean(&abs(&worse)),
                max_improvement: largest(&better),
                max_degradation: largest(&worse),
            }
        })
        .collect();
    AggregateReport { rule_set: kind, rules }
}

/// For each model with a base model in `bases`, whether its 0-shot EGISES is
/// lower than the base's. Models without a base, or without both scores, are absent.
pub fn improves_on_base(table: &ScoreTable, bases: &BTreeMap<String, String>) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    for model in table.models() {
        let Some(base) = bases.get(model) else { continue };
        if let (Some(own), Some(theirs)) = (table.get(model, ZeroShot), table.get(base, ZeroShot)) {
            out.insert(model.to_owned(), own < theirs);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::table::Provenance;

    fn table(rows: &[(&str, [f64; 6])]) -> ScoreTable {
        let mut t = ScoreTable::new(Provenance::Imported);
        for (m, vals) in rows {
            for (s, v) in PromptStyle::ALL.into_iter().zip(vals) {
                t.insert(m, s, *v);
            }
        }
        t
    }

    #[test]
    fn rule_sets_are_well_formed() {
        let e = rule_set(RuleSet::Empirical);
        let d = rule_set(RuleSet::Definitional);
        assert_eq!((e.len(), d.len()), (5, 9));
        for r in e.iter().chain(&d) {
            assert_ne!(r.poorer, r.richer);
        }
        let px2 = d.iter().find(|r| r.name == "PX-2").unwrap();
        assert_eq!((px2.poorer, px2.richer), (TwoShotNoHist, TwoShotHist));
        for name in ["PX-3", "PX-4"] {
            let a = e.iter().find(|r| r.name == name).unwrap();
            let b = d.iter().find(|r| r.name == name).unwrap();
            assert_eq!((a.poorer, a.richer), (b.poorer, b.richer));
        }
    }

    #[test]
    fn ties_are_paradoxes_and_gaps_are_not_guessed() {
        let mut t = table(&[("m", [0.408, 0.367, 0.367, 0.408, 0.46, 0.458])]);
        t.insert("partial", ZeroShot, 0.3);
        let m = detect_paradoxes(&t, RuleSet::Empirical);
        let px3 = m.cell("m", "PX-3").unwrap();
        assert_eq!(px3.verdict, CellVerdict::Paradox);
        assert_eq!(px3.delta, Some(0.0));
        assert_eq!(m.cell("m", "PX-1").unwrap().verdict, CellVerdict::Pass);
        assert_eq!(m.cell("partial", "PX-1").unwrap().verdict, CellVerdict::NotEvaluable);
        let agg = aggregate_deltas(&t, RuleSet::Empirical);
        assert!(agg.rules.iter().all(|r| r.evaluated == 1));
    }

    #[test]
    fn base_comparison() {
        let t = table(&[
            ("base", [0.4, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("tuned", [0.35, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("worse", [0.45, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ]);
        let bases = [("tuned", "base"), ("worse", "base"), ("lost", "base")]
            .map(|(a, b)| (a.to_owned(), b.to_owned()))
            .into();
        let flags = improves_on_base(&t, &bases);
        assert_eq!(flags.len(), 2);
        assert!(flags["tuned"] && !flags["worse"]);
    }

    #[test]
    fn rule_set_names() {
        assert_eq!("definitional".parse::<RuleSet>().unwrap(), RuleSet::Definitional);
        assert!("other".parse::<RuleSet>().is_err());
    }
}
