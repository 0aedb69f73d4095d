use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::icpl::IcplVerdict;
use super::paradox::{AggregateReport, CellVerdict, ParadoxMatrix};
use super::table::{csv_field, ScoreTable};
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub model_id: String,
    pub prompt_style: PromptStyle,
    pub egises: f64,
}

/// All cells ordered by EGISES ascending; ties keep table order, then style order.
pub fn leaderboard(table: &ScoreTable) -> Vec<LeaderboardRow> {
    let order: BTreeMap<&str, usize> = table.models().enumerate().map(|(i, m)| (m, i)).collect();
    let mut cells: Vec<(&str, PromptStyle, f64)> = table.cells().collect();
    cells.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then(order[a.0].cmp(&order[b.0]))
            .then(a.1.cmp(&b.1))
    });
    cells
        .into_iter()
        .enumerate()
        .map(|(i, (m, s, v))| LeaderboardRow {
            rank: i + 1,
            model_id: m.to_owned(),
            prompt_style: s,
            egises: v,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportInputs<'a> {
    pub matrix: Option<&'a ParadoxMatrix>,
    pub aggregates: Option<&'a AggregateReport>,
    pub verdicts: &'a [IcplVerdict],
    /// Models flagged as improving on their base model at 0-shot.
    pub base_flags: Option<&'a BTreeMap<String, bool>>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.2}"))
}

fn markdown(table: &ScoreTable, inputs: &ReportInputs<'_>) -> String {
    let mut md = String::from(
        "# EGISES leaderboard\n\nLower EGISES means the summaries follow the readers' differences more closely.\n\n",
    );
    md.push_str("| Rank | Model | Prompt | EGISES |\n|---:|---|---|---:|\n");
    for row in leaderboard(table) {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.3} |",
            row.rank,
            row.model_id,
            row.prompt_style.label(),
            row.egises
        );
    }

    md.push_str("\n## Best prompt per model\n\n| Model | Prompt | EGISES | Partial |");
    if inputs.base_flags.is_some() {
        md.push_str(" Beats base at 0-shot |");
    }
    md.push_str("\n|---|---|---:|---|");
    if inputs.base_flags.is_some() {
        md.push_str("---|");
    }
    md.push('\n');
    for model in table.models() {
        let best = PromptStyle::ALL
            .into_iter()
            .filter_map(|s| table.get(model, s).map(|v| (s, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((style, value)) = best else { continue };
        let partial = if table.is_partial(model) { "yes" } else { "no" };
        let _ = write!(md, "| {model} | {} | {value:.3} | {partial} |", style.label());
        if let Some(flags) = inputs.base_flags {
            let mark = match flags.get(model) {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            let _ = write!(md, " {mark} |");
        }
        md.push('\n');
    }

    if let Some(matrix) = inputs.matrix {
        let _ = write!(
            md,
            "\n## Paradox matrix ({} rules)\n\n{}\n\n| Model |",
            matrix.rule_set,
            matrix.rule_set.note()
        );
        for r in &matrix.rules {
            let _ = write!(md, " {} |", r.name);
        }
        md.push_str(" Paradoxes |\n|---|");
        md.push_str(&"---|".repeat(matrix.rules.len() + 1));
        md.push('\n');
        for ((model, row), (_, count)) in matrix.models.iter().zip(&matrix.cells).zip(matrix.paradox_counts()) {
            let _ = write!(md, "| {model} |");
            for cell in row {
                let _ = write!(md, " {} |", cell.verdict.as_str());
            }
            let _ = writeln!(md, " {count} |");
        }
        md.push_str("\nRules:\n\n");
        for r in &matrix.rules {
            let _ = writeln!(
                md,
                "- {}: {} vs {} ({})",
                r.name,
                r.poorer.label(),
                r.richer.label(),
                r.description
            );
        }
    }

    if let Some(agg) = inputs.aggregates {
        let _ = write!(
            md,
            "\n## Aggregate deltas ({} rules)\n\nDeltas are absolute EGISES differences in percentage points.\n\n\
             | Rule | Poorer | Richer | Improving | Mean gain | Max gain | Violating | Mean loss |\n\
             |---|---|---|---:|---:|---|---:|---:|\n",
            agg.rule_set
        );
        for r in &agg.rules {
            let max = r
                .max_improvement
                .as_ref()
                .map_or_else(|| "-".to_owned(), |m| format!("{:.2} ({})", m.delta, m.model_id));
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.rule,
                r.poorer.label(),
                r.richer.label(),
                r.improving,
                opt(r.improving_mean),
                max,
                r.violating,
                opt(r.violating_mean)
            );
        }
    }

    if !inputs.verdicts.is_empty() {
        md.push_str("\n## ICPL verdicts\n\n| Model | Prompt | Pairs | Weak | Strong | Violating pairs | τ_U | τ_S |\n|---|---|---:|---|---|---:|---:|---:|\n");
        for v in inputs.verdicts {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {:.4} | {:.4} |",
                v.model_id,
                v.prompt_style.label(),
                v.pairs,
                v.weak,
                v.strong,
                v.violating.len(),
                v.tau_u,
                v.tau_s
            );
        }
    }
    md
}

fn matrix_csv(matrix: &ParadoxMatrix, cell: impl Fn(&super::paradox::ParadoxCell) -> String) -> String {
    let mut out = String::from("rule_set,model_id");
    for r in &matrix.rules {
        out.push(',');
        out.push_str(r.name);
    }
    out.push('\n');
    for (model, row) in matrix.models.iter().zip(&matrix.cells) {
        let _ = write!(out, "{},{}", matrix.rule_set, csv_field(model));
        for c in row {
            out.push(',');
            out.push_str(&cell(c));
        }
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Write the report files into `dir` and return their paths. Output depends only
/// on the inputs, so reruns are byte-identical.
pub fn emit_report(dir: &Path, table: &ScoreTable, inputs: &ReportInputs<'_>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, "leaderboard.md", &markdown(table, inputs), &mut written)?;

    let mut csv = String::from("rank,model_id,prompt_style,egises\n");
    for row in leaderboard(table) {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.rank,
            csv_field(&row.model_id),
            row.prompt_style,
            row.egises
        );
    }
    write(dir, "leaderboard.csv", &csv, &mut written)?;
    write(dir, "scores.csv", &table.to_csv(), &mut written)?;

    if let Some(matrix) = inputs.matrix {
        let flags = matrix_csv(matrix, |c| c.verdict.as_str().to_owned());
        write(dir, "paradox_matrix.csv", &flags, &mut written)?;
        let deltas = matrix_csv(matrix, |c| match (c.verdict, c.delta) {
            (CellVerdict::NotEvaluable, _) | (_, None) => String::new(),
            (_, Some(d)) => format!("{d:.4}"),
        });
        write(dir, "paradox_deltas.csv", &deltas, &mut written)?;
    }
    if let Some(agg) = inputs.aggregates {
        write(
            dir,
            "aggregates.json",
            &(serde_json::to_string_pretty(agg)? + "\n"),
            &mut written,
        )?;
    }
    if !inputs.verdicts.is_empty() {
        write(
            dir,
            "icpl.json",
            &(serde_json::to_string_pretty(inputs.verdicts)? + "\n"),
            &mut written,
        )?;
    }
    Ok(written)
}
