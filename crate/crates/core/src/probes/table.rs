use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::egises::SystemScore;
use crate::error::{Error, Result};
use crate::promptforge::PromptStyle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Computed,
    Imported,
}

/// EGISES per (model, prompt style). Models keep their insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub provenance: Provenance,
    scores: IndexMap<String, BTreeMap<PromptStyle, f64>>,
}

impl ScoreTable {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            scores: IndexMap::new(),
        }
    }

    pub fn from_system_scores(scores: &[SystemScore]) -> Self {
        let mut table = Self::new(Provenance::Computed);
        for s in scores {
            table.insert(&s.model_id, s.prompt_style, s.egises);
        }
        table
    }

    pub fn insert(&mut self, model_id: &str, style: PromptStyle, egises: f64) {
        self.scores
            .entry(model_id.to_owned())
            .or_default()
            .insert(style, egises);
    }

    pub fn get(&self, model_id: &str, style: PromptStyle) -> Option<f64> {
        self.scores.get(model_id)?.get(&style).copied()
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// A model missing at least one of the six styles.
    pub fn is_partial(&self, model_id: &str) -> bool {
        self.scores
            .get(model_id)
            .is_none_or(|row| row.len() < PromptStyle::ALL.len())
    }

    /// Every (model, style, score) cell in table order.
    pub fn cells(&self) -> impl Iterator<Item = (&str, PromptStyle, f64)> {
        self.scores
            .iter()
            .flat_map(|(m, row)| row.iter().map(move |(s, v)| (m.as_str(), *s, *v)))
    }

    /// Read a CSV with a `model_id` column and one column per style name
    /// (`zero_shot`, `two_shot_no_hist`, ...). Empty cells are allowed.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(file, &path.display().to_string())
    }

    pub fn parse_csv<R: std::io::Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let model_col = headers
            .iter()
            .position(|h| h == "model_id")
            .ok_or_else(|| Error::MissingColumn {
                path: source.into(),
                column: "model_id".to_owned(),
            })?;
        let mut columns = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if i == model_col {
                continue;
            }
            let style: PromptStyle = h
                .parse()
                .map_err(|_| Error::ScoreTable(format!("{source}: unknown style column `{h}`")))?;
            columns.push((i, style));
        }
        let mut table = Self::new(Provenance::Imported);
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let model = row.get(model_col).unwrap_or_default();
            if model.is_empty() {
                return Err(Error::ScoreTable(format!("{source}: row {} has no model_id", line + 2)));
            }
            if table.scores.contains_key(model) {
                return Err(Error::ScoreTable(format!("{source}: duplicate model `{model}`")));
            }
            table.scores.insert(model.to_owned(), BTreeMap::new());
            for &(i, style) in &columns {
                let cell = row.get(i).unwrap_or_default();
                if cell.is_empty() {
                    continue;
                }
                let value: f64 = cell
                    .parse()
                    .map_err(|_| Error::ScoreTable(format!("{source}: row {}: `{cell}` is not a number", line + 2)))?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::ScoreTable(format!(
                        "{source}: row {}: EGISES {value} outside [0, 1]",
                        line + 2
                    )));
                }
                table.insert(model, style, value);
            }
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_id");
        for s in PromptStyle::ALL {
            out.push(',');
            out.push_str(s.as_str());
        }
        out.push('\n');
        for (model, row) in &self.scores {
            out.push_str(&csv_field(model));
            for s in PromptStyle::ALL {
                out.push(',');
                if let Some(v) = row.get(&s) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
