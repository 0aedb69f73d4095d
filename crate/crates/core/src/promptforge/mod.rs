//! Prompt construction for the six probe styles under fixed token budgets.

mod adversarial;
mod dataset;
mod render;
mod template;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adversarial::adversarial_perturb;
pub use dataset::{
    build_prompt_dataset, read_prompt_dataset, write_prompt_dataset, DatasetManifest, PromptDataset, RenderFailure,
    SectionTruncation,
};
pub use render::{budget_violations, render_prompt, ForgeConfig, PromptSubject, RenderedPrompt};
pub use template::{Segment, Template, TemplateSet, DEFAULT_TEMPLATES};

/// Total prompt size shared by every style.
pub const TOTAL_TOKENS: usize = 3700;

/// Marker that opens a reading-history section in the default templates.
pub const HISTORY_MARKER: &str = "### Reading history";
/// Marker that opens a demonstration example in the default templates.
pub const EXAMPLE_MARKER: &str = "### Example";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    ZeroShot,
    TwoShotNoHist,
    TwoShotHist,
    CZeroShot,
    CTwoShotNoHist,
    CTwoShotHist,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 6] = [
        PromptStyle::ZeroShot,
        PromptStyle::TwoShotNoHist,
        PromptStyle::TwoShotHist,
        PromptStyle::CZeroShot,
        PromptStyle::CTwoShotNoHist,
        PromptStyle::CTwoShotHist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::ZeroShot => "zero_shot",
            PromptStyle::TwoShotNoHist => "two_shot_no_hist",
            PromptStyle::TwoShotHist => "two_shot_hist",
            PromptStyle::CZeroShot => "c_zero_shot",
            PromptStyle::CTwoShotNoHist => "c_two_shot_no_hist",
            PromptStyle::CTwoShotHist => "c_two_shot_hist",
        }
    }

    /// Short human label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            PromptStyle::ZeroShot => "0-shot",
            PromptStyle::TwoShotNoHist => "2-shot w/o hist",
            PromptStyle::TwoShotHist => "2-shot w/ hist",
            PromptStyle::CZeroShot => "C-0-shot",
            PromptStyle::CTwoShotNoHist => "C-2-shot w/o hist",
            PromptStyle::CTwoShotHist => "C-2-shot w/ hist",
        }
    }

    pub fn is_contrastive(self) -> bool {
        matches!(
            self,
            PromptStyle::CZeroShot | PromptStyle::CTwoShotNoHist | PromptStyle::CTwoShotHist
        )
    }

    pub fn has_history(self) -> bool {
        !matches!(self, PromptStyle::TwoShotNoHist | PromptStyle::CTwoShotNoHist)
    }

    pub fn shots(self) -> usize {
        match self {
            PromptStyle::ZeroShot | PromptStyle::CZeroShot => 0,
            _ => 2,
        }
    }

    /// Number of users whose profile appears in the prompt.
    pub fn users(self) -> usize {
        if self.is_contrastive() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptStyle::ALL
            .into_iter()
            .find(|style| style.as_str() == s)
            .ok_or_else(|| Error::UnknownStyle(s.to_owned()))
    }
}

/// Token limits for one style. History and example limits apply per user / per example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub history_tokens: Option<usize>,
    pub example_tokens: Option<usize>,
    pub article_tokens: usize,
    pub total_tokens: usize,
}

impl PromptBudget {
    /// Sum of every section limit for `style`, template text excluded.
    pub fn section_sum(&self, style: PromptStyle) -> usize {
        let history = if style.has_history() {
            self.history_tokens.unwrap_or(0) * style.users()
        } else {
            0
        };
        let examples = self.example_tokens.unwrap_or(0) * style.shots();
        history + examples + self.article_tokens
    }
}

/// Default budget for a style.
pub fn budget_for(style: PromptStyle) -> PromptBudget {
    let (history, example, article) = match style {
        PromptStyle::ZeroShot => (Some(1200), None, 2500),
        PromptStyle::CZeroShot => (Some(1000), None, 1700),
        PromptStyle::TwoShotNoHist => (None, Some(950), 1800),
        PromptStyle::CTwoShotNoHist => (None, Some(950), 1800),
        PromptStyle::TwoShotHist => (Some(1200), Some(600), 1300),
        PromptStyle::CTwoShotHist => (Some(850), Some(450), 1100),
    };
    PromptBudget {
        history_tokens: history,
        example_tokens: example,
        article_tokens: article,
        total_tokens: TOTAL_TOKENS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_match_published_rows() {
        let zero = budget_for(PromptStyle::ZeroShot);
        assert_eq!((zero.history_tokens, zero.article_tokens), (Some(1200), 2500));
        assert_eq!(zero.example_tokens, None);

        let c2h = budget_for(PromptStyle::CTwoShotHist);
        assert_eq!(c2h.history_tokens, Some(850));
        assert_eq!(c2h.example_tokens, Some(450));
        assert_eq!(c2h.article_tokens, 1100);

        let two_no = budget_for(PromptStyle::TwoShotNoHist);
        assert_eq!(two_no.history_tokens, None);
        assert_eq!((two_no.example_tokens, two_no.article_tokens), (Some(950), 1800));
    }

    #[test]
    fn every_budget_fills_the_total() {
        for style in PromptStyle::ALL {
            assert_eq!(budget_for(style).section_sum(style), TOTAL_TOKENS, "{style}");
        }
    }

    #[test]
    fn style_names_round_trip() {
        for style in PromptStyle::ALL {
            assert_eq!(style.as_str().parse::<PromptStyle>().unwrap(), style);
            let json = serde_json::to_string(&style).unwrap();
            assert_eq!(json, format!("\"{}\"", style.as_str()));
        }
        assert!("three_shot".parse::<PromptStyle>().is_err());
    }
}
