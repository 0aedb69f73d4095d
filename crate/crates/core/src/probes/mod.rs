//! Score tables, paradox detection, ICPL verdicts and reports.

mod icpl;
mod paradox;
mod report;
mod table;

pub use icpl::{classify_icpl, default_threshold, pair_distances, IcplVerdict, PairDistance};
pub use paradox::{
    aggregate_deltas, detect_paradoxes, improves_on_base, rule_set, AggregateReport, CellVerdict, ModelDelta,
    ParadoxCell, ParadoxMatrix, ParadoxRule, RuleAggregate, RuleSet,
};
pub use report::{emit_report, leaderboard, LeaderboardRow, ReportInputs};
pub use table::{Provenance, ScoreTable};
