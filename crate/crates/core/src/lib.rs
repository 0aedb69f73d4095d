//! Tools for measuring in-context personalization of summarization models.
//!
//! The pipeline runs corpus ingestion, prompt rendering under token budgets,
//! completion collection, EGISES/DEGRESS scoring and paradox probing.

pub mod corpus;
pub mod egises;
pub mod error;
pub mod genbridge;
pub mod oracles;
pub mod probes;
pub mod promptforge;
pub mod seeding;
pub mod textdist;

pub use error::{Error, Result};
