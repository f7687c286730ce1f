//! Staged bilevel search: alternating weight/score optimization on a
//! weight-sharing network, with progressively deeper stages over a
//! progressively pruned candidate set, ending in discretization.

mod alpha;
mod config;
mod engine;
mod optim;

pub use alpha::{discretize, enforce_pool_cap, prune_operations};
pub use config::{default_stages, SearchConfig, StageConfig, DEFAULT_DROPOUT_TRIPLES};
pub use engine::{
    run_search, write_json, write_metrics_csv, CandidateRecord, EpochMetric, SeedOutcome,
    SearchOutcome, SelectionRecord, Trainer,
};
pub use optim::{cosine_lr, Adam, Sgd};

use thiserror::Error;

use crate::arch::ArchError;
use crate::builder::BuildError;
use crate::data::DataError;
use crate::latency::LatencyError;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("bad search request: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<SearchError>,
    },
    #[error("non-finite {phase} loss {loss}")]
    NonFinite { phase: &'static str, loss: f64 },
    #[error("no searched genotype meets the {budget_ms} ms latency budget")]
    OverBudget { budget_ms: f64 },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error("artifact io: {0}")]
    Io(#[from] std::io::Error),
}

impl SearchError {
    fn at_stage(self, stage: usize) -> SearchError {
        SearchError::Stage { stage, source: Box::new(self) }
    }
}
