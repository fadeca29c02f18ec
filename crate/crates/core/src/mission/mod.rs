//! Deterministic simulation harness tying mapping, clustering and planning
//! together.

mod config;
pub mod dataset;
mod mapper;
pub mod oracle;
mod report;
mod run;
pub mod scene;

use thiserror::Error;

pub use config::{
    ExplorationConfig, MappingConfig, MissionConfig, PlannerConfig, Rates, RetaskSpec, TaskSpec,
    TerminationConfig,
};
pub use mapper::Mapper;
pub use report::{
    InvocationCounts, MissionOutput, MissionReport, PlanTraceRecord, ResidentSample, RetaskOutcome,
    SafetyAudit, Verdict,
};
pub use run::{
    compute_shortest_path, label_task, replay_dataset, resolve_task, run_mission, run_mission_with,
    ReplaySummary,
};

use crate::binio::FormatError;
use crate::codec::CodecError;
use crate::hierarchy::HierarchyError;
use crate::splat::SplatError;
use crate::submap::SubmapError;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("task: {0}")]
    Task(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Submap(#[from] SubmapError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Splat(#[from] SplatError),
}
