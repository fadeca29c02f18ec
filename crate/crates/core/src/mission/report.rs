use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MissionError;
use crate::motion::{write_jsonl, RobotState, TrajectoryRecord};
use crate::submap::SubmapStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationCounts {
    pub map: usize,
    pub discrete: usize,
    pub continuous: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidentSample {
    pub time: f64,
    pub resident: usize,
    pub global: usize,
    pub loaded_submaps: usize,
    pub submaps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub eta: f64,
    pub states_checked: usize,
    pub max_probability: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetaskOutcome {
    pub map_iteration: usize,
    pub structure_unchanged: bool,
    pub best_utility_before: f64,
    pub best_utility_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub verdict: Verdict,
    pub reason: String,
    /// Map iteration at which the oracle declared completion.
    pub termination_step: Option<usize>,
    pub termination_time: Option<f64>,
    pub path_length: f64,
    pub shortest_path: f64,
    pub competitive_ratio: f64,
    pub final_state: RobotState,
    /// Planar distance from the final position to the task object, when the
    /// task names a scene label.
    pub target_distance: Option<f64>,
    pub r_loc: f64,
    pub r_load: f64,
    pub counts: InvocationCounts,
    pub resident: Vec<ResidentSample>,
    pub safety: SafetyAudit,
    pub planner_failures: usize,
    pub exploration_ticks: usize,
    pub ground_truth_contacts: usize,
    pub retask: Option<RetaskOutcome>,
}

/// One discrete-plan vertex in the planner trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTraceRecord {
    pub map_iteration: usize,
    pub vertex: usize,
    pub position: [f64; 3],
    pub utility: f64,
    pub cum_cost: f64,
}

#[derive(Debug)]
pub struct MissionOutput {
    pub report: MissionReport,
    pub trajectory: Vec<TrajectoryRecord>,
    pub plan_trace: Vec<PlanTraceRecord>,
    pub store: SubmapStore,
}

impl MissionOutput {
    /// Writes `report.json`, `trajectory.jsonl`, `plan_trace.jsonl` and
    /// `map.atlm` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MissionError> {
        fs::create_dir_all(dir)?;
        let mut report = serde_json::to_vec_pretty(&self.report).map_err(std::io::Error::other)?;
        report.push(b'\n');
        fs::write(dir.join("report.json"), report)?;
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &self.trajectory)?;
        fs::write(dir.join("trajectory.jsonl"), buf)?;
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &self.plan_trace)?;
        fs::write(dir.join("plan_trace.jsonl"), buf)?;
        self.store.save(&dir.join("map.atlm"))?;
        Ok(())
    }
}
