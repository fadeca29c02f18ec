use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;
use super::MissionError;
use crate::collision::CollisionConfig;
use crate::motion::{HorizonConfig, LatticeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    pub map_hz: f64,
    pub discrete_every_n_map_iters: usize,
    pub continuous_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            map_hz: 1.0,
            discrete_every_n_map_iters: 5,
            continuous_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    /// Pixel stride for back-projection.
    pub stride: usize,
    /// Voxel size for merging Gaussians after each insertion.
    pub voxel: f64,
    pub r_submap: f64,
    /// Load radius; `None` picks `max(R_loc, r_submap + max_depth)`.
    pub r_load: Option<f64>,
    pub lambda: f64,
    pub cut_object: f64,
    pub cut_region: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            voxel: 0.2,
            r_submap: 3.0,
            r_load: None,
            lambda: 1.0,
            cut_object: 0.8,
            cut_region: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub d_wire: f64,
    /// Travel budget for the high-level plan; defaults to twice the graph
    /// diameter, floored at `min_budget`.
    pub budget: Option<f64>,
    pub min_budget: f64,
    /// Object vantage points below this utility are not pursued.
    pub min_object_utility: f64,
    /// Edge length limit of the graph used for the shortest-path metric.
    pub sp_wire: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            d_wire: 6.0,
            budget: None,
            min_budget: 12.0,
            min_object_utility: 0.3,
            sp_wire: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    /// Per-pixel relevancy above which the oracle is consulted.
    pub threshold: f64,
    /// Fraction of the image that must be relevant for completion.
    pub min_fraction: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.55,
            min_fraction: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationConfig {
    /// Distance of candidate exploration goals.
    pub step: f64,
    pub headings: usize,
    /// Penalty per radian of turning when scoring candidates.
    pub turn_weight: f64,
    pub max_ticks: usize,
    pub max_path_length: f64,
    /// Consecutive ticks without a feasible motion before giving up.
    pub max_stalled_ticks: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            step: 3.0,
            headings: 16,
            turn_weight: 0.5,
            max_ticks: 240,
            max_path_length: 120.0,
            max_stalled_ticks: 10,
        }
    }
}

/// Where a task embedding comes from: a scene label or an embedding file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub label: Option<String>,
    pub embedding: Option<PathBuf>,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetaskSpec {
    pub at_map_iteration: usize,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    /// Recorded dataset for `replay`.
    pub dataset: Option<PathBuf>,
    pub task: TaskSpec,
    pub retask: Option<RetaskSpec>,
    /// Initial robot state `[x, y, theta]`.
    pub start: [f64; 3],
    pub rates: Rates,
    pub mapping: MappingConfig,
    pub collision: CollisionConfig,
    pub lattice: LatticeConfig,
    pub horizon: HorizonConfig,
    pub planner: PlannerConfig,
    pub termination: TerminationConfig,
    pub exploration: ExplorationConfig,
    /// Robot footprint radius for the ground-truth contact count.
    pub robot_radius: f64,
    /// Directory for spilled submaps; kept in memory when unset.
    pub spill_dir: Option<PathBuf>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scene: SceneSpec::corridor(),
            dataset: None,
            task: TaskSpec {
                label: Some("backpack".into()),
                embedding: None,
                text: Some("find the backpack".into()),
            },
            retask: None,
            start: [1.5, 2.0, 0.0],
            rates: Rates::default(),
            mapping: MappingConfig::default(),
            collision: CollisionConfig::default(),
            lattice: LatticeConfig {
                allow_reverse: false,
                max_expansions: 5_000,
                ..LatticeConfig::default()
            },
            horizon: HorizonConfig {
                horizon: 5.0,
                goal_radius: 1.5,
                reached_radius: 1.5,
            },
            planner: PlannerConfig::default(),
            termination: TerminationConfig::default(),
            exploration: ExplorationConfig::default(),
            robot_radius: 0.2,
            spill_dir: None,
        }
    }
}

impl MissionConfig {
    pub fn from_toml(text: &str) -> Result<Self, MissionError> {
        let cfg: Self = toml::from_str(text).map_err(|e| MissionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MissionError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, MissionError> {
        toml::to_string(self).map_err(|e| MissionError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: &str| Err(MissionError::Config(m.to_string()));
        let r = &self.rates;
        if !(r.map_hz > 0.0 && r.continuous_hz > 0.0 && r.discrete_every_n_map_iters > 0) {
            return bad("rates must be positive");
        }
        if self.mapping.stride == 0 || !(self.mapping.voxel > 0.0) {
            return bad("mapping stride and voxel must be positive");
        }
        if !(self.mapping.cut_object < self.mapping.cut_region) {
            return bad("cut_object must be below cut_region");
        }
        if self.lattice.dt <= 0.0 || self.lattice.substeps == 0 || self.lattice.heading_bins == 0 {
            return bad("lattice dt, substeps and heading bins must be positive");
        }
        if !(0.0..=1.0).contains(&self.termination.threshold) {
            return bad("termination threshold must lie in [0, 1]");
        }
        if self.exploration.headings == 0 {
            return bad("exploration needs at least one heading");
        }
        self.collision.validate().map_err(MissionError::Config)?;
        self.scene.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = MissionConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(MissionConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = MissionConfig::from_toml("seed = 3\n[rates]\nmap_hz = 2.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rates.map_hz, 2.0);
        assert_eq!(cfg.rates.discrete_every_n_map_iters, 5);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(MissionConfig::from_toml("[rates]\ncontinuous_hz = 0.0\n").is_err());
    }
}
