use std::collections::BTreeMap;

use log::debug;

use super::config::MappingConfig;
use super::MissionError;
use crate::codec::PcaBasis;
use crate::geometry::{position, Pose};
use crate::hierarchy::{build_hierarchy, score_task, TaskQuery};
use crate::splat::{backproject_init, prune_merge, CameraModel, Frame};
use crate::submap::SubmapStore;

/// The mapping half of the loop: back-project, insert, merge, re-cluster.
#[derive(Debug)]
pub struct Mapper {
    pub store: SubmapStore,
    pub config: MappingConfig,
    pub codec: PcaBasis,
    pub task: TaskQuery,
    /// Structure hash of each submap's last clustering.
    pub hashes: BTreeMap<u64, u64>,
}

impl Mapper {
    pub fn new(store: SubmapStore, config: MappingConfig, codec: PcaBasis, task: TaskQuery) -> Self {
        Self {
            store,
            config,
            codec,
            task,
            hashes: BTreeMap::new(),
        }
    }

    /// Integrates one frame observed with the robot at `robot_pose` and
    /// returns the id of the submap that received it.
    pub fn ingest(&mut self, frame: &Frame, cam: &CameraModel, robot_pose: &Pose) -> Result<u64, MissionError> {
        self.store.refresh_loaded(&position(robot_pose))?;
        let id = self.store.ensure_submap(robot_pose);
        let points = backproject_init(frame, cam, self.config.stride)?;
        self.store.insert_points(id, &points)?;
        let local = self.store.submap(id).map(|s| s.points.clone()).unwrap_or_default();
        let merged = prune_merge(&local, self.config.voxel);
        debug!("submap {id}: {} -> {} Gaussians after merge", local.len(), merged.len());
        self.store.replace_points(id, merged)?;
        self.recluster(id)?;
        Ok(id)
    }

    /// Rebuilds and scores the hierarchy of one submap.
    pub fn recluster(&mut self, id: u64) -> Result<(), MissionError> {
        let Some(s) = self.store.submap(id) else {
            return Ok(());
        };
        if s.points.is_empty() {
            return Ok(());
        }
        let root = build_hierarchy(
            &s.points,
            self.config.lambda,
            self.config.cut_object,
            self.config.cut_region,
        )?;
        self.hashes.insert(id, root.structure_hash());
        let scored = score_task(&root, &self.task, &self.codec);
        self.store.set_hierarchy(id, Some(scored))?;
        Ok(())
    }

    /// Re-scores every hierarchy for a new task without re-clustering.
    /// Returns whether all structure hashes were preserved.
    pub fn retask(&mut self, task: TaskQuery) -> Result<bool, MissionError> {
        self.task = task;
        let mut unchanged = true;
        for id in self.store.ids() {
            let Some(h) = self.store.submap(id).and_then(|s| s.hierarchy.clone()) else {
                continue;
            };
            let before = h.structure_hash();
            let scored = score_task(&h, &self.task, &self.codec);
            unchanged &= scored.structure_hash() == before
                && self.hashes.get(&id).is_none_or(|&hsh| hsh == before);
            self.store.set_hierarchy(id, Some(scored))?;
        }
        Ok(unchanged)
    }

    /// Largest object-level utility in the map.
    pub fn best_object_utility(&self) -> f64 {
        self.store
            .submaps()
            .filter_map(|s| s.hierarchy.as_ref())
            .flat_map(|h| h.leaves().into_iter().map(|n| n.utility))
            .fold(0.0, f64::max)
    }
}
