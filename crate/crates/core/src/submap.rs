//! Anchor-posed submaps: creation by distance rule, proximity-based loading,
//! pose-graph anchor corrections and persistence.
//!
//! Submap file layout (`ATLS`, little-endian):
//!
//! ```text
//! "ATLS" u32 version u64 id 12×f64 anchor (row-major 3×4)
//! u64 point_count u32 n_c
//! point_count × { 3×f32 mu, f32 sigma, 3×f32 rgb, f32 opacity, n_c×f32 feature }
//! u8 has_hierarchy [preorder node list]
//! ```
//!
//! A whole store (`ATLM`) is `{u32 version, f64 r_submap, f64 r_load,
//! u64 next_id, u64 n}` followed by `n × {u8 loaded, u64 len, len bytes of ATLS}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Point3};
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::codec::CompressedFeature;
use crate::geometry::{pose_from_row_major, pose_to_row_major, position, Pose};
use crate::hierarchy::ClusterNode;
use crate::splat::GaussianPoint;

pub const SUBMAP_MAGIC: &[u8; 4] = b"ATLS";
pub const STORE_MAGIC: &[u8; 4] = b"ATLM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SubmapError {
    #[error("unknown submap id {0}")]
    UnknownId(u64),
    #[error("submap {0} is not loaded")]
    Unloaded(u64),
    #[error("feature length {got} does not match the store's {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl From<std::io::Error> for SubmapError {
    fn from(e: std::io::Error) -> Self {
        SubmapError::Format(FormatError::Io(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub id: u64,
    pub anchor: Pose,
    /// Anchor-frame Gaussians. Empty while spilled to disk.
    pub points: Vec<GaussianPoint>,
    pub hierarchy: Option<ClusterNode>,
    pub loaded: bool,
    point_count: usize,
    spilled: bool,
}

impl Submap {
    fn new(id: u64, anchor: Pose) -> Self {
        Self {
            id,
            anchor,
            points: Vec::new(),
            hierarchy: None,
            loaded: true,
            point_count: 0,
            spilled: false,
        }
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn anchor_position(&self) -> Point3<f64> {
        position(&self.anchor)
    }

    pub fn is_spilled(&self) -> bool {
        self.spilled
    }
}

/// Global map as a set of submaps keyed by id.
#[derive(Debug, Clone)]
pub struct SubmapStore {
    submaps: BTreeMap<u64, Submap>,
    pub r_submap: f64,
    pub r_load: f64,
    next_id: u64,
    spill_dir: Option<PathBuf>,
}

impl PartialEq for SubmapStore {
    fn eq(&self, other: &Self) -> bool {
        self.submaps == other.submaps
            && self.r_submap == other.r_submap
            && self.r_load == other.r_load
            && self.next_id == other.next_id
    }
}

impl SubmapStore {
    pub fn new(r_submap: f64, r_load: f64) -> Self {
        Self {
            submaps: BTreeMap::new(),
            r_submap,
            r_load,
            next_id: 0,
            spill_dir: None,
        }
    }

    /// Unloaded submaps write their points to `dir` and release them.
    pub fn with_spill_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.spill_dir = Some(dir.into());
        self
    }

    pub fn len(&self) -> usize {
        self.submaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submaps.is_empty()
    }

    pub fn submaps(&self) -> impl Iterator<Item = &Submap> {
        self.submaps.values()
    }

    pub fn submap(&self, id: u64) -> Option<&Submap> {
        self.submaps.get(&id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.submaps.keys().copied().collect()
    }

    /// Nearest submap whose anchor is within `r_submap` of the robot
    /// (ties to the lower id); otherwise a new submap anchored at the pose.
    pub fn ensure_submap(&mut self, robot_pose: &Pose) -> u64 {
        let p = position(robot_pose);
        let nearest = self
            .submaps
            .values()
            .map(|s| (s.id, (s.anchor_position() - p).norm()))
            .filter(|&(_, d)| d <= self.r_submap)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((id, _)) = nearest {
            return id;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.submaps.insert(id, Submap::new(id, *robot_pose));
        id
    }

    /// Appends world-frame Gaussians to submap `id` in its anchor frame.
    pub fn insert_points(&mut self, id: u64, world_points: &[GaussianPoint]) -> Result<(), SubmapError> {
        let s = self.submaps.get_mut(&id).ok_or(SubmapError::UnknownId(id))?;
        if !s.loaded {
            return Err(SubmapError::Unloaded(id));
        }
        if let (Some(existing), Some(new)) = (s.points.first(), world_points.first()) {
            if existing.feature.len() != new.feature.len() {
                return Err(SubmapError::FeatureLength {
                    expected: existing.feature.len(),
                    got: new.feature.len(),
                });
            }
        }
        let to_local = s.anchor.inverse();
        s.points.extend(world_points.iter().map(|g| g.transformed(&to_local)));
        s.point_count = s.points.len();
        Ok(())
    }

    /// Replaces the anchor-frame points of a loaded submap (e.g. after merging).
    pub fn replace_points(&mut self, id: u64, local_points: Vec<GaussianPoint>) -> Result<(), SubmapError> {
        let s = self.submaps.get_mut(&id).ok_or(SubmapError::UnknownId(id))?;
        if !s.loaded {
            return Err(SubmapError::Unloaded(id));
        }
        s.point_count = local_points.len();
        s.points = local_points;
        Ok(())
    }

    pub fn set_hierarchy(&mut self, id: u64, root: Option<ClusterNode>) -> Result<(), SubmapError> {
        let s = self.submaps.get_mut(&id).ok_or(SubmapError::UnknownId(id))?;
        s.hierarchy = root;
        Ok(())
    }

    /// Loads exactly the submaps with anchors within `r_load` of the robot.
    /// Returns `(newly loaded, newly unloaded)` ids.
    pub fn refresh_loaded(&mut self, robot: &Point3<f64>) -> Result<(Vec<u64>, Vec<u64>), SubmapError> {
        let mut loaded = Vec::new();
        let mut unloaded = Vec::new();
        let ids: Vec<u64> = self.submaps.keys().copied().collect();
        for id in ids {
            let s = &self.submaps[&id];
            let want = (s.anchor_position() - robot).norm() <= self.r_load;
            if want && !s.loaded {
                self.load_submap(id)?;
                loaded.push(id);
            } else if !want && s.loaded {
                self.unload_submap(id)?;
                unloaded.push(id);
            }
        }
        Ok((loaded, unloaded))
    }

    fn spill_path(&self, id: u64) -> Option<PathBuf> {
        self.spill_dir
            .as_ref()
            .map(|d| d.join(format!("submap_{id:06}.atls")))
    }

    fn unload_submap(&mut self, id: u64) -> Result<(), SubmapError> {
        if let Some(path) = self.spill_path(id) {
            let s = &self.submaps[&id];
            fs::create_dir_all(path.parent().unwrap())?;
            fs::write(&path, encode_submap(s))?;
            let s = self.submaps.get_mut(&id).unwrap();
            s.points = Vec::new();
            s.spilled = true;
        }
        self.submaps.get_mut(&id).unwrap().loaded = false;
        Ok(())
    }

    fn load_submap(&mut self, id: u64) -> Result<(), SubmapError> {
        let points = match (self.submaps[&id].spilled, self.spill_path(id)) {
            (true, Some(path)) => {
                let bytes = fs::read(&path)?;
                Some(decode_submap(&mut Reader::new(&bytes))?.points)
            }
            _ => None,
        };
        let s = self.submaps.get_mut(&id).unwrap();
        if let Some(points) = points {
            s.points = points;
            s.spilled = false;
        }
        s.loaded = true;
        Ok(())
    }

    /// Replaces anchors; anchor-frame point coordinates are untouched so the
    /// submap content moves rigidly in the world frame.
    pub fn apply_anchor_corrections(&mut self, corrections: &BTreeMap<u64, Pose>) -> Result<(), SubmapError> {
        if let Some(&id) = corrections.keys().find(|id| !self.submaps.contains_key(id)) {
            return Err(SubmapError::UnknownId(id));
        }
        for (id, pose) in corrections {
            self.submaps.get_mut(id).unwrap().anchor = *pose;
        }
        Ok(())
    }

    /// World-frame points of the loaded submaps.
    pub fn local_map(&self) -> Vec<GaussianPoint> {
        self.submaps
            .values()
            .filter(|s| s.loaded)
            .flat_map(|s| s.points.iter().map(|g| g.transformed(&s.anchor)))
            .collect()
    }

    /// World-frame points of one submap, reading spilled content from disk.
    pub fn world_points(&self, id: u64) -> Result<Vec<GaussianPoint>, SubmapError> {
        let s = self.submaps.get(&id).ok_or(SubmapError::UnknownId(id))?;
        let local = self.local_points(s)?;
        Ok(local.iter().map(|g| g.transformed(&s.anchor)).collect())
    }

    fn local_points(&self, s: &Submap) -> Result<Vec<GaussianPoint>, SubmapError> {
        match (s.spilled, self.spill_path(s.id)) {
            (true, Some(path)) => {
                let bytes = fs::read(&path)?;
                Ok(decode_submap(&mut Reader::new(&bytes))?.points)
            }
            _ => Ok(s.points.clone()),
        }
    }

    /// All points in the world frame, loaded or not.
    pub fn export_world(&self) -> Result<Vec<GaussianPoint>, SubmapError> {
        let mut out = Vec::new();
        for id in self.submaps.keys() {
            out.extend(self.world_points(*id)?);
        }
        Ok(out)
    }

    /// Gaussians held by loaded submaps.
    pub fn resident_count(&self) -> usize {
        self.submaps
            .values()
            .filter(|s| s.loaded)
            .map(|s| s.point_count)
            .sum()
    }

    pub fn global_count(&self) -> usize {
        self.submaps.values().map(|s| s.point_count).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SubmapError> {
        let mut w = Writer::new();
        w.bytes(STORE_MAGIC);
        w.u32(FORMAT_VERSION);
        w.f64(self.r_submap);
        w.f64(self.r_load);
        w.u64(self.next_id);
        w.u64(self.submaps.len() as u64);
        for s in self.submaps.values() {
            let blob = if s.spilled {
                let mut full = s.clone();
                full.points = self.local_points(s)?;
                encode_submap(&full)
            } else {
                encode_submap(s)
            };
            w.u8(s.loaded as u8);
            w.u64(blob.len() as u64);
            w.bytes(&blob);
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SubmapError> {
        let mut r = Reader::new(bytes);
        r.magic(STORE_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let r_submap = r.f64()?;
        let r_load = r.f64()?;
        let next_id = r.u64()?;
        let n = r.u64()?;
        let mut submaps = BTreeMap::new();
        for _ in 0..n {
            let loaded = r.u8()? != 0;
            let len = r.u64()? as usize;
            let blob = r.take(len)?;
            let mut s = decode_submap(&mut Reader::new(blob))?;
            s.loaded = loaded;
            if submaps.insert(s.id, s).is_some() {
                return Err(FormatError::Malformed("duplicate submap id".into()).into());
            }
        }
        if r.remaining() != 0 {
            return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())).into());
        }
        Ok(Self {
            submaps,
            r_submap,
            r_load,
            next_id,
            spill_dir: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SubmapError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SubmapError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn encode_submap(s: &Submap) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(SUBMAP_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(s.id);
    for v in pose_to_row_major(&s.anchor) {
        w.f64(v);
    }
    w.u64(s.points.len() as u64);
    let n_c = s.points.first().map(|p| p.feature.len()).unwrap_or(0);
    w.u32(n_c as u32);
    for p in &s.points {
        for &c in p.mu.coords.iter() {
            w.f32(c as f32);
        }
        w.f32(p.sigma as f32);
        for &c in &p.color {
            w.f32(c as f32);
        }
        w.f32(p.opacity as f32);
        for &f in p.feature.as_slice() {
            w.f32(f as f32);
        }
    }
    match &s.hierarchy {
        Some(h) => {
            w.u8(1);
            h.write_preorder(&mut w);
        }
        None => w.u8(0),
    }
    w.into_inner()
}

pub fn decode_submap(r: &mut Reader<'_>) -> Result<Submap, FormatError> {
    r.magic(SUBMAP_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let id = r.u64()?;
    let mut anchor = [0.0; 12];
    for v in &mut anchor {
        *v = r.f64()?;
    }
    let count = r.u64()? as usize;
    let n_c = r.u32()? as usize;
    let stride = 8 + n_c;
    let flat = r.f32_vec(count.checked_mul(stride).ok_or_else(|| {
        FormatError::Malformed(format!("point count {count} overflows"))
    })?)?;
    let points: Vec<GaussianPoint> = if stride == 0 {
        Vec::new()
    } else {
        flat.chunks_exact(stride)
            .map(|c| GaussianPoint {
                mu: Point3::new(c[0] as f64, c[1] as f64, c[2] as f64),
                sigma: c[3] as f64,
                color: [c[4] as f64, c[5] as f64, c[6] as f64],
                opacity: c[7] as f64,
                feature: CompressedFeature::from_vector(DVector::from_iterator(
                    n_c,
                    c[8..].iter().map(|&v| v as f64),
                )),
            })
            .collect()
    };
    let hierarchy = match r.u8()? {
        0 => None,
        1 => Some(ClusterNode::read_preorder(r)?),
        other => return Err(FormatError::Malformed(format!("hierarchy flag {other}"))),
    };
    Ok(Submap {
        id,
        anchor: pose_from_row_major(&anchor),
        point_count: points.len(),
        points,
        hierarchy,
        loaded: true,
        spilled: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::planar_pose;
    use nalgebra::{Translation3, Vector3};

    fn gp(x: f64, y: f64, z: f64) -> GaussianPoint {
        GaussianPoint {
            mu: Point3::new(x, y, z),
            sigma: 0.25,
            color: [0.5, 0.25, 0.125],
            opacity: 0.75,
            feature: CompressedFeature::new(vec![1.0, -0.5]).unwrap(),
        }
    }

    #[test]
    fn ensure_submap_distance_rule() {
        let mut s = SubmapStore::new(2.0, 10.0);
        let a = s.ensure_submap(&Pose::identity());
        assert_eq!(s.submap(a).unwrap().anchor, Pose::identity());
        assert_eq!(s.ensure_submap(&planar_pose(1.0, 0.0, 0.0, 0.0)), a);
        let b = s.ensure_submap(&planar_pose(2.5, 0.0, 0.0, 0.0));
        assert_ne!(a, b);

        let mut outdoor = SubmapStore::new(5.0, 10.0);
        let a = outdoor.ensure_submap(&Pose::identity());
        assert_ne!(outdoor.ensure_submap(&planar_pose(5.1, 0.0, 0.0, 0.0)), a);
    }

    #[test]
    fn insert_uses_anchor_frame() {
        let mut s = SubmapStore::new(2.0, 10.0);
        let id = s.ensure_submap(&planar_pose(1.0, 2.0, 0.0, 0.0));
        s.insert_points(id, &[gp(3.0, 3.0, 1.0)]).unwrap();
        let stored = &s.submap(id).unwrap().points[0];
        assert!((stored.mu - Point3::new(2.0, 1.0, 1.0)).norm() < 1e-15);
        assert!((s.local_map()[0].mu - Point3::new(3.0, 3.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn insert_errors() {
        let mut s = SubmapStore::new(2.0, 3.0);
        assert!(matches!(s.insert_points(4, &[]), Err(SubmapError::UnknownId(4))));
        let id = s.ensure_submap(&Pose::identity());
        s.refresh_loaded(&Point3::new(10.0, 0.0, 0.0)).unwrap();
        assert!(matches!(s.insert_points(id, &[gp(0.0, 0.0, 0.0)]), Err(SubmapError::Unloaded(_))));
    }

    #[test]
    fn refresh_loaded_by_radius() {
        let mut s = SubmapStore::new(2.0, 10.0);
        let near = s.ensure_submap(&planar_pose(5.0, 0.0, 0.0, 0.0));
        let far = s.ensure_submap(&planar_pose(15.0, 0.0, 0.0, 0.0));
        s.insert_points(near, &[gp(5.0, 0.0, 0.0)]).unwrap();
        s.insert_points(far, &[gp(15.0, 0.0, 0.0), gp(15.0, 1.0, 0.0)]).unwrap();
        let (loaded, unloaded) = s.refresh_loaded(&Point3::origin()).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(unloaded, vec![far]);
        assert_eq!(s.resident_count(), 1);
        assert_eq!(s.global_count(), 3);
        assert_eq!(s.local_map().len(), 1);
    }

    #[test]
    fn spill_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SubmapStore::new(2.0, 5.0).with_spill_dir(dir.path());
        let a = s.ensure_submap(&Pose::identity());
        s.insert_points(a, &[gp(0.5, 0.5, 0.0)]).unwrap();
        let before = s.world_points(a).unwrap();
        s.refresh_loaded(&Point3::new(20.0, 0.0, 0.0)).unwrap();
        assert!(s.submap(a).unwrap().is_spilled());
        assert!(s.submap(a).unwrap().points.is_empty());
        assert_eq!(s.submap(a).unwrap().point_count(), 1);
        assert_eq!(s.world_points(a).unwrap(), before);
        s.refresh_loaded(&Point3::origin()).unwrap();
        assert_eq!(s.local_map(), before);
    }

    #[test]
    fn corrections_move_points_rigidly() {
        let mut s = SubmapStore::new(2.0, 10.0);
        let a = s.ensure_submap(&Pose::identity());
        s.insert_points(a, &[gp(1.0, 0.0, 0.0), gp(0.0, 2.0, 0.5)]).unwrap();
        let before = s.local_map();
        let mut corr = BTreeMap::new();
        corr.insert(a, Pose::identity());
        s.apply_anchor_corrections(&corr).unwrap();
        assert_eq!(s.local_map(), before);

        corr.insert(a, Pose::from_parts(Translation3::new(1.0, 0.0, 0.0), Default::default()));
        s.apply_anchor_corrections(&corr).unwrap();
        for (b, a) in before.iter().zip(s.local_map()) {
            assert!((a.mu - b.mu - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        }

        corr.insert(77, Pose::identity());
        assert!(matches!(s.apply_anchor_corrections(&corr), Err(SubmapError::UnknownId(77))));
    }

    #[test]
    fn store_round_trip_and_errors() {
        let mut s = SubmapStore::new(2.0, 10.0);
        let a = s.ensure_submap(&planar_pose(0.5, 0.25, 0.0, 0.5));
        s.insert_points(a, &[gp(1.0, 0.0, 0.0)]).unwrap();
        // Store anchor-frame values that are exact in f32.
        s.replace_points(a, vec![gp(0.5, 0.25, 1.0), gp(-2.0, 4.0, 0.125)]).unwrap();
        let bytes = s.to_bytes().unwrap();
        let back = SubmapStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);

        let empty = SubmapStore::new(5.0, 10.0);
        assert_eq!(SubmapStore::from_bytes(&empty.to_bytes().unwrap()).unwrap(), empty);

        assert!(matches!(
            SubmapStore::from_bytes(&bytes[..bytes.len() - 5]),
            Err(SubmapError::Format(FormatError::Truncated { .. }))
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            SubmapStore::from_bytes(&bad),
            Err(SubmapError::Format(FormatError::Version { found: 2, .. }))
        ));
    }
}
