//! Object/region/submap cluster hierarchy over a submap's Gaussians.
//!
//! Pairwise distances blend metric and semantic terms,
//! `q = ‖μᵢ − μⱼ‖ + λ·(1 − cos(fᵢ, fⱼ))`, and average-linkage agglomerative
//! clustering is cut at two heights to produce object leaves and regions.
//! Task utilities are scored at the object level and summed up the tree.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use log::warn;
use nalgebra::{DVector, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::codec::{CompressedFeature, FeatureRef, FeatureVector, PcaBasis};
use crate::splat::{voxel_key, GaussianPoint};

/// Above this many points clustering runs on a voxel-downsampled proxy.
pub const MAX_DIRECT_POINTS: usize = 5000;
/// Initial proxy voxel size (meters); doubled until the proxy fits.
pub const PROXY_VOXEL: f64 = 0.1;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("cannot cluster an empty point set")]
    Empty,
    #[error("cut thresholds must satisfy cut_object < cut_region (got {object} / {region})")]
    Cuts { object: f64, region: f64 },
    #[error("k must be positive")]
    ZeroK,
    #[error("task embedding has zero norm")]
    ZeroTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Object,
    Region,
    Submap,
}

impl Level {
    fn code(self) -> u8 {
        match self {
            Level::Object => 0,
            Level::Region => 1,
            Level::Submap => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self, FormatError> {
        match c {
            0 => Ok(Level::Object),
            1 => Ok(Level::Region),
            2 => Ok(Level::Submap),
            _ => Err(FormatError::Malformed(format!("unknown level {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    pub level: Level,
    pub children: Vec<ClusterNode>,
    /// Gaussian indices; populated on object leaves only.
    pub members: Vec<u32>,
    /// Number of Gaussians under the node.
    pub size: usize,
    /// In the submap's anchor frame.
    pub centroid: Point3<f64>,
    pub mean_feature: CompressedFeature,
    pub utility: f64,
}

impl ClusterNode {
    /// Nodes in preorder.
    pub fn preorder(&self) -> Vec<&ClusterNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn leaves(&self) -> Vec<&ClusterNode> {
        self.preorder()
            .into_iter()
            .filter(|n| n.children.is_empty())
            .collect()
    }

    /// Union of leaf member sets below this node, sorted.
    pub fn member_indices(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self
            .leaves()
            .into_iter()
            .flat_map(|l| l.members.iter().copied())
            .collect();
        m.sort_unstable();
        m
    }

    /// Hash of everything except utilities.
    pub fn structure_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for n in self.preorder() {
            n.level.hash(&mut h);
            n.children.len().hash(&mut h);
            n.members.hash(&mut h);
            n.size.hash(&mut h);
            for c in n.centroid.coords.iter() {
                c.to_bits().hash(&mut h);
            }
            for f in n.mean_feature.as_slice() {
                f.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn write_preorder(&self, w: &mut Writer) {
        let nodes = self.preorder();
        w.u64(nodes.len() as u64);
        for n in nodes {
            w.u8(n.level.code());
            w.u32(n.children.len() as u32);
            w.u64(n.size as u64);
            w.u32(n.members.len() as u32);
            for &m in &n.members {
                w.u32(m);
            }
            for &c in n.centroid.coords.iter() {
                w.f64(c);
            }
            w.u32(n.mean_feature.len() as u32);
            for &f in n.mean_feature.as_slice() {
                w.f64(f);
            }
            w.f64(n.utility);
        }
    }

    pub fn read_preorder(r: &mut Reader<'_>) -> Result<ClusterNode, FormatError> {
        let count = r.u64()? as usize;
        if count == 0 {
            return Err(FormatError::Malformed("empty hierarchy".into()));
        }
        let mut remaining = count;
        let root = read_node(r, &mut remaining)?;
        if remaining != 0 {
            return Err(FormatError::Malformed(format!(
                "hierarchy declares {count} nodes but the tree has {}",
                count - remaining
            )));
        }
        Ok(root)
    }
}

fn read_node(r: &mut Reader<'_>, remaining: &mut usize) -> Result<ClusterNode, FormatError> {
    if *remaining == 0 {
        return Err(FormatError::Malformed("hierarchy node count exceeded".into()));
    }
    *remaining -= 1;
    let level = Level::from_code(r.u8()?)?;
    let n_children = r.u32()? as usize;
    let size = r.u64()? as usize;
    let n_members = r.u32()? as usize;
    if n_members > r.remaining() / 4 {
        return Err(FormatError::Truncated {
            offset: 0,
            needed: n_members * 4 - r.remaining(),
        });
    }
    let members = (0..n_members).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let centroid = Point3::new(r.f64()?, r.f64()?, r.f64()?);
    let n_c = r.u32()? as usize;
    if n_c > r.remaining() / 8 {
        return Err(FormatError::Truncated {
            offset: 0,
            needed: n_c * 8 - r.remaining(),
        });
    }
    let feature = (0..n_c).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let utility = r.f64()?;
    let mut children = Vec::with_capacity(n_children.min(*remaining));
    for _ in 0..n_children {
        children.push(read_node(r, remaining)?);
    }
    Ok(ClusterNode {
        level,
        children,
        members,
        size,
        centroid,
        mean_feature: CompressedFeature::from_vector(DVector::from_vec(feature)),
        utility,
    })
}

/// A task: the embedding to score against, plus an optional label.
#[derive(Debug, Clone)]
pub struct TaskQuery {
    pub embedding: FeatureVector,
    pub text: Option<String>,
}

impl TaskQuery {
    pub fn new(embedding: FeatureVector, text: Option<String>) -> Result<Self, HierarchyError> {
        if embedding.norm() == 0.0 {
            return Err(HierarchyError::ZeroTask);
        }
        Ok(Self { embedding, text })
    }
}

/// Dense symmetric distance matrix, stored condensed (upper triangle).
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
    /// Pairs whose cosine term was dropped because a feature had zero norm.
    pub zero_norm_pairs: usize,
}

impl DistanceMatrix {
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.index(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.data[k] = v;
    }
}

struct ClusterInput<'a> {
    positions: Vec<Point3<f64>>,
    features: Vec<&'a CompressedFeature>,
}

fn distances(input: &ClusterInput<'_>, lambda: f64) -> DistanceMatrix {
    let n = input.positions.len();
    let mut m = DistanceMatrix {
        n,
        data: vec![0.0; n * n.saturating_sub(1) / 2],
        zero_norm_pairs: 0,
    };
    let norms: Vec<f64> = input.features.iter().map(|f| f.norm()).collect();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            let qe = (input.positions[i] - input.positions[j]).norm();
            let qs = if lambda == 0.0 {
                0.0
            } else if norms[i] == 0.0 || norms[j] == 0.0 {
                m.zero_norm_pairs += 1;
                0.0
            } else {
                input.features[i].vector().dot(input.features[j].vector()) / (norms[i] * norms[j])
            };
            m.data[k] = qe + lambda * (1.0 - qs);
            k += 1;
        }
    }
    if m.zero_norm_pairs > 0 {
        warn!(
            "{} point pairs had a zero-norm feature; their semantic similarity was taken as 0",
            m.zero_norm_pairs
        );
    }
    m
}

/// `q = q_e + λ·(1 − q_s)` for every pair.
pub fn pairwise_distance(points: &[GaussianPoint], lambda: f64) -> DistanceMatrix {
    let input = ClusterInput {
        positions: points.iter().map(|p| p.mu).collect(),
        features: points.iter().map(|p| &p.feature).collect(),
    };
    distances(&input, lambda)
}

/// One agglomeration step: clusters represented by slots `a < b` merged at
/// `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Average-linkage agglomeration by the nearest-neighbor-chain algorithm.
///
/// Returns merges sorted by height (stable), which is a valid dendrogram
/// because average linkage is reducible. The merged cluster keeps the lower
/// slot index.
pub fn average_linkage(dist: &DistanceMatrix) -> Vec<Merge> {
    let n = dist.len();
    let mut d = dist.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut n_active = n;
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while n_active > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        let (a, b) = loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            let mut best = prev;
            let mut best_d = prev.map(|p| d.get(a, p)).unwrap_or(f64::INFINITY);
            for c in 0..n {
                if !active[c] || c == a {
                    continue;
                }
                let dc = d.get(a, c);
                if dc < best_d {
                    best_d = dc;
                    best = Some(c);
                }
            }
            let b = best.unwrap();
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                break (a.min(b), a.max(b));
            }
            chain.push(b);
        };
        let h = d.get(a, b);
        merges.push(Merge { a, b, height: h });
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let v = (sa * d.get(a, k) + sb * d.get(b, k)) / (sa + sb);
            d.set(a, k, v);
        }
        active[b] = false;
        size[a] += size[b];
        n_active -= 1;
    }
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    merges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Flat cluster labels from cutting the dendrogram at `threshold`: every
/// merge with height ≤ threshold is applied. Labels are the smallest member
/// index of each cluster.
pub fn cut_labels(n: usize, merges: &[Merge], threshold: f64) -> Vec<usize> {
    let mut uf = UnionFind::new(n);
    for m in merges.iter().take_while(|m| m.height <= threshold) {
        uf.union(m.a, m.b);
    }
    (0..n).map(|i| uf.find(i)).collect()
}

fn group_by_label(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups
            .entry(l)
            .or_insert_with(|| {
                order.push(l);
                Vec::new()
            })
            .push(i);
    }
    order.into_iter().map(|l| groups.remove(&l).unwrap()).collect()
}

fn summarize(points: &[GaussianPoint], members: &[u32]) -> (Point3<f64>, CompressedFeature) {
    let n_c = points[members[0] as usize].feature.len();
    let mut c = Vector3::zeros();
    let mut f = DVector::zeros(n_c);
    for &m in members {
        let p = &points[m as usize];
        c += p.mu.coords;
        f += p.feature.vector();
    }
    c /= members.len() as f64;
    let norm = f.norm();
    if norm > 0.0 {
        f /= norm;
    }
    (Point3::from(c), CompressedFeature::from_vector(f))
}

fn node(points: &[GaussianPoint], level: Level, members: Vec<u32>, children: Vec<ClusterNode>) -> ClusterNode {
    let (centroid, mean_feature) = summarize(points, &members);
    let size = members.len();
    ClusterNode {
        level,
        members: if level == Level::Object { members } else { Vec::new() },
        children,
        size,
        centroid,
        mean_feature,
        utility: 0.0,
    }
}

/// Clusters `points` into a submap root with region and object levels.
///
/// Sets larger than [`MAX_DIRECT_POINTS`] are clustered through a voxel
/// proxy whose cells map back to all their member Gaussians.
pub fn build_hierarchy(
    points: &[GaussianPoint],
    lambda: f64,
    cut_object: f64,
    cut_region: f64,
) -> Result<ClusterNode, HierarchyError> {
    if points.is_empty() {
        return Err(HierarchyError::Empty);
    }
    if !(cut_object < cut_region) {
        return Err(HierarchyError::Cuts {
            object: cut_object,
            region: cut_region,
        });
    }

    // Proxy cells: each holds the original indices it stands for.
    let cells: Vec<Vec<u32>> = if points.len() > MAX_DIRECT_POINTS {
        let mut voxel = PROXY_VOXEL;
        loop {
            let mut index: HashMap<[i64; 3], usize> = HashMap::new();
            let mut cells: Vec<Vec<u32>> = Vec::new();
            for (i, p) in points.iter().enumerate() {
                let k = *index.entry(voxel_key(&p.mu, voxel)).or_insert_with(|| {
                    cells.push(Vec::new());
                    cells.len() - 1
                });
                cells[k].push(i as u32);
            }
            if cells.len() <= MAX_DIRECT_POINTS {
                break cells;
            }
            voxel *= 2.0;
        }
    } else {
        (0..points.len() as u32).map(|i| vec![i]).collect()
    };

    let proxy: Vec<(Point3<f64>, CompressedFeature)> = cells
        .iter()
        .map(|members| {
            if members.len() == 1 {
                let p = &points[members[0] as usize];
                (p.mu, p.feature.clone())
            } else {
                summarize(points, members)
            }
        })
        .collect();
    let input = ClusterInput {
        positions: proxy.iter().map(|(p, _)| *p).collect(),
        features: proxy.iter().map(|(_, f)| f).collect(),
    };
    let dist = distances(&input, lambda);
    let merges = average_linkage(&dist);
    let object_labels = cut_labels(cells.len(), &merges, cut_object);
    let region_labels = cut_labels(cells.len(), &merges, cut_region);

    let expand = |cell_ids: &[usize]| -> Vec<u32> {
        let mut m: Vec<u32> = cell_ids.iter().flat_map(|&c| cells[c].iter().copied()).collect();
        m.sort_unstable();
        m
    };

    let mut regions = Vec::new();
    for region_cells in group_by_label(&region_labels) {
        let sub_labels: Vec<usize> = region_cells.iter().map(|&c| object_labels[c]).collect();
        let mut objects = Vec::new();
        for idx in group_by_label(&sub_labels) {
            let object_cells: Vec<usize> = idx.iter().map(|&k| region_cells[k]).collect();
            objects.push(node(points, Level::Object, expand(&object_cells), Vec::new()));
        }
        regions.push(node(points, Level::Region, expand(&region_cells), objects));
    }
    let all: Vec<u32> = (0..points.len() as u32).collect();
    Ok(node(points, Level::Submap, all, regions))
}

/// Scores object leaves by rectified relevancy to the task and sums
/// utilities up the tree. The tree structure is left untouched.
pub fn score_task(root: &ClusterNode, task: &TaskQuery, codec: &PcaBasis) -> ClusterNode {
    let mut out = root.clone();
    score_in_place(&mut out, task, codec);
    out
}

fn score_in_place(node: &mut ClusterNode, task: &TaskQuery, codec: &PcaBasis) -> f64 {
    node.utility = if node.children.is_empty() {
        match codec.relevancy(FeatureRef::Compressed(&node.mean_feature), &task.embedding) {
            Ok(r) => r.max(0.0),
            Err(e) => {
                warn!("object relevancy unavailable ({e}); utility set to 0");
                0.0
            }
        }
    } else {
        let mut sum = 0.0;
        for c in &mut node.children {
            sum += score_in_place(c, task, codec);
        }
        sum
    };
    node.utility
}

/// A node returned by [`top_k_retrieve`].
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub submap: u64,
    /// Preorder index within the submap hierarchy.
    pub node_index: usize,
    pub level: Level,
    pub centroid_world: Point3<f64>,
    pub size: usize,
    pub utility: f64,
}

/// The `k` highest-utility nodes across all submaps with a hierarchy,
/// whether loaded or not. Ties go to the lower submap id, then the lower
/// preorder index.
pub fn top_k_retrieve(
    store: &crate::submap::SubmapStore,
    task: &TaskQuery,
    codec: &PcaBasis,
    k: usize,
) -> Result<Vec<Retrieved>, HierarchyError> {
    if k == 0 {
        return Err(HierarchyError::ZeroK);
    }
    let mut all = Vec::new();
    for s in store.submaps() {
        let Some(h) = &s.hierarchy else { continue };
        let scored = score_task(h, task, codec);
        for (i, n) in scored.preorder().into_iter().enumerate() {
            all.push(Retrieved {
                submap: s.id,
                node_index: i,
                level: n.level,
                centroid_world: s.anchor * n.centroid,
                size: n.size,
                utility: n.utility,
            });
        }
    }
    all.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then(a.submap.cmp(&b.submap))
            .then(a.node_index.cmp(&b.node_index))
    });
    all.truncate(k);
    Ok(all)
}

/// Checks the sum rule at every internal node; returns the largest relative
/// violation.
pub fn propagation_error(root: &ClusterNode) -> f64 {
    root.preorder()
        .into_iter()
        .filter(|n| !n.children.is_empty())
        .map(|n| {
            let s: f64 = n.children.iter().map(|c| c.utility).sum();
            (n.utility - s).abs() / s.abs().max(1e-300).max(n.utility.abs())
        })
        .filter(|e| e.is_finite())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Normalization;
    use nalgebra::DMatrix;

    fn gp(p: [f64; 3], f: &[f64]) -> GaussianPoint {
        GaussianPoint {
            mu: Point3::new(p[0], p[1], p[2]),
            sigma: 0.05,
            color: [0.5; 3],
            opacity: 0.9,
            feature: CompressedFeature::new(f.to_vec()).unwrap(),
        }
    }

    fn identity_codec(n: usize) -> PcaBasis {
        PcaBasis::from_parts(
            DVector::zeros(n),
            DMatrix::identity(n, n),
            DVector::from_element(n, 1.0),
            1,
            Normalization::None,
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let pts = vec![gp([0.0; 3], &[1.0, 0.0]), gp([0.0; 3], &[1.0, 0.0])];
        assert_eq!(pairwise_distance(&pts, 1.0).get(0, 1), 0.0);

        let pts = vec![gp([0.0; 3], &[1.0, 0.0]), gp([1.0, 0.0, 0.0], &[0.0, 1.0])];
        assert!((pairwise_distance(&pts, 0.5).get(0, 1) - 1.5).abs() < 1e-15);
        assert!((pairwise_distance(&pts, 0.0).get(1, 0) - 1.0).abs() < 1e-15);
        assert_eq!(pairwise_distance(&pts, 0.5).get(1, 1), 0.0);
    }

    #[test]
    fn zero_norm_feature_drops_semantic_term() {
        let pts = vec![gp([0.0; 3], &[0.0, 0.0]), gp([2.0, 0.0, 0.0], &[0.0, 1.0])];
        let d = pairwise_distance(&pts, 0.5);
        assert_eq!(d.zero_norm_pairs, 1);
        assert!((d.get(0, 1) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn single_point_hierarchy() {
        let root = build_hierarchy(&[gp([1.0, 2.0, 3.0], &[1.0, 0.0])], 1.0, 0.8, 2.5).unwrap();
        assert_eq!(root.level, Level::Submap);
        assert_eq!(root.children.len(), 1);
        assert_eq!(root.children[0].children.len(), 1);
        assert_eq!(root.children[0].children[0].members, vec![0]);
    }

    #[test]
    fn identical_points_form_one_object() {
        let pts = vec![gp([1.0, 1.0, 0.0], &[0.0, 1.0]); 12];
        let root = build_hierarchy(&pts, 1.0, 0.8, 2.5).unwrap();
        let leaves = root.leaves();
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].members.len(), 12);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(build_hierarchy(&[], 1.0, 0.8, 2.5), Err(HierarchyError::Empty)));
        assert!(matches!(
            build_hierarchy(&[gp([0.0; 3], &[1.0])], 1.0, 2.5, 0.8),
            Err(HierarchyError::Cuts { .. })
        ));
    }

    #[test]
    fn sum_rule_example() {
        let pts = vec![
            gp([0.0, 0.0, 0.0], &[1.0, 0.0]),
            gp([0.3, 0.0, 0.0], &[0.6, 0.8]),
        ];
        // λ = 0 and a cut between the two heights keep both leaves in one region.
        let root = build_hierarchy(&pts, 0.0, 0.1, 1.0).unwrap();
        assert_eq!(root.children.len(), 1);
        assert_eq!(root.children[0].children.len(), 2);
        let task = TaskQuery::new(FeatureVector::new(vec![1.0, 0.0]).unwrap(), None).unwrap();
        let scored = score_task(&root, &task, &identity_codec(2));
        let leaf_utils: Vec<f64> = scored.leaves().iter().map(|l| l.utility).collect();
        assert!((leaf_utils[0] - 1.0).abs() < 1e-12);
        assert!((leaf_utils[1] - 0.6).abs() < 1e-12);
        assert_eq!(scored.children[0].utility, leaf_utils[0] + leaf_utils[1]);
        assert_eq!(scored.utility, scored.children[0].utility);
        assert_eq!(propagation_error(&scored), 0.0);
    }

    #[test]
    fn negative_relevancy_is_rectified() {
        let pts = vec![gp([0.0; 3], &[-1.0, 0.0])];
        let root = build_hierarchy(&pts, 1.0, 0.8, 2.5).unwrap();
        let task = TaskQuery::new(FeatureVector::new(vec![1.0, 0.0]).unwrap(), None).unwrap();
        let scored = score_task(&root, &task, &identity_codec(2));
        assert_eq!(scored.utility, 0.0);
    }

    #[test]
    fn higher_similarity_merges_first() {
        // Two pairs with equal metric separation; pair A shares its feature.
        let pts = vec![
            gp([0.0, 0.0, 0.0], &[1.0, 0.0]),
            gp([1.0, 0.0, 0.0], &[1.0, 0.0]),
            gp([10.0, 0.0, 0.0], &[1.0, 0.0]),
            gp([11.0, 0.0, 0.0], &[0.0, 1.0]),
        ];
        let merges = average_linkage(&pairwise_distance(&pts, 1.0));
        assert_eq!((merges[0].a, merges[0].b), (0, 1));
        assert_eq!((merges[1].a, merges[1].b), (2, 3));
    }

    #[test]
    fn preorder_round_trip() {
        let pts: Vec<GaussianPoint> = (0..20)
            .map(|i| gp([i as f64 * 0.3, 0.0, 0.0], &[1.0, (i % 3) as f64]))
            .collect();
        let root = build_hierarchy(&pts, 1.0, 0.8, 2.5).unwrap();
        let mut w = Writer::new();
        root.write_preorder(&mut w);
        let bytes = w.into_inner();
        let back = ClusterNode::read_preorder(&mut Reader::new(&bytes)).unwrap();
        assert_eq!(back, root);
        assert!(ClusterNode::read_preorder(&mut Reader::new(&bytes[..bytes.len() - 1])).is_err());
    }
}
