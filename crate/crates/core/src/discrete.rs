//! Budgeted vantage-point planning over sparse graphs.
//!
//! The high level has one vertex per submap. A walk from the start collects
//! the utility of every distinct vertex it touches, subject to a travel
//! budget. Small graphs are solved exactly by a subset dynamic program over
//! shortest-path closures; larger graphs use greedy insertion.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::Level;
use crate::submap::SubmapStore;

/// Largest reachable vertex count solved exactly.
pub const EXACT_LIMIT: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscreteError {
    #[error("start vertex {0} is not in the graph")]
    UnknownStart(usize),
    #[error("budget must be finite and nonnegative, got {0}")]
    Budget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub position: Point3<f64>,
    pub utility: f64,
    pub partition: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseGraph {
    pub vertices: Vec<Vertex>,
    /// `(i, j, w)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetedPath {
    pub vertices: Vec<usize>,
    pub total_utility: f64,
    pub total_cost: f64,
}

impl SparseGraph {
    pub fn new(vertices: Vec<Vertex>) -> Self {
        let n = vertices.len();
        Self {
            vertices,
            edges: Vec::new(),
            adjacency: vec![Vec::new(); n],
        }
    }

    /// Connects every pair whose Euclidean distance is at most `d_wire`.
    pub fn wired(vertices: Vec<Vertex>, d_wire: f64) -> Self {
        let mut g = Self::new(vertices);
        let n = g.len();
        for i in 0..n {
            for j in i + 1..n {
                let d = (g.vertices[i].position - g.vertices[j].position).norm();
                if d <= d_wire {
                    g.add_edge(i, j, d);
                }
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Adds (or overwrites) an undirected edge.
    pub fn add_edge(&mut self, i: usize, j: usize, w: f64) {
        assert!(i != j && i < self.len() && j < self.len(), "bad edge {i}-{j}");
        assert!(w.is_finite() && w >= 0.0, "bad weight {w}");
        let (a, b) = (i.min(j), i.max(j));
        if let Some(e) = self.edges.iter_mut().find(|e| e.0 == a && e.1 == b) {
            e.2 = w;
            for (x, y) in [(a, b), (b, a)] {
                if let Some(adj) = self.adjacency[x].iter_mut().find(|n| n.0 == y) {
                    adj.1 = w;
                }
            }
            return;
        }
        self.edges.push((a, b, w));
        for (x, y) in [(a, b), (b, a)] {
            let adj = &mut self.adjacency[x];
            let pos = adj.partition_point(|n| n.0 < y);
            adj.insert(pos, (y, w));
        }
    }

    /// Neighbors sorted by id.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn edge_weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency
            .get(i)?
            .binary_search_by_key(&j, |n| n.0)
            .ok()
            .map(|k| self.adjacency[i][k].1)
    }

    /// Single-source shortest paths. Returns distances and predecessors;
    /// ties prefer the lower-id predecessor.
    pub fn dijkstra(&self, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapItem(0.0, source));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                let better = nd < dist[v] || (nd == dist[v] && pred[v].is_some_and(|p| u < p));
                if !done[v] && better {
                    dist[v] = nd;
                    pred[v] = Some(u);
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        (dist, pred)
    }

    /// Dijkstra distance, infinite when disconnected.
    pub fn shortest_path_length(&self, start: usize, goal: usize) -> f64 {
        self.dijkstra(start).0[goal]
    }

    /// Largest finite shortest-path distance.
    pub fn diameter(&self) -> f64 {
        (0..self.len())
            .flat_map(|s| self.dijkstra(s).0)
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    /// Cost of a walk summed edge by edge; `None` if a step is not an edge.
    pub fn walk_cost(&self, walk: &[usize]) -> Option<f64> {
        walk.windows(2)
            .try_fold(0.0, |acc, w| self.edge_weight(w[0], w[1]).map(|c| acc + c))
    }

    /// Utility of the distinct vertices in `walk`, summed in id order.
    pub fn walk_utility(&self, walk: &[usize]) -> f64 {
        let mut ids: Vec<usize> = walk.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().map(|&i| self.vertices[i].utility).sum()
    }

    fn path_to(&self, pred: &[Option<usize>], source: usize, target: usize) -> Vec<usize> {
        let mut out = vec![target];
        let mut cur = target;
        while cur != source {
            cur = pred[cur].expect("target reachable");
            out.push(cur);
        }
        out.reverse();
        out
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Default budget: twice the graph diameter.
pub fn default_budget(graph: &SparseGraph) -> f64 {
    2.0 * graph.diameter()
}

/// One vertex per submap with a hierarchy, placed at the world-frame root
/// centroid and weighted by the root utility.
pub fn build_high_level(store: &SubmapStore, d_wire: f64) -> SparseGraph {
    let vertices = store
        .submaps()
        .filter_map(|s| {
            let root = s.hierarchy.as_ref()?;
            Some(Vertex {
                position: s.anchor * root.centroid,
                utility: root.utility.max(0.0),
                partition: s.id,
            })
        })
        .collect();
    SparseGraph::wired(vertices, d_wire)
}

/// Walk from `start` maximizing distinct-vertex utility with cost ≤ `budget`.
pub fn plan_budgeted(graph: &SparseGraph, start: usize, budget: f64) -> Result<BudgetedPath, DiscreteError> {
    if start >= graph.len() {
        return Err(DiscreteError::UnknownStart(start));
    }
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(DiscreteError::Budget(budget));
    }
    let closure = Closure::new(graph, start);
    let walk = if closure.ids.len() <= EXACT_LIMIT {
        exact(graph, &closure, budget)
    } else {
        greedy(graph, &closure, budget)
    };
    Ok(BudgetedPath {
        total_utility: graph.walk_utility(&walk),
        total_cost: graph.walk_cost(&walk).unwrap_or(0.0),
        vertices: walk,
    })
}

/// Shortest paths among the vertices reachable from the start.
struct Closure {
    /// Global ids, start first then ascending.
    ids: Vec<usize>,
    /// `paths[a][b]`: vertex sequence from `ids[a]` to `ids[b]`.
    paths: Vec<Vec<Vec<usize>>>,
}

impl Closure {
    fn new(graph: &SparseGraph, start: usize) -> Self {
        let (dist, _) = graph.dijkstra(start);
        let mut ids = vec![start];
        ids.extend((0..graph.len()).filter(|&v| v != start && dist[v].is_finite()));
        let paths = ids
            .iter()
            .map(|&s| {
                let (_, pred) = graph.dijkstra(s);
                ids.iter().map(|&t| graph.path_to(&pred, s, t)).collect()
            })
            .collect();
        Self { ids, paths }
    }

    fn extend_cost(&self, graph: &SparseGraph, cost: f64, a: usize, b: usize) -> f64 {
        self.paths[a][b]
            .windows(2)
            .fold(cost, |c, w| c + graph.edge_weight(w[0], w[1]).unwrap())
    }

    fn expand(&self, order: &[usize]) -> Vec<usize> {
        let mut walk = vec![self.ids[order[0]]];
        for w in order.windows(2) {
            walk.extend_from_slice(&self.paths[w[0]][w[1]][1..]);
        }
        walk
    }
}

fn exact(graph: &SparseGraph, cl: &Closure, budget: f64) -> Vec<usize> {
    let m = cl.ids.len();
    let full = 1usize << m;
    let mut cost = vec![f64::INFINITY; full * m];
    let mut pred = vec![usize::MAX; full * m];
    // mask {start}, ending at the start.
    cost[m] = 0.0;
    for mask in 1..full {
        if mask & 1 == 0 {
            continue;
        }
        for last in 0..m {
            let c = cost[mask * m + last];
            if !c.is_finite() {
                continue;
            }
            for next in 0..m {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nc = cl.extend_cost(graph, c, last, next);
                if nc > budget {
                    continue;
                }
                let slot = (mask | 1 << next) * m + next;
                if nc < cost[slot] || (nc == cost[slot] && last < pred[slot]) {
                    cost[slot] = nc;
                    pred[slot] = last;
                }
            }
        }
    }

    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    for mask in (1..full).filter(|m| m & 1 == 1) {
        let utility: f64 = (0..m)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| graph.vertices[cl.ids[i]].utility)
            .sum();
        for last in 0..m {
            let c = cost[mask * m + last];
            if !c.is_finite() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bu, bc, _)) => utility > *bu || (utility == *bu && c <= *bc),
            };
            if !better {
                continue;
            }
            let walk = cl.expand(&reconstruct(&pred, m, mask, last));
            match &best {
                Some((bu, bc, bw)) if utility == *bu && c == *bc && walk >= *bw => {}
                _ => best = Some((utility, c, walk)),
            }
        }
    }
    best.map(|b| b.2).unwrap_or_else(|| vec![cl.ids[0]])
}

fn reconstruct(pred: &[usize], m: usize, mut mask: usize, mut last: usize) -> Vec<usize> {
    let mut order = vec![last];
    while mask != 1 {
        let p = pred[mask * m + last];
        mask &= !(1 << last);
        last = p;
        order.push(last);
    }
    order.reverse();
    order
}

fn greedy(graph: &SparseGraph, cl: &Closure, budget: f64) -> Vec<usize> {
    let m = cl.ids.len();
    let mut order = vec![0usize];
    let mut visited = vec![false; m];
    visited[0] = true;
    let order_cost = |order: &[usize]| {
        order
            .windows(2)
            .fold(0.0, |c, w| cl.extend_cost(graph, c, w[0], w[1]))
    };
    loop {
        let base = order_cost(&order);
        let covered: Vec<usize> = cl.expand(&order);
        for &g in &covered {
            if let Some(i) = cl.ids.iter().position(|&x| x == g) {
                visited[i] = true;
            }
        }
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for cand in 0..m {
            if visited[cand] {
                continue;
            }
            let u = graph.vertices[cl.ids[cand]].utility;
            for pos in 1..=order.len() {
                let mut trial = order.clone();
                trial.insert(pos, cand);
                let c = order_cost(&trial);
                if c > budget {
                    continue;
                }
                let detour = c - base;
                let ratio = if detour <= 0.0 { f64::INFINITY } else { u / detour };
                let better = match best {
                    None => true,
                    Some((br, _, _, bc)) => ratio > br || (ratio == br && c < bc),
                };
                if better {
                    best = Some((ratio, cand, pos, c));
                }
            }
        }
        match best {
            Some((_, cand, pos, _)) => order.insert(pos, cand),
            None => break,
        }
    }
    cl.expand(&order)
}

/// Fine-level plan: a complete graph over the start point and object
/// vantage points, plus the chosen walk through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPlan {
    pub graph: SparseGraph,
    pub path: BudgetedPath,
}

impl RefinedPlan {
    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.path
            .vertices
            .iter()
            .map(|&i| self.graph.vertices[i].position)
            .collect()
    }
}

/// Expands the partitions visited by `high_path` (in order) into object
/// vantage points, inserting the best utility-per-distance vertex while the
/// budget, including a reserve for reaching later partitions, still holds.
pub fn refine_within_partitions(
    store: &SubmapStore,
    high_graph: &SparseGraph,
    high_path: &BudgetedPath,
    start: Point3<f64>,
    budget: f64,
) -> RefinedPlan {
    let mut order: Vec<u64> = Vec::new();
    for &v in &high_path.vertices {
        let p = high_graph.vertices[v].partition;
        if !order.contains(&p) {
            order.push(p);
        }
    }
    let centroid: BTreeMap<u64, Point3<f64>> = high_path
        .vertices
        .iter()
        .map(|&v| (high_graph.vertices[v].partition, high_graph.vertices[v].position))
        .collect();

    let mut vertices = vec![Vertex {
        position: start,
        utility: 0.0,
        partition: u64::MAX,
    }];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &pid in &order {
        let mut members = Vec::new();
        if let Some(root) = store.submap(pid).and_then(|s| s.hierarchy.as_ref().map(|h| (s, h))) {
            let (s, h) = root;
            for node in h.preorder().into_iter().filter(|n| n.level == Level::Object) {
                members.push(vertices.len());
                vertices.push(Vertex {
                    position: s.anchor * node.centroid,
                    utility: node.utility.max(0.0),
                    partition: pid,
                });
            }
        }
        groups.push(members);
    }

    let mut graph = SparseGraph::new(vertices);
    let n = graph.len();
    for i in 0..n {
        for j in i + 1..n {
            let d = (graph.vertices[i].position - graph.vertices[j].position).norm();
            graph.add_edge(i, j, d);
        }
    }

    // For each group: the first later non-empty centroid and the chain
    // length through the remaining ones, reserved from the budget.
    let mut reserve: Vec<Option<(Point3<f64>, f64)>> = vec![None; groups.len()];
    let mut acc: Option<(Point3<f64>, f64)> = None;
    for gi in (0..groups.len()).rev() {
        reserve[gi] = acc;
        if !groups[gi].is_empty() {
            let c = centroid[&order[gi]];
            let rest = acc.map(|(p, r)| (c - p).norm() + r).unwrap_or(0.0);
            acc = Some((c, rest));
        }
    }

    let mut route: Vec<usize> = vec![0];
    for (gi, members) in groups.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let segment_start = route.len();
        loop {
            let cost = graph.walk_cost(&route).unwrap();
            let mut best: Option<(f64, usize, usize, f64)> = None;
            for &cand in members.iter().filter(|c| !route.contains(c)) {
                for pos in segment_start..=route.len() {
                    let mut trial = route.clone();
                    trial.insert(pos, cand);
                    let c = graph.walk_cost(&trial).unwrap();
                    let end = graph.vertices[*trial.last().unwrap()].position;
                    let tail = reserve[gi].map(|(p, r)| (end - p).norm() + r).unwrap_or(0.0);
                    if c + tail > budget {
                        continue;
                    }
                    let detour = c - cost;
                    let u = graph.vertices[cand].utility;
                    let ratio = if detour <= 0.0 { f64::INFINITY } else { u / detour };
                    let better = match best {
                        None => true,
                        Some((br, bc, _, bcost)) => {
                            ratio > br || (ratio == br && (c < bcost || (c == bcost && cand < bc)))
                        }
                    };
                    if better {
                        best = Some((ratio, cand, pos, c));
                    }
                }
            }
            match best {
                Some((_, cand, pos, _)) => route.insert(pos, cand),
                None => break,
            }
        }
    }

    let path = BudgetedPath {
        total_utility: graph.walk_utility(&route),
        total_cost: graph.walk_cost(&route).unwrap(),
        vertices: route,
    };
    RefinedPlan { graph, path }
}

/// One line of the planner trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub vertex: usize,
    pub position: [f64; 3],
    pub utility: f64,
    pub cum_cost: f64,
}

pub fn plan_records(graph: &SparseGraph, path: &BudgetedPath) -> Vec<PlanRecord> {
    let mut cum = 0.0;
    let mut prev: Option<usize> = None;
    path.vertices
        .iter()
        .map(|&v| {
            if let Some(p) = prev {
                cum += graph.edge_weight(p, v).unwrap_or(0.0);
            }
            prev = Some(v);
            let p = graph.vertices[v].position;
            PlanRecord {
                vertex: v,
                position: [p.x, p.y, p.z],
                utility: graph.vertices[v].utility,
                cum_cost: cum,
            }
        })
        .collect()
}

pub fn write_plan_trace(mut w: impl Write, records: &[PlanRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, u: f64) -> Vertex {
        Vertex {
            position: Point3::new(x, 0.0, 0.0),
            utility: u,
            partition: 0,
        }
    }

    fn line() -> SparseGraph {
        SparseGraph::wired(vec![v(0.0, 0.0), v(1.0, 1.0), v(2.0, 5.0)], 1.0)
    }

    #[test]
    fn line_graph() {
        let g = line();
        assert_eq!(g.edges.len(), 2);
        let p = plan_budgeted(&g, 0, 2.0).unwrap();
        assert_eq!(p.vertices, vec![0, 1, 2]);
        assert_eq!(p.total_utility, 6.0);
        assert_eq!(p.total_cost, 2.0);
    }

    #[test]
    fn zero_budget_stays() {
        let g = line();
        let p = plan_budgeted(&g, 1, 0.0).unwrap();
        assert_eq!(p.vertices, vec![1]);
        assert_eq!(p.total_utility, 1.0);
        let p = plan_budgeted(&g, 0, 0.5).unwrap();
        assert_eq!(p.vertices, vec![0]);
    }

    #[test]
    fn revisits_count_once() {
        // Star: center 0 with leaves 1 and 2; visiting both needs a return.
        let mut g = SparseGraph::new(vec![v(0.0, 0.0), v(1.0, 2.0), v(-1.0, 3.0)]);
        g.add_edge(0, 1, 1.0);
        g.add_edge(0, 2, 1.0);
        let p = plan_budgeted(&g, 0, 3.0).unwrap();
        assert_eq!(p.total_utility, 5.0);
        assert_eq!(p.vertices, vec![0, 1, 0, 2]);
        assert_eq!(p.total_cost, 3.0);
    }

    #[test]
    fn errors() {
        let g = line();
        assert_eq!(plan_budgeted(&g, 7, 1.0), Err(DiscreteError::UnknownStart(7)));
        assert!(plan_budgeted(&g, 0, -1.0).is_err());
    }

    #[test]
    fn shortest_paths() {
        let mut g = SparseGraph::new(vec![v(0.0, 0.0), v(3.0, 0.0), v(3.0, 0.0)]);
        g.add_edge(0, 1, 3.0);
        g.add_edge(1, 2, 4.0);
        g.add_edge(0, 2, 5.0);
        assert_eq!(g.shortest_path_length(0, 2), 5.0);
        assert_eq!(g.diameter(), 5.0);
        let lone = SparseGraph::new(vec![v(0.0, 0.0), v(9.0, 0.0)]);
        assert!(lone.shortest_path_length(0, 1).is_infinite());
    }

    #[test]
    fn greedy_respects_budget() {
        let verts: Vec<Vertex> = (0..30).map(|i| v(i as f64, (i % 7) as f64)).collect();
        let g = SparseGraph::wired(verts, 1.5);
        for b in [0.0, 3.0, 10.0, 40.0] {
            let p = plan_budgeted(&g, 10, b).unwrap();
            assert!(p.total_cost <= b);
            assert_eq!(g.walk_cost(&p.vertices), Some(p.total_cost));
        }
    }

    #[test]
    fn trace_records() {
        let g = line();
        let p = plan_budgeted(&g, 0, 2.0).unwrap();
        let r = plan_records(&g, &p);
        assert_eq!(r.last().unwrap().cum_cost, 2.0);
    }
}
