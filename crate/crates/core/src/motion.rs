//! Motion-primitive A* for a unicycle robot with per-state chance
//! constraints.
//!
//! Primitives integrate one fixed control `(v, ω)` for `dt` seconds in closed
//! form. An edge is admitted only if every sub-step sample is free according
//! to the [`CollisionChecker`]. The search minimizes
//! `J = Σ (λ_t + v² + ω²)·dt` with the time-only heuristic
//! `λ_t·dist_to_goal_region / v_max`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Point2, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::CollisionChecker;
use crate::geometry::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(−π, π]`.
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }

    pub fn position3(&self, z: f64) -> Point3<f64> {
        Point3::new(self.x, self.y, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn is_feasible(&self, v_max: f64, omega_max: f64) -> bool {
        const EPS: f64 = 1e-12;
        self.v.abs() <= v_max + EPS && self.omega.abs() <= omega_max + EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    pub start: RobotState,
    pub control: ControlInput,
    pub duration: f64,
    /// States at `k·dt/substeps` for `k = 1..=substeps`.
    pub samples: Vec<RobotState>,
    pub end_state: RobotState,
    pub cost: f64,
}

/// Exact unicycle state after applying `u` for time `t` from `x0`.
pub fn arc_state(x0: &RobotState, u: &ControlInput, t: f64) -> RobotState {
    let th = x0.theta + u.omega * t;
    let (x, y) = if u.omega.abs() < 1e-12 {
        (x0.x + u.v * t * x0.theta.cos(), x0.y + u.v * t * x0.theta.sin())
    } else {
        let r = u.v / u.omega;
        (
            x0.x + r * (th.sin() - x0.theta.sin()),
            x0.y - r * (th.cos() - x0.theta.cos()),
        )
    };
    RobotState::new(x, y, th)
}

/// Cost of holding `u` for `dt`: `(λ_t + v² + ω²)·dt`.
pub fn primitive_cost(u: &ControlInput, dt: f64, lambda_t: f64) -> f64 {
    (lambda_t + u.v * u.v + u.omega * u.omega) * dt
}

pub fn integrate_primitive(
    x0: &RobotState,
    u: &ControlInput,
    dt: f64,
    substeps: usize,
    lambda_t: f64,
) -> MotionPrimitive {
    let substeps = substeps.max(1);
    let samples: Vec<RobotState> = (1..=substeps)
        .map(|k| arc_state(x0, u, dt * k as f64 / substeps as f64))
        .collect();
    MotionPrimitive {
        start: *x0,
        control: *u,
        duration: dt,
        end_state: *samples.last().unwrap(),
        samples,
        cost: primitive_cost(u, dt, lambda_t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub v_max: f64,
    pub omega_max: f64,
    pub n_v: usize,
    pub n_omega: usize,
    pub dt: f64,
    pub lambda_t: f64,
    /// Collision samples per primitive.
    pub substeps: usize,
    /// Position cell size of the deduplication lattice (meters).
    pub xy_resolution: f64,
    pub heading_bins: usize,
    pub max_expansions: usize,
    /// Whether negative translational speeds are part of the control set.
    pub allow_reverse: bool,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.0,
            n_v: 5,
            n_omega: 7,
            dt: 1.0,
            lambda_t: 1.0,
            substeps: 5,
            xy_resolution: 0.1,
            heading_bins: 16,
            max_expansions: 20_000,
            allow_reverse: true,
        }
    }
}

fn uniform_grid(max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| -max + 2.0 * max * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl LatticeConfig {
    /// Cartesian product of the speed grids, without the null control.
    pub fn controls(&self) -> Vec<ControlInput> {
        let vs = uniform_grid(self.v_max, self.n_v);
        let ws = uniform_grid(self.omega_max, self.n_omega);
        let mut out = Vec::new();
        for &v in &vs {
            for &omega in &ws {
                if (v == 0.0 && omega == 0.0) || (v < 0.0 && !self.allow_reverse) {
                    continue;
                }
                out.push(ControlInput { v, omega });
            }
        }
        out
    }

    fn cell(&self, s: &RobotState) -> (i64, i64, i64) {
        let bin = 2.0 * PI / self.heading_bins as f64;
        let h = (s.theta / bin).round() as i64;
        (
            (s.x / self.xy_resolution).floor() as i64,
            (s.y / self.xy_resolution).floor() as i64,
            h.rem_euclid(self.heading_bins as i64),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: Point2<f64>,
    pub radius: f64,
}

impl GoalRegion {
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        (p - self.center).norm() <= self.radius
    }

    pub fn distance(&self, p: &Point2<f64>) -> f64 {
        ((p - self.center).norm() - self.radius).max(0.0)
    }
}

/// Axis-aligned planar search bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl Bounds {
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub primitives: Vec<MotionPrimitive>,
    pub cost: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.primitives.iter().map(|p| p.duration).sum()
    }

    pub fn end_state(&self) -> Option<RobotState> {
        self.primitives.last().map(|p| p.end_state)
    }

    /// Every sample state in order (excluding the start).
    pub fn states(&self) -> impl Iterator<Item = &RobotState> {
        self.primitives.iter().flat_map(|p| p.samples.iter())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start state is in collision (probability {probability:.3e})")]
    StartInCollision { probability: f64 },
    #[error("no feasible trajectory: {0}")]
    Infeasible(String),
    #[error("discrete path is empty")]
    EmptyPath,
}

#[derive(Clone, Copy)]
struct OpenEntry {
    f: f64,
    g: f64,
    id: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.g.total_cmp(&self.g))
            .then(other.id.cmp(&self.id))
    }
}

struct SearchNode {
    state: RobotState,
    g: f64,
    parent: Option<(usize, MotionPrimitive)>,
}

/// Search outcome statistics alongside the trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub expansions: usize,
    pub generated: usize,
}

/// A* over motion primitives from `x0` to the goal region.
pub fn plan(
    x0: &RobotState,
    goal: &GoalRegion,
    checker: &CollisionChecker,
    lattice: &LatticeConfig,
    bounds: Option<&Bounds>,
) -> Result<Trajectory, PlanError> {
    search(x0, goal, checker, lattice, bounds, true).map(|(t, _)| t)
}

/// Same search with a zero heuristic (uniform-cost / Dijkstra).
pub fn plan_uniform_cost(
    x0: &RobotState,
    goal: &GoalRegion,
    checker: &CollisionChecker,
    lattice: &LatticeConfig,
    bounds: Option<&Bounds>,
) -> Result<Trajectory, PlanError> {
    search(x0, goal, checker, lattice, bounds, false).map(|(t, _)| t)
}

/// Admissible time heuristic `λ_t · dist(p, goal region) / v_max`.
pub fn heuristic(p: &Point2<f64>, goal: &GoalRegion, lattice: &LatticeConfig) -> f64 {
    lattice.lambda_t * goal.distance(p) / lattice.v_max
}

pub fn search(
    x0: &RobotState,
    goal: &GoalRegion,
    checker: &CollisionChecker,
    lattice: &LatticeConfig,
    bounds: Option<&Bounds>,
    use_heuristic: bool,
) -> Result<(Trajectory, SearchStats), PlanError> {
    let z = checker.config().z_rob;
    let p0 = x0.position3(z);
    if !checker.is_free(&p0) {
        return Err(PlanError::StartInCollision {
            probability: checker.probability(&p0),
        });
    }
    if let Some(b) = bounds {
        if !b.contains(&goal.center) {
            return Err(PlanError::Infeasible("goal outside map bounds".into()));
        }
    }
    let h = |s: &RobotState| {
        if use_heuristic {
            heuristic(&s.position(), goal, lattice)
        } else {
            0.0
        }
    };

    let controls = lattice.controls();
    let mut nodes = vec![SearchNode {
        state: *x0,
        g: 0.0,
        parent: None,
    }];
    let mut best_g: HashMap<(i64, i64, i64), f64> = HashMap::new();
    let mut closed: HashMap<(i64, i64, i64), ()> = HashMap::new();
    best_g.insert(lattice.cell(x0), 0.0);
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: h(x0),
        g: 0.0,
        id: 0,
    });
    let mut stats = SearchStats::default();

    while let Some(OpenEntry { g, id, .. }) = open.pop() {
        let state = nodes[id].state;
        let cell = lattice.cell(&state);
        if closed.contains_key(&cell) {
            continue;
        }
        if goal.contains(&state.position()) {
            return Ok((reconstruct(&nodes, id), stats));
        }
        closed.insert(cell, ());
        stats.expansions += 1;
        if stats.expansions > lattice.max_expansions {
            return Err(PlanError::Infeasible(format!(
                "search exhausted after {} expansions",
                lattice.max_expansions
            )));
        }

        let successors: Vec<Option<MotionPrimitive>> = controls
            .par_iter()
            .map(|u| {
                let prim = integrate_primitive(&state, u, lattice.dt, lattice.substeps, lattice.lambda_t);
                let inside = bounds
                    .map(|b| prim.samples.iter().all(|s| b.contains(&s.position())))
                    .unwrap_or(true);
                if !inside {
                    return None;
                }
                let free = prim.samples.iter().all(|s| checker.is_free(&s.position3(z)));
                free.then_some(prim)
            })
            .collect();

        for prim in successors.into_iter().flatten() {
            stats.generated += 1;
            let child_g = g + prim.cost;
            let child_cell = lattice.cell(&prim.end_state);
            if closed.contains_key(&child_cell) {
                continue;
            }
            if best_g.get(&child_cell).is_some_and(|&bg| bg <= child_g) {
                continue;
            }
            best_g.insert(child_cell, child_g);
            let child = SearchNode {
                state: prim.end_state,
                g: child_g,
                parent: Some((id, prim)),
            };
            let child_id = nodes.len();
            open.push(OpenEntry {
                f: child_g + h(&child.state),
                g: child_g,
                id: child_id,
            });
            nodes.push(child);
        }
    }
    Err(PlanError::Infeasible(format!(
        "state lattice exhausted after {} expansions",
        stats.expansions
    )))
}

fn reconstruct(nodes: &[SearchNode], mut id: usize) -> Trajectory {
    let mut prims = Vec::new();
    let cost = nodes[id].g;
    while let Some((parent, prim)) = &nodes[id].parent {
        prims.push(prim.clone());
        id = *parent;
    }
    prims.reverse();
    Trajectory {
        primitives: prims,
        cost,
    }
}

/// Index of the horizon goal on a discrete path.
///
/// Leading vertices already within `reached` of the robot are skipped. Among
/// the rest, the furthest one along the path that lies within `horizon` is
/// chosen; if none does, the nearest remaining vertex is used. `None` when
/// every vertex has been reached.
pub fn select_horizon_goal(
    path: &[Point2<f64>],
    robot: &Point2<f64>,
    horizon: f64,
    reached: f64,
) -> Option<usize> {
    let first = path.iter().position(|p| (p - robot).norm() > reached)?;
    let within = (first..path.len())
        .filter(|&i| (path[i] - robot).norm() <= horizon)
        .max();
    within.or_else(|| {
        (first..path.len()).min_by(|&a, &b| {
            (path[a] - robot)
                .norm()
                .total_cmp(&(path[b] - robot).norm())
                .then(a.cmp(&b))
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonConfig {
    /// Planning horizon H (meters).
    pub horizon: f64,
    pub goal_radius: f64,
    /// Path vertices closer than this are treated as visited.
    pub reached_radius: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            goal_radius: 0.5,
            reached_radius: 0.5,
        }
    }
}

/// Picks the horizon goal on `path` and plans a trajectory to it.
pub fn receding_horizon_step(
    path: &[Point2<f64>],
    x0: &RobotState,
    horizon: &HorizonConfig,
    checker: &CollisionChecker,
    lattice: &LatticeConfig,
    bounds: Option<&Bounds>,
) -> Result<(GoalRegion, Trajectory), PlanError> {
    if path.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    let robot = x0.position();
    let idx = select_horizon_goal(path, &robot, horizon.horizon, horizon.reached_radius)
        .unwrap_or(path.len() - 1);
    let goal = GoalRegion {
        center: path[idx],
        radius: horizon.goal_radius,
    };
    let traj = plan(x0, &goal, checker, lattice, bounds)?;
    Ok((goal, traj))
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub cum_cost: f64,
}

/// Flattens a trajectory into sample records starting at time `t0`.
pub fn trajectory_records(traj: &Trajectory, t0: f64, start_cost: f64) -> Vec<TrajectoryRecord> {
    let mut out = Vec::new();
    let mut t = t0;
    let mut cost = start_cost;
    for p in &traj.primitives {
        let n = p.samples.len() as f64;
        for (k, s) in p.samples.iter().enumerate() {
            let frac = (k + 1) as f64 / n;
            out.push(TrajectoryRecord {
                t: t + p.duration * frac,
                x: s.x,
                y: s.y,
                theta: s.theta,
                v: p.control.v,
                omega: p.control.omega,
                cum_cost: cost + p.cost * frac,
            });
        }
        t += p.duration;
        cost += p.cost;
    }
    out
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::CollisionConfig;

    fn free_checker() -> CollisionChecker {
        CollisionChecker::new(Vec::new(), CollisionConfig::default(), 1.0)
    }

    #[test]
    fn straight_primitive() {
        let p = integrate_primitive(
            &RobotState::new(0.0, 0.0, 0.0),
            &ControlInput { v: 1.0, omega: 0.0 },
            1.0,
            5,
            1.0,
        );
        assert!((p.end_state.x - 1.0).abs() < 1e-15);
        assert_eq!(p.end_state.y, 0.0);
        assert_eq!(p.end_state.theta, 0.0);
        assert_eq!(p.samples.len(), 5);
        assert!((p.samples[1].x - 0.4).abs() < 1e-15);
        assert_eq!(p.cost, 2.0);
    }

    #[test]
    fn rotation_in_place() {
        let p = integrate_primitive(
            &RobotState::new(0.0, 0.0, 0.0),
            &ControlInput { v: 0.0, omega: PI },
            1.0,
            5,
            1.0,
        );
        assert_eq!((p.end_state.x, p.end_state.y), (0.0, 0.0));
        assert!((p.end_state.theta - PI).abs() < 1e-12);
    }

    #[test]
    fn quarter_circle() {
        let p = integrate_primitive(
            &RobotState::new(0.0, 0.0, 0.0),
            &ControlInput { v: 1.0, omega: 1.0 },
            PI / 2.0,
            5,
            1.0,
        );
        assert!((p.end_state.x - 1.0).abs() < 1e-9);
        assert!((p.end_state.y - 1.0).abs() < 1e-9);
        assert!((p.end_state.theta - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn control_set_excludes_null() {
        let c = LatticeConfig::default().controls();
        assert_eq!(c.len(), 5 * 7 - 1);
        assert!(c.iter().all(|u| u.is_feasible(1.0, 1.0)));
    }

    #[test]
    fn goal_equal_start_is_empty() {
        let s = RobotState::new(1.0, 1.0, 0.0);
        let goal = GoalRegion {
            center: Point2::new(1.0, 1.0),
            radius: 0.3,
        };
        let t = plan(&s, &goal, &free_checker(), &LatticeConfig::default(), None).unwrap();
        assert!(t.primitives.is_empty());
        assert_eq!(t.cost, 0.0);
    }

    #[test]
    fn goal_outside_bounds_is_infeasible() {
        let s = RobotState::new(0.0, 0.0, 0.0);
        let goal = GoalRegion {
            center: Point2::new(50.0, 0.0),
            radius: 0.3,
        };
        let b = Bounds {
            min: Point2::new(-5.0, -5.0),
            max: Point2::new(5.0, 5.0),
        };
        let r = plan(&s, &goal, &free_checker(), &LatticeConfig::default(), Some(&b));
        assert!(matches!(r, Err(PlanError::Infeasible(_))));
    }

    #[test]
    fn horizon_goal_selection() {
        let robot = Point2::new(0.0, 0.0);
        let path = vec![Point2::new(3.0, 0.0), Point2::new(7.0, 0.0)];
        assert_eq!(select_horizon_goal(&path, &robot, 5.0, 0.5), Some(0));
        assert_eq!(select_horizon_goal(&path, &robot, 10.0, 0.5), Some(1));
        let far = vec![Point2::new(9.0, 0.0), Point2::new(6.0, 0.0)];
        assert_eq!(select_horizon_goal(&far, &robot, 5.0, 0.5), Some(1));
        let with_start = vec![robot, Point2::new(6.0, 0.0)];
        assert_eq!(select_horizon_goal(&with_start, &robot, 5.0, 0.5), Some(1));
        assert_eq!(select_horizon_goal(&[robot], &robot, 5.0, 0.5), None);
    }

    #[test]
    fn records_accumulate_cost() {
        let s = RobotState::new(0.0, 0.0, 0.0);
        let u = ControlInput { v: 1.0, omega: 0.0 };
        let p = integrate_primitive(&s, &u, 1.0, 2, 1.0);
        let q = integrate_primitive(&p.end_state, &u, 1.0, 2, 1.0);
        let traj = Trajectory {
            cost: p.cost + q.cost,
            primitives: vec![p, q],
        };
        let recs = trajectory_records(&traj, 10.0, 0.0);
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[3].t, 12.0);
        assert_eq!(recs[3].cum_cost, 4.0);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
