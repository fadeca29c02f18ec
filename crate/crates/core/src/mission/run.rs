use std::path::Path;

use log::{debug, info, warn};
use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use super::config::{MissionConfig, TaskSpec};
use super::dataset::Dataset;
use super::mapper::Mapper;
use super::oracle::{masked_relevancy, relevancy_stats, TerminationOracle, ThresholdOracle};
use super::report::{
    InvocationCounts, MissionOutput, MissionReport, PlanTraceRecord, ResidentSample, RetaskOutcome,
    SafetyAudit, Verdict,
};
use super::scene::Scene;
use super::MissionError;
use crate::codec::{read_corpus, RelevancyKernel};
use crate::collision::{compute_r_loc, CollisionChecker};
use crate::discrete::{
    build_high_level, default_budget, plan_budgeted, plan_records, refine_within_partitions,
    SparseGraph, Vertex,
};
use crate::geometry::{planar_pose, position, wrap_angle};
use crate::hierarchy::TaskQuery;
use crate::motion::{
    arc_state, integrate_primitive, plan, select_horizon_goal, Bounds, ControlInput, GoalRegion,
    MotionPrimitive, RobotState, Trajectory, TrajectoryRecord,
};
use crate::submap::SubmapStore;

/// Task embedding from a spec: the embedding file wins over the label.
pub fn resolve_task(spec: &TaskSpec, scene: Option<&Scene>) -> Result<TaskQuery, MissionError> {
    let embedding = if let Some(path) = &spec.embedding {
        let rows = read_corpus(path)?;
        rows.into_iter()
            .next()
            .ok_or_else(|| MissionError::Task(format!("{} holds no embedding", path.display())))?
    } else if let Some(label) = &spec.label {
        scene
            .and_then(|s| s.embedding(label))
            .cloned()
            .ok_or_else(|| MissionError::Task(format!("unknown label {label:?}")))?
    } else {
        return Err(MissionError::Task("no task label or embedding given".into()));
    };
    TaskQuery::new(embedding, spec.text.clone()).map_err(|e| MissionError::Task(e.to_string()))
}

/// Dijkstra distance between two vertices; infinite when disconnected.
pub fn compute_shortest_path(graph: &SparseGraph, start: usize, goal: usize) -> f64 {
    graph.shortest_path_length(start, goal)
}

/// Runs the configured mission with the threshold oracle.
pub fn run_mission(cfg: &MissionConfig) -> Result<MissionOutput, MissionError> {
    cfg.validate()?;
    let scene = Scene::build(&cfg.scene, cfg.seed)?;
    let task = resolve_task(&cfg.task, Some(&scene))?;
    let mut oracle = ThresholdOracle::new(cfg.termination.min_fraction);
    run_mission_with(cfg, &scene, task, &mut oracle)
}

enum Mode {
    Explore,
    Target { path: Vec<Point2<f64>>, look_at: Point2<f64> },
}

struct Mission<'a> {
    cfg: &'a MissionConfig,
    scene: &'a Scene,
    mapper: Mapper,
    kernel: RelevancyKernel,
    r_loc: f64,
    state: RobotState,
    time: f64,
    mode: Mode,
    counts: InvocationCounts,
    resident: Vec<ResidentSample>,
    trajectory: Vec<TrajectoryRecord>,
    plan_trace: Vec<PlanTraceRecord>,
    /// Robot position at the start of every tick plus the final one.
    tick_positions: Vec<Point2<f64>>,
    /// Executed length between consecutive tick positions.
    tick_lengths: Vec<f64>,
    path_length: f64,
    cum_cost: f64,
    audit: SafetyAudit,
    planner_failures: usize,
    exploration_ticks: usize,
    stalled: usize,
    contacts: usize,
    retask: Option<RetaskOutcome>,
}

pub fn run_mission_with(
    cfg: &MissionConfig,
    scene: &Scene,
    task: TaskQuery,
    oracle: &mut dyn TerminationOracle,
) -> Result<MissionOutput, MissionError> {
    cfg.validate()?;
    let r_loc = compute_r_loc(&cfg.collision);
    let cam = scene.camera();
    let r_load = cfg
        .mapping
        .r_load
        .unwrap_or_else(|| r_loc.max(cfg.mapping.r_submap + cam.max_depth));
    let mut store = SubmapStore::new(cfg.mapping.r_submap, r_load);
    if let Some(dir) = &cfg.spill_dir {
        std::fs::create_dir_all(dir)?;
        store = store.with_spill_dir(dir);
    }
    let kernel = RelevancyKernel::new(&scene.codec, &task.embedding)?;
    let mapper = Mapper::new(store, cfg.mapping, scene.codec.clone(), task);
    let state = RobotState::new(cfg.start[0], cfg.start[1], cfg.start[2]);
    info!("mission start at ({:.2}, {:.2}); R_loc = {r_loc:.3} m, r_load = {r_load:.2} m", state.x, state.y);

    let mut m = Mission {
        cfg,
        scene,
        mapper,
        kernel,
        r_loc,
        state,
        time: 0.0,
        mode: Mode::Explore,
        counts: InvocationCounts::default(),
        resident: Vec::new(),
        trajectory: Vec::new(),
        plan_trace: Vec::new(),
        tick_positions: vec![state.position()],
        tick_lengths: Vec::new(),
        path_length: 0.0,
        cum_cost: 0.0,
        audit: SafetyAudit {
            eta: cfg.collision.eta,
            states_checked: 0,
            max_probability: 0.0,
            violations: 0,
        },
        planner_failures: 0,
        exploration_ticks: 0,
        stalled: 0,
        contacts: 0,
        retask: None,
    };

    let (verdict, reason, termination) = m.run(oracle)?;
    let sp = m.shortest_path()?;
    let pl = m.path_length;
    let ratio = if pl > 0.0 { sp / pl } else { 1.0 };
    let target_distance = cfg
        .task
        .label
        .as_deref()
        .filter(|_| cfg.task.embedding.is_none())
        .and_then(|l| scene.distance_to_label(m.state.x, m.state.y, l));
    let report = MissionReport {
        verdict,
        reason,
        termination_step: termination.map(|t| t.0),
        termination_time: termination.map(|t| t.1),
        path_length: pl,
        shortest_path: sp,
        competitive_ratio: ratio,
        final_state: m.state,
        target_distance,
        r_loc,
        r_load,
        counts: m.counts,
        resident: m.resident,
        safety: m.audit,
        planner_failures: m.planner_failures,
        exploration_ticks: m.exploration_ticks,
        ground_truth_contacts: m.contacts,
        retask: m.retask,
    };
    info!(
        "mission {:?}: {} (PL {:.2} m, SP {:.2} m, ratio {:.3})",
        report.verdict, report.reason, pl, sp, ratio
    );
    Ok(MissionOutput {
        report,
        trajectory: m.trajectory,
        plan_trace: m.plan_trace,
        store: m.mapper.store,
    })
}

type Termination = Option<(usize, f64)>;

impl Mission<'_> {
    fn run(&mut self, oracle: &mut dyn TerminationOracle) -> Result<(Verdict, String, Termination), MissionError> {
        let rates = self.cfg.rates;
        let limits = self.cfg.exploration;
        let (mut k, mut j) = (0usize, 0usize);
        loop {
            let t_map = k as f64 / rates.map_hz;
            let t_cont = j as f64 / rates.continuous_hz;
            if t_map <= t_cont {
                self.time = t_map;
                if self.map_iteration(k, oracle)? {
                    let msg = format!("task completed at map iteration {k}");
                    return Ok((Verdict::Success, msg, Some((k, t_map))));
                }
                k += 1;
                continue;
            }
            if j >= limits.max_ticks {
                return Ok((Verdict::Failure, format!("tick budget of {} exhausted", limits.max_ticks), None));
            }
            if self.path_length >= limits.max_path_length {
                let msg = format!("exploration budget of {} m exhausted", limits.max_path_length);
                return Ok((Verdict::Failure, msg, None));
            }
            if self.stalled >= limits.max_stalled_ticks {
                let msg = format!("no feasible motion for {} consecutive ticks", self.stalled);
                return Ok((Verdict::Failure, msg, None));
            }
            self.time = t_cont;
            self.continuous_tick()?;
            j += 1;
        }
    }

    fn robot_pose(&self) -> crate::geometry::Pose {
        planar_pose(self.state.x, self.state.y, 0.0, self.state.theta)
    }

    /// Returns whether the task is complete.
    fn map_iteration(&mut self, k: usize, oracle: &mut dyn TerminationOracle) -> Result<bool, MissionError> {
        self.counts.map += 1;
        let cam_pose = self.scene.camera_pose(self.state.x, self.state.y, self.state.theta);
        let frame = self.scene.capture(&cam_pose);
        let robot_pose = self.robot_pose();
        self.mapper.ingest(&frame, self.scene.camera(), &robot_pose)?;
        self.mapper.store.refresh_loaded(&position(&robot_pose))?;
        let store = &self.mapper.store;
        self.resident.push(ResidentSample {
            time: self.time,
            resident: store.resident_count(),
            global: store.global_count(),
            loaded_submaps: store.submaps().filter(|s| s.loaded).count(),
            submaps: store.len(),
        });

        if let Some(rt) = &self.cfg.retask {
            if rt.at_map_iteration == k {
                let task = resolve_task(&rt.task, Some(self.scene))?;
                let before = self.mapper.best_object_utility();
                self.kernel = RelevancyKernel::new(&self.mapper.codec, &task.embedding)?;
                let unchanged = self.mapper.retask(task)?;
                self.retask = Some(RetaskOutcome {
                    map_iteration: k,
                    structure_unchanged: unchanged,
                    best_utility_before: before,
                    best_utility_after: self.mapper.best_object_utility(),
                });
            }
        }

        let relevancy = masked_relevancy(&frame, self.scene.camera(), &self.kernel);
        let stats = relevancy_stats(&relevancy, self.cfg.termination.threshold);
        if stats.max > self.cfg.termination.threshold && oracle.decide(k, stats) {
            return Ok(true);
        }

        if k.is_multiple_of(self.cfg.rates.discrete_every_n_map_iters) {
            self.discrete_plan(k)?;
        }
        Ok(false)
    }

    fn discrete_plan(&mut self, k: usize) -> Result<(), MissionError> {
        self.counts.discrete += 1;
        let pc = self.cfg.planner;
        let store = &self.mapper.store;
        let high = build_high_level(store, pc.d_wire);
        if high.is_empty() || self.mapper.best_object_utility() < pc.min_object_utility {
            self.mode = Mode::Explore;
            return Ok(());
        }
        let robot = self.state.position();
        let planar = |p: &Point3<f64>| Point2::new(p.x, p.y);
        let start = (0..high.len())
            .min_by(|&a, &b| {
                let da = (planar(&high.vertices[a].position) - robot).norm();
                let db = (planar(&high.vertices[b].position) - robot).norm();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap();
        let budget = pc.budget.unwrap_or_else(|| default_budget(&high).max(pc.min_budget));
        let high_path = plan_budgeted(&high, start, budget).map_err(|e| MissionError::Config(e.to_string()))?;
        let refined = refine_within_partitions(
            store,
            &high,
            &high_path,
            Point3::new(robot.x, robot.y, 0.0),
            budget + pc.d_wire,
        );
        for r in plan_records(&refined.graph, &refined.path) {
            self.plan_trace.push(PlanTraceRecord {
                map_iteration: k,
                vertex: r.vertex,
                position: r.position,
                utility: r.utility,
                cum_cost: r.cum_cost,
            });
        }
        let targets: Vec<(Point2<f64>, f64)> = refined.path.vertices[1..]
            .iter()
            .map(|&v| &refined.graph.vertices[v])
            .filter(|v| v.utility >= pc.min_object_utility)
            .map(|v| (planar(&v.position), v.utility))
            .collect();
        self.mode = match targets.iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
            None => Mode::Explore,
            Some(&(look_at, _)) => Mode::Target {
                path: targets.iter().map(|t| t.0).collect(),
                look_at,
            },
        };
        Ok(())
    }

    fn bounds(&self) -> Bounds {
        let b = self.cfg.scene.bounds;
        Bounds {
            min: Point2::new(b[0][0], b[0][1]),
            max: Point2::new(b[1][0], b[1][1]),
        }
    }

    fn continuous_tick(&mut self) -> Result<(), MissionError> {
        self.counts.continuous += 1;
        let checker = CollisionChecker::new(self.mapper.store.local_map(), self.cfg.collision, self.r_loc);
        let traj = match &self.mode {
            Mode::Target { path, look_at } => {
                let robot = self.state.position();
                let h = self.cfg.horizon;
                match select_horizon_goal(path, &robot, h.horizon, h.reached_radius) {
                    Some(i) => {
                        let goal = GoalRegion {
                            center: path[i],
                            radius: h.goal_radius,
                        };
                        match plan(&self.state, &goal, &checker, &self.cfg.lattice, Some(&self.bounds())) {
                            Ok(t) => Some(t),
                            Err(e) => {
                                debug!("target plan failed: {e}; exploring this tick");
                                self.planner_failures += 1;
                                self.explore(&checker)
                            }
                        }
                    }
                    None => Some(self.face(look_at, &checker)),
                }
            }
            Mode::Explore => self.explore(&checker),
        };
        match traj {
            Some(t) => {
                self.stalled = if t.primitives.is_empty() { self.stalled + 1 } else { 0 };
                self.execute(&t, &checker);
            }
            None => {
                self.stalled += 1;
                self.execute(&Trajectory::default(), &checker);
            }
        }
        Ok(())
    }

    /// Rotation in place towards `target`, or an empty trajectory when
    /// already facing it or the turn is not free.
    fn face(&self, target: &Point2<f64>, checker: &CollisionChecker) -> Trajectory {
        let lat = &self.cfg.lattice;
        let d = target - self.state.position();
        let err = wrap_angle(d.y.atan2(d.x) - self.state.theta);
        if err.abs() < 1e-3 {
            return Trajectory::default();
        }
        let u = ControlInput {
            v: 0.0,
            omega: (err / lat.dt).clamp(-lat.omega_max, lat.omega_max),
        };
        let prim = integrate_primitive(&self.state, &u, lat.dt, lat.substeps, lat.lambda_t);
        if self.primitive_free(&prim, checker) {
            Trajectory {
                cost: prim.cost,
                primitives: vec![prim],
            }
        } else {
            Trajectory::default()
        }
    }

    fn primitive_free(&self, prim: &MotionPrimitive, checker: &CollisionChecker) -> bool {
        let z = self.cfg.collision.z_rob;
        prim.samples.iter().all(|s| checker.is_free(&s.position3(z)))
    }

    fn segment_free(&self, a: &Point2<f64>, b: &Point2<f64>, checker: &CollisionChecker) -> bool {
        let z = self.cfg.collision.z_rob;
        let n = ((b - a).norm() / 0.25).ceil().max(1.0) as usize;
        (0..=n).all(|i| {
            let p = a + (b - a) * (i as f64 / n as f64);
            checker.is_free(&Point3::new(p.x, p.y, z))
        })
    }

    /// Greedy exploration: head for the free candidate point farthest from
    /// where the robot has already been, penalizing turns.
    fn explore(&mut self, checker: &CollisionChecker) -> Option<Trajectory> {
        self.exploration_ticks += 1;
        let ex = self.cfg.exploration;
        let robot = self.state.position();
        let bounds = self.bounds();
        let mut candidates: Vec<(f64, usize, Point2<f64>)> = Vec::new();
        for i in 0..ex.headings {
            let heading = 2.0 * std::f64::consts::PI * i as f64 / ex.headings as f64;
            let p = robot + nalgebra::Vector2::new(heading.cos(), heading.sin()) * ex.step;
            if !bounds.contains(&p) || !self.segment_free(&robot, &p, checker) {
                continue;
            }
            let novelty = self
                .tick_positions
                .iter()
                .map(|q| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            let turn = wrap_angle(heading - self.state.theta).abs();
            candidates.push((novelty - ex.turn_weight * turn, i, p));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, _, p) in candidates.iter().take(3) {
            let goal = GoalRegion {
                center: *p,
                radius: self.cfg.horizon.goal_radius,
            };
            match plan(&self.state, &goal, checker, &self.cfg.lattice, Some(&bounds)) {
                Ok(t) if !t.primitives.is_empty() => return Some(t),
                Ok(_) => {}
                Err(e) => {
                    debug!("exploration plan failed: {e}");
                    self.planner_failures += 1;
                }
            }
        }
        // Nothing reachable: turn in place to look elsewhere.
        let lat = &self.cfg.lattice;
        let u = ControlInput {
            v: 0.0,
            omega: lat.omega_max,
        };
        let prim = integrate_primitive(&self.state, &u, lat.dt, lat.substeps, lat.lambda_t);
        self.primitive_free(&prim, checker).then(|| Trajectory {
            cost: prim.cost,
            primitives: vec![prim],
        })
    }

    /// Advances the robot along `traj` for one continuous period, auditing
    /// every executed sample against the snapshot used for planning.
    fn execute(&mut self, traj: &Trajectory, checker: &CollisionChecker) {
        let period = 1.0 / self.cfg.rates.continuous_hz;
        let t0 = self.time;
        let mut elapsed = 0.0;
        let mut tick_length = 0.0;
        'outer: for prim in &traj.primitives {
            let n = prim.samples.len();
            for (i, s) in prim.samples.iter().enumerate() {
                let dt = prim.duration * (i + 1) as f64 / n as f64;
                if elapsed + dt > period + 1e-9 {
                    let rest = period - elapsed;
                    if rest > 1e-9 {
                        let end = arc_state(&prim.start, &prim.control, rest);
                        tick_length += self.advance(end, prim, t0 + period, rest, checker);
                    }
                    break 'outer;
                }
                tick_length += self.advance(*s, prim, t0 + elapsed + dt, prim.duration / n as f64, checker);
            }
            elapsed += prim.duration;
            if elapsed >= period - 1e-9 {
                break;
            }
        }
        self.tick_positions.push(self.state.position());
        self.tick_lengths.push(tick_length);
    }

    fn advance(
        &mut self,
        next: RobotState,
        prim: &MotionPrimitive,
        t: f64,
        dt: f64,
        checker: &CollisionChecker,
    ) -> f64 {
        let step = (next.position() - self.state.position()).norm();
        self.path_length += step;
        let u = prim.control;
        self.cum_cost += (self.cfg.lattice.lambda_t + u.v * u.v + u.omega * u.omega) * dt;
        let z = self.cfg.collision.z_rob;
        let p = checker.probability(&next.position3(z));
        self.audit.states_checked += 1;
        self.audit.max_probability = self.audit.max_probability.max(p);
        if p > self.cfg.collision.eta {
            warn!("executed state ({:.2}, {:.2}) has collision probability {p:.3e}", next.x, next.y);
            self.audit.violations += 1;
        }
        if self.scene.robot_collides(next.x, next.y, z, self.cfg.robot_radius) {
            self.contacts += 1;
        }
        self.state = next;
        self.trajectory.push(TrajectoryRecord {
            t,
            x: next.x,
            y: next.y,
            theta: next.theta,
            v: u.v,
            omega: u.omega,
            cum_cost: self.cum_cost,
        });
        step
    }

    /// Shortest start-to-end distance on a graph of tick positions and
    /// object vantage points, wired by collision-free segments of the final
    /// map. Consecutive tick positions are joined by their executed length,
    /// so the executed path is always part of the graph.
    fn shortest_path(&self) -> Result<f64, MissionError> {
        let store = &self.mapper.store;
        let world = store.export_world()?;
        let checker = CollisionChecker::new(world, self.cfg.collision, self.r_loc);
        let vertex = |p: Point2<f64>| Vertex {
            position: Point3::new(p.x, p.y, 0.0),
            utility: 0.0,
            partition: 0,
        };
        let mut vertices: Vec<Vertex> = self.tick_positions.iter().map(|&p| vertex(p)).collect();
        let n_ticks = vertices.len();
        for s in store.submaps() {
            let Some(h) = &s.hierarchy else { continue };
            for leaf in h.leaves() {
                let c = s.anchor * leaf.centroid;
                vertices.push(vertex(Point2::new(c.x, c.y)));
            }
        }
        let mut graph = SparseGraph::new(vertices);
        for i in 0..n_ticks - 1 {
            graph.add_edge(i, i + 1, self.tick_lengths[i]);
        }
        let planar: Vec<Point2<f64>> = graph
            .vertices
            .iter()
            .map(|v| Point2::new(v.position.x, v.position.y))
            .collect();
        let wire = self.cfg.planner.sp_wire;
        for i in 0..planar.len() {
            for j in i + 1..planar.len() {
                if j == i + 1 && j < n_ticks {
                    continue;
                }
                let d = (planar[j] - planar[i]).norm();
                if d <= wire && self.segment_free(&planar[i], &planar[j], &checker) {
                    graph.add_edge(i, j, d);
                }
            }
        }
        Ok(compute_shortest_path(&graph, 0, n_ticks - 1))
    }
}

/// Outcome of replaying a recorded dataset through the mapper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub frames: usize,
    pub submaps: usize,
    pub global_count: usize,
    pub resident_count: usize,
    /// `(submap id, root utility)` in id order.
    pub submap_utilities: Vec<(u64, f64)>,
}

/// Feeds every frame of a dataset to the mapper, anchoring submaps at the
/// recorded camera poses.
pub fn replay_dataset(
    cfg: &MissionConfig,
    dir: &Path,
    task: TaskQuery,
) -> Result<(SubmapStore, ReplaySummary), MissionError> {
    let ds = Dataset::open(dir)?;
    let r_loc = compute_r_loc(&cfg.collision);
    let r_load = cfg
        .mapping
        .r_load
        .unwrap_or_else(|| r_loc.max(cfg.mapping.r_submap + ds.meta.camera.max_depth));
    let store = SubmapStore::new(cfg.mapping.r_submap, r_load);
    let mut mapper = Mapper::new(store, cfg.mapping, ds.basis.clone(), task);
    for i in 0..ds.len() {
        let frame = ds.frame(i)?;
        let pose = frame.pose;
        mapper.ingest(&frame, &ds.meta.camera, &pose)?;
    }
    let store = mapper.store;
    let summary = ReplaySummary {
        frames: ds.len(),
        submaps: store.len(),
        global_count: store.global_count(),
        resident_count: store.resident_count(),
        submap_utilities: store
            .submaps()
            .map(|s| (s.id, s.hierarchy.as_ref().map_or(0.0, |h| h.utility)))
            .collect(),
    };
    Ok((store, summary))
}

/// Convenience for tests and tools: the task embedding of a scene label.
pub fn label_task(scene: &Scene, label: &str) -> Result<TaskQuery, MissionError> {
    let spec = TaskSpec {
        label: Some(label.to_string()),
        ..TaskSpec::default()
    };
    resolve_task(&spec, Some(scene))
}
