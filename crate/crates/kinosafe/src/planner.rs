//! Geometric RRT* over 3D positions and conversion of the resulting
//! waypoint path into a smooth, time-parameterized reference trajectory.
//!
//! The planner is purely geometric; dynamic feasibility is owned by the
//! tracking controller and the safety filter downstream.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Environment;

/// RRT* parameters. `gamma` scales the shrinking rewiring radius
/// `r(n) = min(steer_step, gamma * (ln n / n)^(1/3))` for the 3D position
/// space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerParams {
    pub max_iterations: usize,
    pub goal_tolerance: f64,
    pub steer_step: f64,
    pub gamma: f64,
    pub goal_bias: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Error)]
pub enum PlannerConfigError {
    #[error("max_iterations must be >= 1")]
    BadIterations,
    #[error("goal_tolerance, steer_step and gamma must be positive")]
    BadGeometry,
    #[error("goal_bias must lie in [0, 1)")]
    BadGoalBias,
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlannerConfigError> {
        if self.max_iterations < 1 {
            return Err(PlannerConfigError::BadIterations);
        }
        if !(self.goal_tolerance > 0.0 && self.steer_step > 0.0 && self.gamma > 0.0) {
            return Err(PlannerConfigError::BadGeometry);
        }
        if !(0.0 <= self.goal_bias && self.goal_bias < 1.0) {
            return Err(PlannerConfigError::BadGoalBias);
        }
        Ok(())
    }
}

/// Collision-free waypoint path from start to (within tolerance of) goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Vector3<f64>>,
}

impl Path {
    /// Sum of Euclidean segment lengths.
    pub fn cost(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }
}

/// Time-indexed reference: position, velocity and yaw at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.dt * (self.samples.len().saturating_sub(1)) as f64
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planning query: {0}")]
    InvalidQuery(&'static str),
    #[error("no path found within {iterations} iterations")]
    NoPathFound { iterations: usize },
}

#[derive(Debug, Error)]
pub enum SmoothError {
    #[error("smoothed sample {index} is in collision; fall back to piecewise-linear")]
    SampleInCollision { index: usize },
    #[error("cruise_speed and dt must be positive")]
    BadParameters,
}

/// Tree diagnostics returned alongside the path for validation and logging.
#[derive(Debug, Clone)]
pub struct PlanReport {
    pub path: Path,
    pub cost: f64,
    /// `(iteration, best cost)` recorded whenever the best goal-reaching
    /// cost improved; non-increasing in iteration by construction.
    pub best_cost_history: Vec<(usize, f64)>,
    /// Every edge of the final tree (parent position, child position).
    pub tree_edges: Vec<(Vector3<f64>, Vector3<f64>)>,
}

struct Node {
    position: Vector3<f64>,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn new(root: Vector3<f64>) -> Self {
        Self {
            nodes: vec![Node {
                position: root,
                parent: None,
                cost: 0.0,
                children: Vec::new(),
            }],
        }
    }

    fn nearest(&self, p: &Vector3<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.position - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn neighbors_within(&self, p: &Vector3<f64>, radius: f64) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| (n.position - p).norm() <= radius)
            .map(|(i, _)| i)
            .collect()
    }

    fn insert(&mut self, position: Vector3<f64>, parent: usize, cost: f64) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            position,
            parent: Some(parent),
            cost,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(idx);
        idx
    }

    /// Re-root `node` under `new_parent` and push the cost change down
    /// through its subtree.
    fn rewire(&mut self, node: usize, new_parent: usize, new_cost: f64) {
        let old_parent = self.nodes[node].parent.expect("root is never rewired");
        self.nodes[old_parent].children.retain(|&c| c != node);
        self.nodes[new_parent].children.push(node);
        self.nodes[node].parent = Some(new_parent);
        let delta = new_cost - self.nodes[node].cost;
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost += delta;
            stack.extend_from_slice(&self.nodes[i].children);
        }
    }

    fn path_to(&self, node: usize) -> Vec<Vector3<f64>> {
        let mut rev = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            rev.push(self.nodes[i].position);
            cur = self.nodes[i].parent;
        }
        rev.reverse();
        rev
    }
}

fn best_goal_candidate(tree: &Tree, goal_nodes: &[usize]) -> Option<(usize, f64)> {
    let mut cand: Option<(usize, f64)> = None;
    for &g in goal_nodes {
        let c = tree.nodes[g].cost;
        if cand.map_or(true, |(_, bc)| c < bc) {
            cand = Some((g, c));
        }
    }
    cand
}

/// RRT* (sample, nearest, steer, choose-parent, rewire) over positions.
/// Deterministic for a fixed seed; ties in nearest/choose-parent break
/// toward the lowest node index.
pub fn plan(
    env: &Environment,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    params: &PlannerParams,
) -> Result<Path, PlanError> {
    plan_detailed(env, start, goal, params).map(|r| r.path)
}

/// As [`plan`], additionally returning tree edges and the best-cost trace.
pub fn plan_detailed(
    env: &Environment,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    params: &PlannerParams,
) -> Result<PlanReport, PlanError> {
    if !env.is_free(start) {
        return Err(PlanError::InvalidQuery("start position is not free"));
    }
    if !env.is_free(goal) {
        return Err(PlanError::InvalidQuery("goal position is not free"));
    }
    let resolution = env.default_resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut tree = Tree::new(*start);

    let mut goal_nodes: Vec<usize> = Vec::new();
    if (start - goal).norm() <= params.goal_tolerance {
        goal_nodes.push(0);
    }
    let mut history: Vec<(usize, f64)> = Vec::new();
    if let Some((_, c)) = best_goal_candidate(&tree, &goal_nodes) {
        history.push((0, c));
    }

    for iter in 1..=params.max_iterations {
        let sample = if rng.gen_range(0.0..1.0) < params.goal_bias {
            *goal
        } else {
            Vector3::new(
                rng.gen_range(env.workspace_min[0]..env.workspace_max[0]),
                rng.gen_range(env.workspace_min[1]..env.workspace_max[1]),
                rng.gen_range(env.workspace_min[2]..env.workspace_max[2]),
            )
        };

        let nearest = tree.nearest(&sample);
        let nearest_pos = tree.nodes[nearest].position;
        let to_sample = sample - nearest_pos;
        let dist = to_sample.norm();
        if dist <= f64::EPSILON {
            continue;
        }
        let new_pos = if dist <= params.steer_step {
            sample
        } else {
            nearest_pos + to_sample * (params.steer_step / dist)
        };
        if !env.is_free(&new_pos) {
            continue;
        }

        let n = tree.nodes.len() as f64;
        let radius = params
            .steer_step
            .min(params.gamma * (n.ln().max(0.0) / n).cbrt());
        let mut neighbors = tree.neighbors_within(&new_pos, radius);
        if neighbors.is_empty() {
            neighbors.push(nearest);
        }

        // Choose parent: lowest cost-through connection, ties to the lowest
        // index (neighbors are already in index order).
        let mut parent: Option<(usize, f64)> = None;
        for &cand in &neighbors {
            let c = tree.nodes[cand].cost + (tree.nodes[cand].position - new_pos).norm();
            if parent.map_or(true, |(_, pc)| c < pc)
                && env.segment_free(&tree.nodes[cand].position, &new_pos, resolution)
            {
                parent = Some((cand, c));
            }
        }
        let Some((parent, new_cost)) = parent else {
            continue;
        };
        let new_idx = tree.insert(new_pos, parent, new_cost);

        // Rewire neighbors through the new node where it shortens them.
        for &cand in &neighbors {
            if cand == parent {
                continue;
            }
            let through = new_cost + (tree.nodes[cand].position - new_pos).norm();
            if through < tree.nodes[cand].cost
                && env.segment_free(&new_pos, &tree.nodes[cand].position, resolution)
            {
                tree.rewire(cand, new_idx, through);
            }
        }

        if (new_pos - goal).norm() <= params.goal_tolerance {
            goal_nodes.push(new_idx);
        }
        if let Some((_, c)) = best_goal_candidate(&tree, &goal_nodes) {
            if history.last().map_or(true, |&(_, prev)| c < prev - 1e-15) {
                history.push((iter, c));
            }
        }
    }

    match best_goal_candidate(&tree, &goal_nodes) {
        Some((node, cost)) => {
            let path = Path {
                waypoints: tree.path_to(node),
            };
            let tree_edges = tree
                .nodes
                .iter()
                .filter_map(|n| n.parent.map(|p| (tree.nodes[p].position, n.position)))
                .collect();
            Ok(PlanReport {
                path,
                cost,
                best_cost_history: history,
                tree_edges,
            })
        }
        None => Err(PlanError::NoPathFound {
            iterations: params.max_iterations,
        }),
    }
}

/// Time to accelerate from rest to cruise speed in the trapezoidal profile.
const RAMP_TIME: f64 = 1.0;

/// Trapezoidal arclength profile: rest-to-rest, peak speed at most `cruise`.
#[derive(Debug, Clone)]
pub(crate) struct SpeedProfile {
    total_length: f64,
    accel: f64,
    peak: f64,
    t_ramp: f64,
    duration: f64,
}

impl SpeedProfile {
    pub(crate) fn new(total_length: f64, cruise: f64) -> Self {
        let accel = cruise / RAMP_TIME;
        let ramp_dist = 0.5 * cruise * RAMP_TIME;
        if total_length >= 2.0 * ramp_dist {
            SpeedProfile {
                total_length,
                accel,
                peak: cruise,
                t_ramp: RAMP_TIME,
                duration: total_length / cruise + RAMP_TIME,
            }
        } else {
            // Too short to reach cruise: triangular profile.
            let t_ramp = (total_length / accel).sqrt();
            SpeedProfile {
                total_length,
                accel,
                peak: accel * t_ramp,
                t_ramp,
                duration: 2.0 * t_ramp,
            }
        }
    }

    pub(crate) fn duration(&self) -> f64 {
        self.duration
    }

    /// Arclength and speed at time `t`, clamped to the profile.
    pub(crate) fn sample(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 || self.total_length == 0.0 {
            return (0.0, 0.0);
        }
        if t >= self.duration {
            return (self.total_length, 0.0);
        }
        if t < self.t_ramp {
            (0.5 * self.accel * t * t, self.accel * t)
        } else if t <= self.duration - self.t_ramp {
            let ramp_dist = 0.5 * self.accel * self.t_ramp * self.t_ramp;
            (ramp_dist + self.peak * (t - self.t_ramp), self.peak)
        } else {
            let tr = self.duration - t;
            (
                self.total_length - 0.5 * self.accel * tr * tr,
                self.accel * tr,
            )
        }
    }
}

fn dedup_waypoints(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if pts
            .last()
            .map_or(true, |q: &Vector3<f64>| (p - q).norm() > 1e-12)
        {
            pts.push(*p);
        }
    }
    if pts.is_empty() {
        pts.push(points[0]);
    }
    pts
}

fn segment_index(knots: &[f64], s: f64, n_points: usize) -> usize {
    match knots.binary_search_by(|k| k.partial_cmp(&s).unwrap()) {
        Ok(i) => i.min(n_points - 2),
        Err(i) => i.saturating_sub(1).min(n_points - 2),
    }
}

/// Catmull-Rom style cubic Hermite spline through waypoints, parameterized
/// by cumulative chord length. Reproduces straight lines exactly.
#[derive(Debug, Clone)]
pub(crate) struct ChordalSpline {
    points: Vec<Vector3<f64>>,
    knots: Vec<f64>,
    tangents: Vec<Vector3<f64>>,
}

impl ChordalSpline {
    pub(crate) fn new(points: &[Vector3<f64>]) -> Self {
        let pts = dedup_waypoints(points);
        let mut knots = vec![0.0];
        for w in pts.windows(2) {
            knots.push(knots.last().unwrap() + (w[1] - w[0]).norm());
        }
        let n = pts.len();
        let mut tangents = Vec::with_capacity(n);
        for i in 0..n {
            let t = if n == 1 {
                Vector3::zeros()
            } else if i == 0 {
                (pts[1] - pts[0]) / (knots[1] - knots[0])
            } else if i == n - 1 {
                (pts[n - 1] - pts[n - 2]) / (knots[n - 1] - knots[n - 2])
            } else {
                (pts[i + 1] - pts[i - 1]) / (knots[i + 1] - knots[i - 1])
            };
            tangents.push(t);
        }
        Self {
            points: pts,
            knots,
            tangents,
        }
    }

    pub(crate) fn total_length(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Position and derivative with respect to the arclength parameter `s`.
    pub(crate) fn eval(&self, s: f64) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.points.len();
        if n == 1 {
            return (self.points[0], Vector3::zeros());
        }
        let s = s.clamp(0.0, self.total_length());
        let seg = segment_index(&self.knots, s, n);
        let h = self.knots[seg + 1] - self.knots[seg];
        let u = (s - self.knots[seg]) / h;
        let (p0, p1) = (self.points[seg], self.points[seg + 1]);
        let (m0, m1) = (self.tangents[seg] * h, self.tangents[seg + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        let pos = p0 * (2.0 * u3 - 3.0 * u2 + 1.0)
            + m0 * (u3 - 2.0 * u2 + u)
            + p1 * (-2.0 * u3 + 3.0 * u2)
            + m1 * (u3 - u2);
        let dpos_du = p0 * (6.0 * u2 - 6.0 * u)
            + m0 * (3.0 * u2 - 4.0 * u + 1.0)
            + p1 * (-6.0 * u2 + 6.0 * u)
            + m1 * (3.0 * u2 - 2.0 * u);
        (pos, dpos_du / h)
    }
}

struct PolylineEval {
    points: Vec<Vector3<f64>>,
    knots: Vec<f64>,
}

impl PolylineEval {
    fn new(points: &[Vector3<f64>]) -> Self {
        let pts = dedup_waypoints(points);
        let mut knots = vec![0.0];
        for w in pts.windows(2) {
            knots.push(knots.last().unwrap() + (w[1] - w[0]).norm());
        }
        Self { points: pts, knots }
    }

    fn total_length(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn eval(&self, s: f64) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.points.len();
        if n == 1 {
            return (self.points[0], Vector3::zeros());
        }
        let s = s.clamp(0.0, self.total_length());
        let seg = segment_index(&self.knots, s, n);
        let h = self.knots[seg + 1] - self.knots[seg];
        let dir = (self.points[seg + 1] - self.points[seg]) / h;
        (self.points[seg] + dir * (s - self.knots[seg]), dir)
    }
}

fn sample_timed<F>(position_of: F, profile: &SpeedProfile, dt: f64) -> Vec<TrajectorySample>
where
    F: Fn(f64) -> (Vector3<f64>, Vector3<f64>),
{
    let steps = (profile.duration() / dt).ceil() as usize;
    (0..=steps)
        .map(|k| {
            let (s, speed) = profile.sample(k as f64 * dt);
            let (position, dpos_ds) = position_of(s);
            TrajectorySample {
                position,
                velocity: dpos_ds * speed,
                yaw: 0.0,
            }
        })
        .collect()
}

/// Convert a waypoint path to a smooth trajectory: chordal Catmull-Rom
/// through the waypoints, trapezoidal rest-to-rest speed profile capped at
/// `cruise_speed`, resampled at `dt`. Every sample is re-validated against
/// the environment; a collision is reported as an error so the caller can
/// fall back to [`piecewise_linear`].
pub fn smooth(
    path: &Path,
    cruise_speed: f64,
    dt: f64,
    env: &Environment,
) -> Result<Trajectory, SmoothError> {
    if !(cruise_speed > 0.0 && dt > 0.0) {
        return Err(SmoothError::BadParameters);
    }
    let spline = ChordalSpline::new(&path.waypoints);
    let profile = SpeedProfile::new(spline.total_length(), cruise_speed);
    let samples = sample_timed(|s| spline.eval(s), &profile, dt);
    for (index, s) in samples.iter().enumerate() {
        if !env.is_free(&s.position) {
            return Err(SmoothError::SampleInCollision { index });
        }
    }
    Ok(Trajectory { dt, samples })
}

/// Piecewise-linear interpolation of the same waypoints with the same speed
/// profile. Samples lie on the polyline, which the path invariant already
/// certifies collision-free at the checked resolution.
pub fn piecewise_linear(path: &Path, cruise_speed: f64, dt: f64) -> Trajectory {
    assert!(cruise_speed > 0.0 && dt > 0.0);
    let polyline = PolylineEval::new(&path.waypoints);
    let profile = SpeedProfile::new(polyline.total_length(), cruise_speed);
    let samples = sample_timed(|s| polyline.eval(s), &profile, dt);
    Trajectory { dt, samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Aabb;
    use approx::assert_relative_eq;

    fn empty_env() -> Environment {
        Environment {
            workspace_min: [-0.25, -0.5, 0.0],
            workspace_max: [1.25, 0.5, 1.0],
            obstacles: vec![],
            robot_radius: 0.0,
        }
    }

    fn maze_env() -> Environment {
        Environment {
            workspace_min: [-0.5, -0.5, 0.0],
            workspace_max: [2.0, 2.0, 2.0],
            obstacles: vec![],
            robot_radius: 0.0,
        }
    }

    fn default_params(seed: u64) -> PlannerParams {
        PlannerParams {
            max_iterations: 5000,
            goal_tolerance: 0.05,
            steer_step: 0.25,
            gamma: 2.0,
            goal_bias: 0.05,
            rng_seed: seed,
        }
    }

    #[test]
    fn straight_line_within_five_percent() {
        let env = empty_env();
        let start = Vector3::new(0.0, 0.0, 0.5);
        let goal = Vector3::new(1.0, 0.0, 0.5);
        let report = plan_detailed(&env, &start, &goal, &default_params(1)).unwrap();
        assert!(
            report.cost <= 1.05,
            "path cost {} exceeds 1.05 x straight line",
            report.cost
        );
        assert_eq!(report.path.waypoints.first().unwrap(), &start);
        assert!((report.path.waypoints.last().unwrap() - goal).norm() <= 0.05);
    }

    #[test]
    fn goal_equals_start() {
        let env = maze_env();
        let p = Vector3::new(0.5, 0.5, 0.5);
        let params = PlannerParams {
            max_iterations: 10,
            ..default_params(2)
        };
        let path = plan(&env, &p, &p, &params).unwrap();
        assert_eq!(path.waypoints.len(), 1);
        assert_eq!(path.cost(), 0.0);
    }

    #[test]
    fn start_in_obstacle_rejected() {
        let mut env = maze_env();
        env.obstacles.push(Aabb::new([0.4, 0.4, 0.4], [0.6, 0.6, 0.6]));
        let start = Vector3::new(0.5, 0.5, 0.5);
        let goal = Vector3::new(1.5, 1.5, 1.5);
        match plan(&env, &start, &goal, &default_params(3)) {
            Err(PlanError::InvalidQuery(_)) => {}
            other => panic!("expected InvalidQuery, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut env = maze_env();
        env.obstacles.push(Aabb::new([0.8, -0.5, 0.0], [1.0, 1.2, 2.0]));
        let start = Vector3::new(0.2, 0.2, 0.5);
        let goal = Vector3::new(1.6, 0.4, 0.7);
        let params = PlannerParams {
            max_iterations: 2000,
            ..default_params(7)
        };
        let a = plan(&env, &start, &goal, &params).unwrap();
        let b = plan(&env, &start, &goal, &params).unwrap();
        assert_eq!(a.waypoints.len(), b.waypoints.len());
        for (p, q) in a.waypoints.iter().zip(&b.waypoints) {
            assert_eq!(p, q, "paths must be bit-identical");
        }
    }

    #[test]
    fn anytime_cost_non_increasing() {
        let mut env = maze_env();
        env.obstacles.push(Aabb::new([0.6, -0.5, 0.0], [0.8, 1.4, 2.0]));
        let start = Vector3::new(0.0, 0.0, 0.5);
        let goal = Vector3::new(1.5, 0.3, 0.5);
        let mut prev = f64::INFINITY;
        for iters in [1000, 2000, 5000] {
            let params = PlannerParams {
                max_iterations: iters,
                ..default_params(11)
            };
            let report = plan_detailed(&env, &start, &goal, &params).unwrap();
            assert!(
                report.cost <= prev + 1e-12,
                "cost increased from {prev} to {} at {iters} iterations",
                report.cost
            );
            prev = report.cost;
            for w in report.best_cost_history.windows(2) {
                assert!(w[1].1 <= w[0].1);
            }
        }
    }

    #[test]
    fn tree_edges_and_path_segments_are_collision_free() {
        let mut env = maze_env();
        env.robot_radius = 0.06;
        env.obstacles.push(Aabb::new([0.7, -0.5, 0.0], [0.9, 1.3, 2.0]));
        let start = Vector3::new(0.1, 0.1, 0.5);
        let goal = Vector3::new(1.5, 0.5, 0.8);
        let params = PlannerParams {
            max_iterations: 3000,
            ..default_params(13)
        };
        let report = plan_detailed(&env, &start, &goal, &params).unwrap();
        let res = env.default_resolution();
        for (a, b) in &report.tree_edges {
            assert!(env.segment_free(a, b, res));
        }
        for w in report.path.waypoints.windows(2) {
            assert!(env.segment_free(&w[0], &w[1], res));
        }
    }

    #[test]
    fn ramp_endpoints_at_rest() {
        let path = Path {
            waypoints: vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)],
        };
        let env = Environment {
            workspace_min: [-2.0; 3],
            workspace_max: [2.0; 3],
            obstacles: vec![],
            robot_radius: 0.0,
        };
        let traj = smooth(&path, 0.5, 0.02, &env).unwrap();
        assert!(traj.duration() >= 2.0);
        assert_relative_eq!(traj.samples.first().unwrap().velocity.norm(), 0.0);
        assert_relative_eq!(traj.samples.last().unwrap().velocity.norm(), 0.0);
        assert_relative_eq!(
            (traj.samples.last().unwrap().position - Vector3::new(1.0, 0.0, 0.0)).norm(),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn collinear_path_stays_on_line() {
        let path = Path {
            waypoints: vec![
                Vector3::new(0.0, 0.0, 0.5),
                Vector3::new(0.4, 0.4, 0.5),
                Vector3::new(1.0, 1.0, 0.5),
            ],
        };
        let env = Environment {
            workspace_min: [-2.0; 3],
            workspace_max: [2.0; 3],
            obstacles: vec![],
            robot_radius: 0.0,
        };
        let traj = smooth(&path, 0.5, 0.02, &env).unwrap();
        let dir = Vector3::new(1.0, 1.0, 0.0).normalize();
        for s in &traj.samples {
            let along = (s.position - path.waypoints[0]).dot(&dir);
            let off = (s.position - path.waypoints[0]) - dir * along;
            assert!(off.norm() <= 1e-9, "off-line by {}", off.norm());
            assert!((s.position.z - 0.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn sampled_speed_caps_near_cruise() {
        let path = Path {
            waypoints: vec![
                Vector3::new(0.0, 0.0, 0.5),
                Vector3::new(0.5, 0.2, 0.6),
                Vector3::new(0.9, 0.6, 0.5),
                Vector3::new(1.2, 1.0, 0.7),
                Vector3::new(1.6, 1.2, 0.6),
            ],
        };
        let env = Environment {
            workspace_min: [-2.0; 3],
            workspace_max: [3.0; 3],
            obstacles: vec![],
            robot_radius: 0.0,
        };
        let cruise = 0.5;
        let traj = smooth(&path, cruise, 0.001, &env).unwrap();
        let max_speed = traj
            .samples
            .iter()
            .map(|s| s.velocity.norm())
            .fold(0.0, f64::max);
        assert!(
            max_speed <= 1.1 * cruise,
            "max sampled speed {max_speed} above 1.1 x cruise"
        );
    }

    #[test]
    fn velocity_matches_position_derivative() {
        let waypoints = [
            Vector3::new(0.0, 0.0, 0.5),
            Vector3::new(0.5, 0.3, 0.6),
            Vector3::new(1.1, 0.5, 0.4),
        ];
        let spline = ChordalSpline::new(&waypoints);
        let profile = SpeedProfile::new(spline.total_length(), 0.4);
        let h = 1e-7;
        for k in 1..100 {
            let t = profile.duration() * k as f64 / 100.0;
            let (s, speed) = profile.sample(t);
            let (_, dpos_ds) = spline.eval(s);
            let v = dpos_ds * speed;
            let (sp, _) = profile.sample(t + h);
            let (sm, _) = profile.sample(t - h);
            let (pp, _) = spline.eval(sp);
            let (pm, _) = spline.eval(sm);
            let fd = (pp - pm) / (2.0 * h);
            assert!(
                (v - fd).norm() <= 1e-5 * (1.0 + v.norm()),
                "velocity mismatch at t={t}: {v:?} vs {fd:?}"
            );
        }
    }

    #[test]
    fn smoothing_collision_falls_back_to_polyline() {
        // Right-angle turn hugging a wall: the spline swings wide of the
        // corner (peak overshoot ~0.022 above the first leg) into the slab.
        let mut env = maze_env();
        env.obstacles.push(Aabb::new([0.25, 0.51, 0.0], [0.45, 0.6, 1.0]));
        let path = Path {
            waypoints: vec![
                Vector3::new(0.2, 0.5, 0.5),
                Vector3::new(0.5, 0.5, 0.5),
                Vector3::new(0.5, 0.2, 0.5),
            ],
        };
        let res = env.default_resolution();
        for w in path.waypoints.windows(2) {
            assert!(env.segment_free(&w[0], &w[1], res), "test path must be valid");
        }
        match smooth(&path, 0.4, 0.02, &env) {
            Err(SmoothError::SampleInCollision { .. }) => {
                let traj = piecewise_linear(&path, 0.4, 0.02);
                for s in &traj.samples {
                    assert!(env.is_free(&s.position));
                }
            }
            other => panic!("expected the spline to cut the corner, got {other:?}"),
        }
    }

    #[test]
    fn params_validation() {
        let mut p = default_params(0);
        p.goal_bias = 1.0;
        assert!(p.validate().is_err());
        let mut p = default_params(0);
        p.max_iterations = 0;
        assert!(p.validate().is_err());
        assert!(default_params(0).validate().is_ok());
    }
}
