//! Mission pipeline: per-window geometric planning, smoothing, and
//! closed-loop LQR + safety-filter execution on the nonlinear simulator.
//! Each window plans a path from the current position toward a subgoal a
//! window's travel along the line to the goal, converts it to a reference
//! trajectory of exactly `horizon` samples, runs the safety layer for every
//! step, and repeats from wherever the vehicle actually ended up, until the
//! goal region is reached or the window budget runs out.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::desired_input;
use crate::dynamics::{self, state_to_chart, ChartVector, Disturbance, State};
use crate::environment::Environment;
use crate::planner::{
    self, plan_detailed, PlanError, PlannerParams, Trajectory, TrajectorySample,
};
use crate::safety_filter::{filter, FilterContext};
use crate::QuadrotorParams;

/// Mission-level configuration (see the scenario file schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    /// Receding horizon T, in control steps.
    pub horizon: usize,
    /// Controller frequency in Hz; the simulation advances at 1/frequency.
    pub control_frequency: f64,
    pub goal_region_radius: f64,
    pub max_windows: usize,
    /// Reference cruise speed for trajectory time parameterization.
    pub cruise_speed: f64,
    /// Uniform bound on the additive state-derivative disturbance.
    #[serde(default)]
    pub disturbance_bound: f64,
}

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("mission config invalid: {0}")]
    BadConfig(&'static str),
    #[error("start position is not collision-free")]
    StartNotFree,
    #[error("goal position is not collision-free")]
    GoalNotFree,
    #[error("start state violates the constraint set")]
    StartOutsideConstraints,
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        if self.horizon < 1 {
            return Err(MissionError::BadConfig("horizon must be >= 1"));
        }
        if !(self.control_frequency > 0.0) {
            return Err(MissionError::BadConfig("control_frequency must be positive"));
        }
        if !(self.goal_region_radius > 0.0) {
            return Err(MissionError::BadConfig("goal_region_radius must be positive"));
        }
        if self.max_windows < 1 {
            return Err(MissionError::BadConfig("max_windows must be >= 1"));
        }
        if !(self.cruise_speed > 0.0) {
            return Err(MissionError::BadConfig("cruise_speed must be positive"));
        }
        if !(self.disturbance_bound >= 0.0) {
            return Err(MissionError::BadConfig("disturbance_bound must be >= 0"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_frequency
    }

    pub fn start_vec(&self) -> Vector3<f64> {
        Vector3::from(self.start)
    }

    pub fn goal_vec(&self) -> Vector3<f64> {
        Vector3::from(self.goal)
    }
}

/// One control step of the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub window: usize,
    /// Chart state at the moment the inputs were computed.
    pub state: [f64; 12],
    pub u_des: [f64; 4],
    pub u_safe: [f64; 4],
    pub intervened: bool,
    pub fallback: bool,
    pub qp_iterations: usize,
    /// Filter deviation objective; NaN on fallback, 0 when the desired
    /// input certified as safe without a QP solve.
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// A chart dimension left the constraint box.
    StateBounds { dim: usize },
    /// The executed position collided with the environment.
    Collision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub time: f64,
    pub kind: ViolationKind,
    /// Worst violation magnitude (box excess in the dimension's unit).
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Intervention {
    pub step: usize,
    pub u_des: [f64; 4],
    pub u_safe: [f64; 4],
}

/// Everything a mission run produces: the executed trajectory, per-window
/// references, the intervention and fallback records, and the violation
/// ledger (expected empty when the filter is on).
#[derive(Debug, Clone)]
pub struct MissionResult {
    pub config: MissionConfig,
    pub filter_enabled: bool,
    /// Time-stamped executed chart states, `x(0)` through the final state.
    pub executed: Vec<(f64, ChartVector)>,
    pub records: Vec<StepRecord>,
    pub planned_segments: Vec<Trajectory>,
    pub interventions: Vec<Intervention>,
    pub fallback_steps: Vec<usize>,
    pub reached_goal: bool,
    pub constraint_violations: Vec<Violation>,
    /// Present when the mission stopped early (planner failure).
    pub aborted: Option<String>,
    pub windows_executed: usize,
}

impl MissionResult {
    pub fn final_position(&self) -> Vector3<f64> {
        let xi = self.executed.last().expect("at least the initial state").1;
        Vector3::new(xi[0], xi[1], xi[2])
    }

    pub fn goal_error(&self) -> f64 {
        (self.final_position() - self.config.goal_vec()).norm()
    }

    pub fn executed_path_length(&self) -> f64 {
        self.executed
            .windows(2)
            .map(|w| {
                let a = &w[0].1;
                let b = &w[1].1;
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
            })
            .sum()
    }

    /// (min, max) of the given chart dimension over the executed states.
    pub fn chart_extrema(&self, dim: usize) -> (f64, f64) {
        self.executed.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), (_, xi)| (lo.min(xi[dim]), hi.max(xi[dim])),
        )
    }
}

/// Pick the window subgoal: the point a window's travel along the straight
/// line toward the goal, projected into free space by rejection sampling
/// within 0.2 m when needed.
fn select_subgoal(
    env: &Environment,
    position: &Vector3<f64>,
    goal: &Vector3<f64>,
    cruise_speed: f64,
    window_duration: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vector3<f64>> {
    let to_goal = goal - position;
    let dist = to_goal.norm();
    if dist <= 1e-12 {
        return Some(*goal);
    }
    let fraction = ((window_duration * cruise_speed) / dist).min(1.0);
    let candidate = position + to_goal * fraction;
    if env.is_free(&candidate) {
        return Some(candidate);
    }
    for _ in 0..200 {
        let offset = Vector3::from_fn(|_, _| rng.gen_range(-0.2..=0.2));
        let sample = candidate + offset;
        if env.is_free(&sample) {
            return Some(sample);
        }
    }
    None
}

/// Reference window of exactly `horizon` samples: the head of the smoothed
/// trajectory, extended by holding the terminal sample when shorter.
fn window_reference(traj: &Trajectory, horizon: usize) -> Vec<TrajectorySample> {
    let mut samples: Vec<TrajectorySample> = traj.samples.iter().take(horizon).copied().collect();
    let mut hold = *samples.last().expect("trajectory has at least one sample");
    hold.velocity = Vector3::zeros();
    while samples.len() < horizon {
        samples.push(hold);
    }
    samples
}

fn plan_window(
    env: &Environment,
    start: &Vector3<f64>,
    subgoal: &Vector3<f64>,
    params: &PlannerParams,
    window: usize,
    mission_seed: u64,
) -> Result<planner::PlanReport, PlanError> {
    let mut window_params = params.clone();
    window_params.rng_seed = params
        .rng_seed
        .wrapping_add(mission_seed)
        .wrapping_add((window as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    match plan_detailed(env, start, subgoal, &window_params) {
        Ok(report) => Ok(report),
        Err(PlanError::NoPathFound { .. }) => {
            window_params.max_iterations *= 2;
            plan_detailed(env, start, subgoal, &window_params)
        }
        Err(e) => Err(e),
    }
}

/// Execute the full mission loop. Planner failure in a window is retried
/// once with doubled iterations and then aborts the mission with a partial
/// result; filter infeasibility never aborts (the backup law flies on).
pub fn run_mission(
    env: &Environment,
    cfg: &MissionConfig,
    params: &QuadrotorParams,
    planner_params: &PlannerParams,
    ctx: &FilterContext,
    filter_enabled: bool,
    rng_seed: u64,
) -> Result<MissionResult, MissionError> {
    cfg.validate()?;
    let start = cfg.start_vec();
    let goal = cfg.goal_vec();
    if !env.is_free(&start) {
        return Err(MissionError::StartNotFree);
    }
    if !env.is_free(&goal) {
        return Err(MissionError::GoalNotFree);
    }
    let mut state = State::at_rest(start);
    if !ctx.constraint_set.contains(&state_to_chart(&state), 1e-12) {
        return Err(MissionError::StartOutsideConstraints);
    }

    let dt = cfg.dt();
    let horizon = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut result = MissionResult {
        config: cfg.clone(),
        filter_enabled,
        executed: vec![(0.0, state_to_chart(&state))],
        records: Vec::new(),
        planned_segments: Vec::new(),
        interventions: Vec::new(),
        fallback_steps: Vec::new(),
        reached_goal: false,
        constraint_violations: Vec::new(),
        aborted: None,
        windows_executed: 0,
    };

    let mut step_index = 0usize;
    for window in 0..cfg.max_windows {
        if (state.position - goal).norm() <= cfg.goal_region_radius {
            result.reached_goal = true;
            break;
        }

        let Some(subgoal) = select_subgoal(
            env,
            &state.position,
            &goal,
            cfg.cruise_speed,
            horizon as f64 * dt,
            &mut rng,
        ) else {
            result.aborted = Some(format!("window {window}: no free subgoal near the line to goal"));
            break;
        };

        let report = match plan_window(env, &state.position, &subgoal, planner_params, window, rng_seed)
        {
            Ok(r) => r,
            Err(e) => {
                result.aborted = Some(format!("window {window}: {e}"));
                break;
            }
        };

        let traj = match planner::smooth(&report.path, cfg.cruise_speed, dt, env) {
            Ok(t) => t,
            Err(_) => planner::piecewise_linear(&report.path, cfg.cruise_speed, dt),
        };
        let reference = window_reference(&traj, horizon);
        result.planned_segments.push(Trajectory {
            dt,
            samples: reference.clone(),
        });

        for k in 0..horizon {
            let u_des = desired_input(&ctx.design, &state, &reference[k]);
            let (u_safe, diag) = if filter_enabled {
                filter(ctx, &state, &u_des, &reference[k..])
            } else {
                (ctx.input_set.clamp(&u_des), Default::default())
            };

            let time = step_index as f64 * dt;
            result.records.push(StepRecord {
                step: step_index,
                time,
                window,
                state: state_to_chart(&state).into(),
                u_des: u_des.thrusts.into(),
                u_safe: u_safe.thrusts.into(),
                intervened: diag.intervened,
                fallback: diag.fallback,
                qp_iterations: diag.qp_iterations,
                objective: diag.objective,
            });
            if diag.intervened {
                result.interventions.push(Intervention {
                    step: step_index,
                    u_des: u_des.thrusts.into(),
                    u_safe: u_safe.thrusts.into(),
                });
            }
            if diag.fallback {
                result.fallback_steps.push(step_index);
            }

            let disturbance = (cfg.disturbance_bound > 0.0)
                .then(|| Disturbance::sample_box(cfg.disturbance_bound, &mut rng));
            state = dynamics::step(&state, &u_safe, params, dt, disturbance.as_ref());
            step_index += 1;
            let time_next = step_index as f64 * dt;
            let xi = state_to_chart(&state);
            result.executed.push((time_next, xi));

            // Every executed state is checked against the constraint set
            // and the environment.
            for dim in 0..12 {
                let excess = (ctx.constraint_set.lower[dim] - xi[dim])
                    .max(xi[dim] - ctx.constraint_set.upper[dim]);
                if excess > 0.0 {
                    result.constraint_violations.push(Violation {
                        step: step_index,
                        time: time_next,
                        kind: ViolationKind::StateBounds { dim },
                        magnitude: excess,
                    });
                }
            }
            if !env.is_free(&state.position) {
                result.constraint_violations.push(Violation {
                    step: step_index,
                    time: time_next,
                    kind: ViolationKind::Collision,
                    magnitude: 0.0,
                });
            }
        }
        result.windows_executed = window + 1;
    }

    if !result.reached_goal && result.aborted.is_none() {
        result.reached_goal = (state.position - goal).norm() <= cfg.goal_region_radius;
    }
    Ok(result)
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("runs come from different scenarios and cannot be compared")]
    MismatchedConfigs,
}

/// Aggregate comparison of two runs of the same scenario (typically
/// filter-on vs filter-off).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub filter_enabled: bool,
    pub reached_goal: bool,
    pub steps: usize,
    pub violation_count: usize,
    pub collision_count: usize,
    pub intervention_count: usize,
    pub intervention_density: f64,
    pub fallback_count: usize,
    pub goal_error: f64,
    pub path_length: f64,
    pub roll_range: (f64, f64),
    pub pitch_range: (f64, f64),
    pub yaw_range: (f64, f64),
}

impl RunSummary {
    pub fn of(result: &MissionResult) -> Self {
        let steps = result.records.len();
        let collision_count = result
            .constraint_violations
            .iter()
            .filter(|v| v.kind == ViolationKind::Collision)
            .count();
        Self {
            filter_enabled: result.filter_enabled,
            reached_goal: result.reached_goal,
            steps,
            violation_count: result.constraint_violations.len(),
            collision_count,
            intervention_count: result.interventions.len(),
            intervention_density: if steps > 0 {
                result.interventions.len() as f64 / steps as f64
            } else {
                0.0
            },
            fallback_count: result.fallback_steps.len(),
            goal_error: result.goal_error(),
            path_length: result.executed_path_length(),
            roll_range: result.chart_extrema(6),
            pitch_range: result.chart_extrema(7),
            yaw_range: result.chart_extrema(8),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub a: RunSummary,
    pub b: RunSummary,
    pub violation_delta: i64,
    pub intervention_delta: i64,
    pub goal_error_delta: f64,
}

/// Compare two mission results from the same scenario configuration.
pub fn compare_runs(a: &MissionResult, b: &MissionResult) -> Result<ComparisonSummary, CompareError> {
    if a.config != b.config {
        return Err(CompareError::MismatchedConfigs);
    }
    let sa = RunSummary::of(a);
    let sb = RunSummary::of(b);
    Ok(ComparisonSummary {
        violation_delta: sb.violation_count as i64 - sa.violation_count as i64,
        intervention_delta: sb.intervention_count as i64 - sa.intervention_count as i64,
        goal_error_delta: sb.goal_error - sa.goal_error,
        a: sa,
        b: sb,
    })
}
