use kinosafe::config::ScenarioConfig;
use kinosafe::controller::desired_input;
use kinosafe::dynamics::{self, state_to_chart, State};
use kinosafe::pipeline::MissionConfig;
use kinosafe::planner::{self, TrajectorySample};
use kinosafe::qp::{solve_qp_warm, QpProblem, QpSettings, QpStatus};
use kinosafe::safety_filter::{build_qp, filter, zero_intervention_certificate};
use nalgebra::{DVector, Vector3};
use std::path::Path;

fn status_of(p: &QpProblem) -> QpStatus {
    solve_qp_warm(p, &QpSettings::default(), None).status
}

fn main() {
    let scenario = ScenarioConfig::from_file(Path::new("scenarios/maze_iv.json")).unwrap();
    let built = scenario.build_components().unwrap();
    let ctx = &built.context;
    let cfg: &MissionConfig = &scenario.mission;
    let env = &scenario.environment;
    let dt = cfg.dt();
    let horizon = cfg.horizon;
    let n_state_rows = {
        // velocity(3)+angles(3) finite dims = 6 per stage
        6 * (horizon - 1)
    };
    let n_input_rows = 4 * horizon;

    let mut state = State::at_rest(cfg.start_vec());
    let goal = cfg.goal_vec();
    let mut diagnosed = 0;
    'outer: for window in 0..cfg.max_windows {
        if (state.position - goal).norm() <= cfg.goal_region_radius { break; }
        let to_goal = goal - state.position;
        let frac = ((horizon as f64 * dt * cfg.cruise_speed) / to_goal.norm()).min(1.0);
        let subgoal = state.position + to_goal * frac;
        let mut pp = scenario.planner.clone();
        pp.rng_seed = scenario.planner.rng_seed.wrapping_add(scenario.seeds.mission)
            .wrapping_add((window as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let Ok(path) = planner::plan(env, &state.position, &subgoal, &pp) else { break };
        let traj = planner::smooth(&path, cfg.cruise_speed, dt, env)
            .unwrap_or_else(|_| planner::piecewise_linear(&path, cfg.cruise_speed, dt));
        let mut reference: Vec<TrajectorySample> = traj.samples.iter().take(horizon).copied().collect();
        let mut hold = *reference.last().unwrap();
        hold.velocity = Vector3::zeros();
        while reference.len() < horizon { reference.push(hold); }

        for k in 0..horizon {
            let u_des = desired_input(&ctx.design, &state, &reference[k]);
            let (u_safe, diag) = filter(ctx, &state, &u_des, &reference[k..]);
            if diag.fallback && diagnosed < 8 {
                diagnosed += 1;
                let xi = state_to_chart(&state);
                let center = ctx.terminal_center(&reference[k..], &state);
                let b = build_qp(ctx, &xi, &u_des, &reference[k..], 1.0);
                let full = status_of(&b.problem);
                let mut no_term = b.problem.clone();
                for r in (n_state_rows + n_input_rows)..no_term.lower.len() {
                    no_term.lower[r] = f64::NEG_INFINITY;
                    no_term.upper[r] = f64::INFINITY;
                }
                let mut no_state = b.problem.clone();
                for r in 0..n_state_rows {
                    no_state.lower[r] = f64::NEG_INFINITY;
                    no_state.upper[r] = f64::INFINITY;
                }
                let v = xi.fixed_rows::<3>(3).norm();
                let dist_c = (xi.fixed_rows::<3>(0) - center.fixed_rows::<3>(0)).norm();
                println!(
                    "w{window} k{k}: |v|={v:.3} dist_to_center={dist_c:.3} full={full:?} no_term={:?} no_state={:?} zic={}",
                    status_of(&no_term), status_of(&no_state),
                    zero_intervention_certificate(ctx, &xi, &u_des, &center).is_some()
                );
                let _ = DVector::<f64>::zeros(1);
            }
            state = dynamics::step(&state, &u_safe, &scenario.quadrotor, dt, None);
            if diagnosed >= 8 { break 'outer; }
        }
    }
}
