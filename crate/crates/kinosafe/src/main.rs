//! `kinosafe` command line: run missions from a scenario file, compare two
//! run directories, and export plot-ready data series.
//!
//! Exit codes for `run`: 0 goal reached with zero violations, 1 config or
//! I/O error, 2 violations recorded, 3 mission aborted or goal not reached.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kinosafe::config::ScenarioConfig;
use kinosafe::pipeline::{compare_runs, run_mission, MissionResult, RunSummary};
use kinosafe::report::{self, Series, COMPARISON_FILE};

#[derive(Parser)]
#[command(name = "kinosafe", about = "Quadrotor kinodynamic planning with a predictive safety filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FilterMode {
    On,
    Off,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mission from a scenario file and write run artifacts.
    Run {
        /// Scenario JSON file.
        config: PathBuf,
        /// Run with the safety filter on, off, or both (sequentially).
        #[arg(long, value_enum, default_value = "on")]
        filter: FilterMode,
        /// Override the mission seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the scenario's output_dir, then
        /// "runs/<scenario name>").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the receding horizon T.
        #[arg(long)]
        horizon: Option<usize>,
        /// Override the disturbance bound.
        #[arg(long)]
        disturbance: Option<f64>,
    },
    /// Compare two completed run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Where to write the comparison JSON.
        #[arg(long, default_value = COMPARISON_FILE)]
        out: PathBuf,
    },
    /// Export a plot-ready CSV series from a run directory.
    ExportSeries {
        run_dir: PathBuf,
        /// One of: angles, velocity_xy, velocity_xz, position_3d,
        /// position_topview.
        series: String,
        /// Output file (defaults to <run_dir>/<series>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            filter,
            seed,
            out,
            horizon,
            disturbance,
        } => cmd_run(&config, filter, seed, out, horizon, disturbance),
        Command::Compare { dir_a, dir_b, out } => cmd_compare(&dir_a, &dir_b, &out),
        Command::ExportSeries {
            run_dir,
            series,
            out,
        } => cmd_export_series(&run_dir, &series, out.as_deref()),
    }
}

fn exit_code_for(result: &MissionResult) -> ExitCode {
    if !result.constraint_violations.is_empty() {
        ExitCode::from(2)
    } else if result.reached_goal && result.aborted.is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn print_run_line(label: &str, result: &MissionResult) {
    let s = RunSummary::of(result);
    println!(
        "{label}: steps={} reached_goal={} goal_error={:.3} m violations={} interventions={} fallbacks={}{}",
        s.steps,
        s.reached_goal,
        s.goal_error,
        s.violation_count,
        s.intervention_count,
        s.fallback_count,
        result
            .aborted
            .as_deref()
            .map(|r| format!(" ABORTED: {r}"))
            .unwrap_or_default()
    );
}

fn cmd_run(
    config_path: &Path,
    filter: FilterMode,
    seed: Option<u64>,
    out: Option<PathBuf>,
    horizon: Option<usize>,
    disturbance: Option<f64>,
) -> ExitCode {
    let mut scenario = match ScenarioConfig::from_file(config_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(t) = horizon {
        scenario.mission.horizon = t;
    }
    if let Some(b) = disturbance {
        scenario.mission.disturbance_bound = b;
    }
    if let Some(s) = seed {
        scenario.seeds.mission = s;
    }
    if let Err(e) = scenario.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }

    let out_dir = out.unwrap_or_else(|| {
        scenario
            .output_dir
            .clone()
            .map(PathBuf::from)
            .unwrap_or_else(|| {
                let stem = config_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "scenario".into());
                PathBuf::from("runs").join(stem)
            })
    });

    let built = match scenario.build_components() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let execute = |enabled: bool, dir: &Path| -> Result<MissionResult, ExitCode> {
        let result = run_mission(
            &scenario.environment,
            &scenario.mission,
            &scenario.quadrotor,
            &scenario.planner,
            &built.context,
            enabled,
            scenario.seeds.mission,
        )
        .map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(1)
        })?;
        report::write_run_artifacts(dir, &result, &scenario).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(1)
        })?;
        print_run_line(
            if enabled { "filter on " } else { "filter off" },
            &result,
        );
        println!("artifacts written to {}", dir.display());
        Ok(result)
    };

    match filter {
        FilterMode::On => match execute(true, &out_dir) {
            Ok(result) => exit_code_for(&result),
            Err(code) => code,
        },
        FilterMode::Off => match execute(false, &out_dir) {
            Ok(result) => exit_code_for(&result),
            Err(code) => code,
        },
        FilterMode::Both => {
            let off_dir = out_dir.join("filter_off");
            let on_dir = out_dir.join("filter_on");
            let off = match execute(false, &off_dir) {
                Ok(r) => r,
                Err(code) => return code,
            };
            let on = match execute(true, &on_dir) {
                Ok(r) => r,
                Err(code) => return code,
            };
            match compare_runs(&on, &off) {
                Ok(comparison) => {
                    let path = out_dir.join(COMPARISON_FILE);
                    if let Err(e) = report::write_comparison(&path, &comparison) {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                    println!("comparison written to {}", path.display());
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            // The filter-on run is the artifact under test; the unfiltered
            // baseline is expected to violate.
            exit_code_for(&on)
        }
    }
}

fn cmd_compare(dir_a: &Path, dir_b: &Path, out: &Path) -> ExitCode {
    let load = |dir: &Path| -> Result<report::SummaryFile, ExitCode> {
        report::check_complete(dir).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(1)
        })?;
        report::read_summary(dir).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(1)
        })
    };
    let a = match load(dir_a) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let b = match load(dir_b) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if a.scenario != b.scenario {
        eprintln!("error: runs come from different scenarios and cannot be compared");
        return ExitCode::from(1);
    }
    let comparison = kinosafe::pipeline::ComparisonSummary {
        violation_delta: b.summary.violation_count as i64 - a.summary.violation_count as i64,
        intervention_delta: b.summary.intervention_count as i64
            - a.summary.intervention_count as i64,
        goal_error_delta: b.summary.goal_error - a.summary.goal_error,
        a: a.summary,
        b: b.summary,
    };
    println!(
        "A: filter={} violations={} interventions={} goal_error={:.3}",
        comparison.a.filter_enabled,
        comparison.a.violation_count,
        comparison.a.intervention_count,
        comparison.a.goal_error
    );
    println!(
        "B: filter={} violations={} interventions={} goal_error={:.3}",
        comparison.b.filter_enabled,
        comparison.b.violation_count,
        comparison.b.intervention_count,
        comparison.b.goal_error
    );
    println!(
        "deltas (B - A): violations={:+} interventions={:+} goal_error={:+.3}",
        comparison.violation_delta, comparison.intervention_delta, comparison.goal_error_delta
    );
    if let Err(e) = report::write_comparison(out, &comparison) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    println!("comparison written to {}", out.display());
    ExitCode::SUCCESS
}

fn cmd_export_series(run_dir: &Path, series: &str, out: Option<&Path>) -> ExitCode {
    let series: Series = match series.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match report::export_series(run_dir, series, out) {
        Ok(path) => {
            println!("series written to {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
