//! Run artifacts: `trajectory.csv` (one row per control step),
//! `interventions.csv`, `summary.json`, `comparison.json`, and the
//! plot-ready CSV series exports. All CSV uses `.` decimals, comma
//! separators and a header row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::pipeline::{ComparisonSummary, MissionResult, RunSummary, Violation};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INTERVENTIONS_FILE: &str = "interventions.csv";
pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} is not a complete run directory (missing {missing})")]
    IncompleteRun { path: String, missing: &'static str },
    #[error("malformed {file}: {message}")]
    Malformed { file: String, message: String },
    #[error("unknown series '{0}'; valid names: angles, velocity_xy, velocity_xz, position_3d, position_topview")]
    UnknownSeries(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `summary.json` contents: scenario echo plus aggregates and violations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub scenario: ScenarioConfig,
    pub summary: RunSummary,
    pub violations: Vec<Violation>,
    pub aborted: Option<String>,
    pub windows_executed: usize,
}

const TRAJECTORY_HEADER: &str = "time,window,x,y,z,vx,vy,vz,roll,pitch,yaw,p,q,r,\
u_des_0,u_des_1,u_des_2,u_des_3,u_safe_0,u_safe_1,u_safe_2,u_safe_3,\
intervened,fallback,qp_iterations,objective";

/// Write `trajectory.csv`, `interventions.csv` and `summary.json` into
/// `dir` (created if needed).
pub fn write_run_artifacts(
    dir: &Path,
    result: &MissionResult,
    scenario: &ScenarioConfig,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut csv = String::with_capacity(result.records.len() * 220 + 256);
    csv.push_str(TRAJECTORY_HEADER);
    csv.push('\n');
    for r in &result.records {
        write!(csv, "{},{}", r.time, r.window).unwrap();
        for v in r.state.iter().chain(&r.u_des).chain(&r.u_safe) {
            write!(csv, ",{v}").unwrap();
        }
        writeln!(
            csv,
            ",{},{},{},{}",
            r.intervened as u8, r.fallback as u8, r.qp_iterations, r.objective
        )
        .unwrap();
    }
    let traj_path = dir.join(TRAJECTORY_FILE);
    fs::write(&traj_path, csv).map_err(io_err(&traj_path))?;

    let mut icsv = String::new();
    icsv.push_str(
        "step,u_des_0,u_des_1,u_des_2,u_des_3,u_safe_0,u_safe_1,u_safe_2,u_safe_3\n",
    );
    for i in &result.interventions {
        write!(icsv, "{}", i.step).unwrap();
        for v in i.u_des.iter().chain(&i.u_safe) {
            write!(icsv, ",{v}").unwrap();
        }
        icsv.push('\n');
    }
    let int_path = dir.join(INTERVENTIONS_FILE);
    fs::write(&int_path, icsv).map_err(io_err(&int_path))?;

    let summary = SummaryFile {
        scenario: scenario.clone(),
        summary: RunSummary::of(result),
        violations: result.constraint_violations.clone(),
        aborted: result.aborted.clone(),
        windows_executed: result.windows_executed,
    };
    let sum_path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serialization");
    fs::write(&sum_path, json).map_err(io_err(&sum_path))?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<SummaryFile, ReportError> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(ReportError::IncompleteRun {
            path: dir.display().to_string(),
            missing: SUMMARY_FILE,
        });
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parsed `trajectory.csv` row (only the columns the exports need).
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub time: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub angles: [f64; 3],
}

pub fn read_trajectory(dir: &Path) -> Result<Vec<TrajectoryRow>, ReportError> {
    let path = dir.join(TRAJECTORY_FILE);
    if !path.exists() {
        return Err(ReportError::IncompleteRun {
            path: dir.display().to_string(),
            missing: TRAJECTORY_FILE,
        });
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let malformed = |message: String| ReportError::Malformed {
        file: path.display().to_string(),
        message,
    };
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != TRAJECTORY_HEADER {
                return Err(malformed("unexpected header".into()));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 26 {
            return Err(malformed(format!(
                "line {}: expected 26 fields, found {}",
                idx + 1,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64, ReportError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| malformed(format!("line {}, field {}: {e}", idx + 1, i + 1)))
        };
        rows.push(TrajectoryRow {
            time: num(0)?,
            position: [num(2)?, num(3)?, num(4)?],
            velocity: [num(5)?, num(6)?, num(7)?],
            angles: [num(8)?, num(9)?, num(10)?],
        });
    }
    Ok(rows)
}

/// Checks a run directory has all three artifacts.
pub fn check_complete(dir: &Path) -> Result<(), ReportError> {
    for (file, name) in [
        (TRAJECTORY_FILE, "trajectory.csv"),
        (SUMMARY_FILE, "summary.json"),
        (INTERVENTIONS_FILE, "interventions.csv"),
    ] {
        if !dir.join(file).exists() {
            return Err(ReportError::IncompleteRun {
                path: dir.display().to_string(),
                missing: name,
            });
        }
    }
    Ok(())
}

pub fn write_comparison(path: &Path, comparison: &ComparisonSummary) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(comparison).expect("comparison serialization");
    fs::write(path, json).map_err(io_err(path))
}

/// Plot-ready series derived from a run directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Angles,
    VelocityXy,
    VelocityXz,
    Position3d,
    PositionTopview,
}

impl Series {
    pub const ALL: [Series; 5] = [
        Series::Angles,
        Series::VelocityXy,
        Series::VelocityXz,
        Series::Position3d,
        Series::PositionTopview,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Series::Angles => "angles",
            Series::VelocityXy => "velocity_xy",
            Series::VelocityXz => "velocity_xz",
            Series::Position3d => "position_3d",
            Series::PositionTopview => "position_topview",
        }
    }
}

impl FromStr for Series {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Series::ALL
            .iter()
            .find(|series| series.name() == s)
            .copied()
            .ok_or_else(|| ReportError::UnknownSeries(s.to_string()))
    }
}

/// Export one series as CSV next to the run artifacts (or to `out`);
/// returns the written path. Constraint-bound columns ride along so a plot
/// can draw the safe region without reading the scenario.
pub fn export_series(
    run_dir: &Path,
    series: Series,
    out: Option<&Path>,
) -> Result<PathBuf, ReportError> {
    check_complete(run_dir)?;
    let summary = read_summary(run_dir)?;
    let rows = read_trajectory(run_dir)?;
    let angles = &summary.scenario.constraints.angles;
    let velocity = summary.scenario.constraints.velocity.as_ref();
    let env = &summary.scenario.environment;

    let mut csv = String::new();
    match series {
        Series::Angles => {
            csv.push_str(
                "time,roll,pitch,yaw,roll_min,roll_max,pitch_min,pitch_max,yaw_min,yaw_max\n",
            );
            for r in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.time,
                    r.angles[0],
                    r.angles[1],
                    r.angles[2],
                    angles.lower[0],
                    angles.upper[0],
                    angles.lower[1],
                    angles.upper[1],
                    angles.lower[2],
                    angles.upper[2],
                )
                .unwrap();
            }
        }
        Series::VelocityXy | Series::VelocityXz => {
            let (second_axis, second_name) = if series == Series::VelocityXy {
                (1, "vy")
            } else {
                (2, "vz")
            };
            let bound = |axis: usize, side: usize| -> f64 {
                match velocity {
                    Some(b) if side == 0 => b.lower[axis],
                    Some(b) => b.upper[axis],
                    None if side == 0 => f64::NEG_INFINITY,
                    None => f64::INFINITY,
                }
            };
            writeln!(
                csv,
                "time,vx,{second_name},vx_min,vx_max,{second_name}_min,{second_name}_max"
            )
            .unwrap();
            for r in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.time,
                    r.velocity[0],
                    r.velocity[second_axis],
                    bound(0, 0),
                    bound(0, 1),
                    bound(second_axis, 0),
                    bound(second_axis, 1),
                )
                .unwrap();
            }
        }
        Series::Position3d => {
            csv.push_str("time,x,y,z\n");
            for r in &rows {
                writeln!(csv, "{},{},{},{}", r.time, r.position[0], r.position[1], r.position[2])
                    .unwrap();
            }
        }
        Series::PositionTopview => {
            csv.push_str("time,x,y,x_min,x_max,y_min,y_max\n");
            for r in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.time,
                    r.position[0],
                    r.position[1],
                    env.workspace_min[0],
                    env.workspace_max[0],
                    env.workspace_min[1],
                    env.workspace_max[1],
                )
                .unwrap();
            }
        }
    }

    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join(format!("{}.csv", series.name())));
    fs::write(&path, csv).map_err(io_err(&path))?;
    Ok(path)
}
