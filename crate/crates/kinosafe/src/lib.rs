//! # kinosafe
//!
//! Safe kinodynamic motion planning for a quadrotor. The library combines:
//!
//! - a geometric RRT* planner over 3D positions with cubic-spline smoothing,
//! - an LQR tracking controller synthesized on a hover-linearized model,
//! - a receding-horizon predictive safety filter that minimally modifies the
//!   LQR input so that roll/pitch/yaw (and any other configured state bounds)
//!   are satisfied at every future step of the prediction, with a certified
//!   invariant terminal set as the horizon-end safety guarantee,
//! - a mission pipeline that executes plan → track → filter window by window
//!   on a nonlinear quaternion-based simulator.
//!
//! The `kinosafe` binary drives everything from a JSON scenario file and
//! writes CSV/JSON run artifacts; see the crate README.

pub mod config;
pub mod controller;
pub mod dynamics;
pub mod environment;
pub mod pipeline;
pub mod planner;
pub mod qp;
pub mod report;
pub mod safety_filter;

// pub use config::ScenarioConfig;
// pub use controller::LqrDesign;
pub use dynamics::{ControlInput, LinearModel, QuadrotorParams, State};
// pub use environment::{Aabb, Environment};
// pub use pipeline::{MissionConfig, MissionResult};
// pub use planner::{Path, PlannerParams, Trajectory};
// pub use safety_filter::{ConstraintSet, FilterContext, InputSet, TerminalSet};
