//! Scenario configuration: JSON schema with strict validation (unknown keys
//! rejected), and assembly of the runtime components (linear model, LQR
//! design, constraint sets, terminal set, filter context) from a parsed
//! scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{lqr_gain, LqrWeights};
use crate::dynamics::{linearize_hover, ChartVector, LinearModel, QuadrotorParams};
use crate::environment::Environment;
use crate::pipeline::MissionConfig;
use crate::planner::PlannerParams;
use crate::qp::QpSettings;
use crate::safety_filter::{
    terminal_set_synthesis, ConstraintSet, FilterContext, FilterSettings, InputSet,
    SynthesisOptions,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {section}: {message}")]
    Invalid { section: &'static str, message: String },
}

fn invalid(section: &'static str, err: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        section,
        message: err.to_string(),
    }
}

/// Lower/upper bounds for one 3-vector state group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds3 {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

/// Constraint boxes over the chart, grouped; absent groups are unbounded.
/// Angles are required — they are the point of the exercise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Bounds3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Bounds3>,
    /// Roll, pitch, yaw bounds in radians.
    pub angles: Bounds3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_rates: Option<Bounds3>,
}

impl ConstraintBounds {
    pub fn to_constraint_set(&self) -> ConstraintSet {
        let mut set = ConstraintSet::unbounded();
        let mut apply = |offset: usize, bounds: &Bounds3| {
            for i in 0..3 {
                set.lower[offset + i] = bounds.lower[i];
                set.upper[offset + i] = bounds.upper[i];
            }
        };
        if let Some(b) = &self.position {
            apply(0, b);
        }
        if let Some(b) = &self.velocity {
            apply(3, b);
        }
        apply(6, &self.angles);
        if let Some(b) = &self.body_rates {
            apply(9, b);
        }
        set
    }
}

/// Safety-filter knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_qp_tolerance")]
    pub qp_tolerance: f64,
    #[serde(default = "default_qp_max_iterations")]
    pub qp_max_iterations: usize,
    /// Per-stage state-box tightening `epsilon * i`.
    #[serde(default)]
    pub stage_tightening: f64,
    /// Margin absorbed by the terminal-set invariance certificate.
    #[serde(default)]
    pub terminal_disturbance_margin: f64,
    #[serde(default = "default_invariance_samples")]
    pub terminal_invariance_samples: usize,
    #[serde(default = "default_synthesis_seed")]
    pub terminal_synthesis_seed: u64,
}

fn default_qp_tolerance() -> f64 {
    1e-6
}
fn default_qp_max_iterations() -> usize {
    20_000
}
fn default_invariance_samples() -> usize {
    10_000
}
fn default_synthesis_seed() -> u64 {
    0x5afe
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            qp_tolerance: default_qp_tolerance(),
            qp_max_iterations: default_qp_max_iterations(),
            stage_tightening: 0.0,
            terminal_disturbance_margin: 0.0,
            terminal_invariance_samples: default_invariance_samples(),
            terminal_synthesis_seed: default_synthesis_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Seed for the mission loop (disturbances, subgoal projection); the
    /// planner derives per-window seeds from this and its own seed.
    pub mission: u64,
}

/// A complete scenario: everything a mission run needs, read from one JSON
/// file. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub quadrotor: QuadrotorParams,
    pub environment: Environment,
    pub planner: PlannerParams,
    pub lqr: LqrWeights,
    pub constraints: ConstraintBounds,
    #[serde(default)]
    pub filter: FilterConfig,
    pub mission: MissionConfig,
    pub seeds: Seeds,
    /// Default output directory for run artifacts (CLI `--out` overrides).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Canonical serialization: struct field order, pretty-printed.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Validate every component invariant (the parse alone only checks the
    /// shape).
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.quadrotor
            .validate()
            .map_err(|e| invalid("quadrotor", e))?;
        self.environment
            .validate()
            .map_err(|e| invalid("environment", e))?;
        self.planner.validate().map_err(|e| invalid("planner", e))?;
        self.lqr.validate().map_err(|e| invalid("lqr", e))?;
        self.constraints
            .to_constraint_set()
            .validate()
            .map_err(|e| invalid("constraints", e))?;
        InputSet::from_params(&self.quadrotor)
            .validate(&self.quadrotor.hover_input())
            .map_err(|e| invalid("quadrotor thrust bounds", e))?;
        self.mission.validate().map_err(|e| invalid("mission", e))?;
        if !(self.filter.qp_tolerance > 0.0) {
            return Err(invalid("filter", "qp_tolerance must be positive"));
        }
        if self.filter.qp_max_iterations == 0 {
            return Err(invalid("filter", "qp_max_iterations must be >= 1"));
        }
        if !(self.filter.stage_tightening >= 0.0) {
            return Err(invalid("filter", "stage_tightening must be >= 0"));
        }
        Ok(())
    }

    /// Build the runtime components: hover-linearized model at the control
    /// period, LQR design, constraint/input sets, synthesized terminal set,
    /// and the filter context.
    pub fn build_components(&self) -> Result<BuiltComponents, ConfigError> {
        let model = linearize_hover(&self.quadrotor, self.mission.dt());
        let q = ChartVector::from_iterator(self.lqr.q.iter().copied());
        let r = nalgebra::Vector4::from_iterator(self.lqr.r.iter().copied());
        let design = lqr_gain(&model, &q, &r).map_err(|e| invalid("lqr", e))?;
        let constraint_set = self.constraints.to_constraint_set();
        let input_set = InputSet::from_params(&self.quadrotor);
        let synthesis = SynthesisOptions {
            disturbance_margin: self.filter.terminal_disturbance_margin,
            invariance_samples: self.filter.terminal_invariance_samples,
            rng_seed: self.filter.terminal_synthesis_seed,
        };
        let terminal_set = terminal_set_synthesis(
            &design,
            &constraint_set,
            &input_set,
            &model,
            &synthesis,
        )
        .map_err(|e| invalid("constraints", e))?;
        let settings = FilterSettings {
            qp: QpSettings {
                tolerance: self.filter.qp_tolerance,
                max_iterations: self.filter.qp_max_iterations,
                ..QpSettings::default()
            },
            stage_tightening: self.filter.stage_tightening,
        };
        let context = FilterContext::new(
            model.clone(),
            design,
            constraint_set,
            input_set,
            terminal_set,
            self.mission.horizon,
            settings,
        );
        Ok(BuiltComponents {
            model,
            synthesis,
            context,
        })
    }
}

/// Runtime components assembled from a scenario.
pub struct BuiltComponents {
    pub model: LinearModel,
    pub synthesis: SynthesisOptions,
    pub context: FilterContext,
}
