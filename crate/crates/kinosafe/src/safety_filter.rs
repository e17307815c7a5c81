//! Receding-horizon predictive safety filter: given the current state and a
//! desired input, solve a convex QP that finds the admissible input sequence
//! whose first element deviates least from the desired input, subject to
//! state boxes at every predicted stage, input boxes, and a certified
//! invariant terminal ellipsoid at the horizon end. Only the first element
//! is applied; on infeasibility the certified LQR backup law takes over.
//!
//! The prediction model is the hover-linearized ZOH model on the Euler
//! chart, in deviation coordinates around a hover point at the reference
//! window's end position, which makes the whole problem a box-constrained
//! QP (the terminal ellipsoid enters through its tight axis-aligned outer
//! box plus an exact post-solve membership check).

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controller::{CostMatrix, LqrDesign};
use crate::dynamics::{
    state_to_chart, ChartVector, ControlInput, LinearModel, QuadrotorParams, State, CHART_DIM,
    INPUT_DIM,
};
use crate::planner::TrajectorySample;
use crate::qp::{solve_qp_warm, QpProblem, QpSettings, QpStatus};

const OBJECTIVE_REGULARIZATION: f64 = 1e-6;
const HESSIAN_REGULARIZATION: f64 = 1e-8;
const INTERVENTION_THRESHOLD: f64 = 1e-6;
const MEMBERSHIP_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SetError {
    #[error("constraint bounds must satisfy lower <= upper componentwise")]
    Inverted,
    #[error("hover must be strictly interior to the set (dimension {0})")]
    HoverNotInterior(usize),
}

/// Box over the Euler chart; unconstrained dimensions are +-infinity.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub lower: ChartVector,
    pub upper: ChartVector,
}

impl ConstraintSet {
    pub fn unbounded() -> Self {
        Self {
            lower: ChartVector::repeat(f64::NEG_INFINITY),
            upper: ChartVector::repeat(f64::INFINITY),
        }
    }

    /// Hover (zero velocity, level attitude, zero rates) must be strictly
    /// interior on every non-position dimension; position dimensions only
    /// need consistent ordering.
    pub fn validate(&self) -> Result<(), SetError> {
        for d in 0..CHART_DIM {
            if !(self.lower[d] <= self.upper[d]) {
                return Err(SetError::Inverted);
            }
            if d >= 3 && !(self.lower[d] < 0.0 && 0.0 < self.upper[d]) {
                return Err(SetError::HoverNotInterior(d));
            }
        }
        Ok(())
    }

    pub fn contains(&self, xi: &ChartVector, tol: f64) -> bool {
        (0..CHART_DIM).all(|d| xi[d] >= self.lower[d] - tol && xi[d] <= self.upper[d] + tol)
    }

    /// Worst box violation at `xi` (0 when inside).
    pub fn violation(&self, xi: &ChartVector) -> f64 {
        let mut worst: f64 = 0.0;
        for d in 0..CHART_DIM {
            worst = worst
                .max(self.lower[d] - xi[d])
                .max(xi[d] - self.upper[d]);
        }
        worst
    }

    pub fn half_widths(&self) -> ChartVector {
        ChartVector::from_fn(|d, _| {
            if self.lower[d].is_finite() && self.upper[d].is_finite() {
                0.5 * (self.upper[d] - self.lower[d])
            } else {
                f64::INFINITY
            }
        })
    }
}

/// Per-rotor thrust box.
#[derive(Debug, Clone)]
pub struct InputSet {
    pub lower: Vector4<f64>,
    pub upper: Vector4<f64>,
}

impl InputSet {
    pub fn from_params(p: &QuadrotorParams) -> Self {
        Self {
            lower: Vector4::repeat(p.rotor_thrust_min),
            upper: Vector4::repeat(p.rotor_thrust_max),
        }
    }

    pub fn validate(&self, hover: &ControlInput) -> Result<(), SetError> {
        for k in 0..INPUT_DIM {
            if !(self.lower[k] <= self.upper[k]) {
                return Err(SetError::Inverted);
            }
            if !(self.lower[k] < hover.thrusts[k] && hover.thrusts[k] < self.upper[k]) {
                return Err(SetError::HoverNotInterior(k));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, u: &ControlInput) -> ControlInput {
        u.clamp(&self.lower, &self.upper)
    }
}

/// Ellipsoidal terminal set `{ xi : (xi - center)' P (xi - center) <= level }`
/// certified invariant under the LQR backup law.
#[derive(Debug, Clone)]
pub struct TerminalSet {
    /// Base center produced by synthesis (a hover point at the origin); the
    /// filter shifts its position block to the reference window's end.
    pub center: ChartVector,
    /// Shape matrix: the Riccati solution of the backing LQR design.
    pub shape: CostMatrix,
    pub level: f64,
    shape_inv: CostMatrix,
}

impl TerminalSet {
    pub fn value(&self, delta: &ChartVector) -> f64 {
        (delta.transpose() * self.shape * delta)[(0, 0)]
    }

    pub fn contains(&self, delta: &ChartVector, tol: f64) -> bool {
        self.value(delta) <= self.level * (1.0 + tol)
    }

    /// Tight axis-aligned outer box half-widths `sqrt(level * (P^-1)_jj)`.
    pub fn outer_box_half_widths(&self) -> ChartVector {
        ChartVector::from_fn(|j, _| (self.level * self.shape_inv[(j, j)]).sqrt())
    }

    /// Center shifted to a hover point at `position`.
    pub fn centered_at(&self, position: &Vector3<f64>) -> ChartVector {
        let mut c = self.center;
        c[0] += position.x;
        c[1] += position.y;
        c[2] += position.z;
        c
    }

    /// Scale `direction` onto the ellipsoid boundary.
    pub fn boundary_point(&self, direction: &ChartVector) -> ChartVector {
        let v = self.value(direction);
        direction * (self.level / v).sqrt()
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no positive terminal level satisfies all certificates")]
    NoFeasibleLevel,
    #[error("Riccati solution is not positive definite")]
    ShapeNotPd,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    /// Margin subtracted from the contraction budget to absorb the
    /// configured disturbance bound.
    pub disturbance_margin: f64,
    pub invariance_samples: usize,
    pub rng_seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            disturbance_margin: 0.0,
            invariance_samples: 10_000,
            rng_seed: 0x5afe,
        }
    }
}

const BISECTION_STEPS: usize = 50;

/// Largest level `c` such that the ellipsoid `{delta' P delta <= c}`
/// (i) fits in the constraint box (exact support test),
/// (ii) keeps the LQR backup inputs admissible on it (exact support test),
/// (iii) is one-step invariant under `A - BK` on sampled boundary points,
/// with the disturbance margin subtracted from the contraction budget.
pub fn terminal_set_synthesis(
    design: &LqrDesign,
    c_set: &ConstraintSet,
    u_set: &InputSet,
    model: &LinearModel,
    options: &SynthesisOptions,
) -> Result<TerminalSet, SynthesisError> {
    let p = design.riccati_solution;
    let p_dyn = DMatrix::from_iterator(CHART_DIM, CHART_DIM, p.iter().copied());
    let chol = p_dyn.clone().cholesky().ok_or(SynthesisError::ShapeNotPd)?;
    let p_inv_dyn = chol.inverse();
    let p_inv = CostMatrix::from_iterator(p_inv_dyn.iter().copied());

    // (i) state containment: c <= hw_j^2 / (P^-1)_jj per finite axis.
    let hw = c_set.half_widths();
    let mut c_max = f64::INFINITY;
    for j in 0..CHART_DIM {
        if hw[j].is_finite() {
            c_max = c_max.min(hw[j] * hw[j] / p_inv[(j, j)]);
        }
    }
    // (ii) input admissibility: support of row k of K over the ellipsoid.
    let k_gain = design.gain;
    let kpk = k_gain * p_inv * k_gain.transpose();
    for k in 0..INPUT_DIM {
        let margin = (design.hover_input.thrusts[k] - u_set.lower[k])
            .min(u_set.upper[k] - design.hover_input.thrusts[k]);
        if margin <= 0.0 {
            return Err(SynthesisError::NoFeasibleLevel);
        }
        if margin.is_finite() {
            c_max = c_max.min(margin * margin / kpk[(k, k)]);
        }
    }
    if !c_max.is_finite() {
        // Fully unconstrained sets: any level is certified; pick a nominal
        // one so downstream geometry stays finite.
        c_max = 1.0;
    }
    if c_max <= 0.0 {
        return Err(SynthesisError::NoFeasibleLevel);
    }

    let a_cl = model.a_matrix - model.b_matrix * k_gain;
    let make_set = |level: f64| TerminalSet {
        center: ChartVector::zeros(),
        shape: p,
        level,
        shape_inv: p_inv,
    };
    let invariant = |level: f64| -> bool {
        let set = make_set(level);
        let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
        for _ in 0..options.invariance_samples {
            let dir = ChartVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            if dir.amax() <= 1e-12 {
                continue;
            }
            let delta = set.boundary_point(&dir);
            let next = a_cl * delta;
            if set.value(&next).sqrt() + options.disturbance_margin > level.sqrt() + 1e-12 {
                return false;
            }
        }
        true
    };

    if invariant(c_max) {
        return Ok(make_set(c_max));
    }
    // Bisect for the largest passing level below c_max.
    let mut lo = 0.0;
    let mut hi = c_max;
    let mut best = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if invariant(mid) {
            best = Some(mid);
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.map(make_set).ok_or(SynthesisError::NoFeasibleLevel)
}

/// Re-runs the three synthesis certificates on a terminal set with fresh
/// samples; used by the acceptance suite.
#[derive(Debug, Clone, Copy)]
pub struct CertificateReport {
    pub containment_ok: bool,
    pub input_admissible: bool,
    pub invariance_ok: bool,
    pub worst_next_value: f64,
}

pub fn verify_certificates(
    set: &TerminalSet,
    design: &LqrDesign,
    c_set: &ConstraintSet,
    u_set: &InputSet,
    model: &LinearModel,
    options: &SynthesisOptions,
) -> CertificateReport {
    let hw = c_set.half_widths();
    let supports = set.outer_box_half_widths();
    let containment_ok = (0..CHART_DIM).all(|j| supports[j] <= hw[j] * (1.0 + 1e-12));

    let k_gain = design.gain;
    let mut input_admissible = true;
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed.wrapping_add(1));
    let mut invariance_ok = true;
    let mut worst_next_value: f64 = 0.0;
    let a_cl = model.a_matrix - model.b_matrix * k_gain;
    for _ in 0..options.invariance_samples {
        let dir = ChartVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        if dir.amax() <= 1e-12 {
            continue;
        }
        let delta = set.boundary_point(&dir);
        let u = ControlInput::new(design.hover_input.thrusts - k_gain * delta);
        for k in 0..INPUT_DIM {
            if u.thrusts[k] < u_set.lower[k] - 1e-9 || u.thrusts[k] > u_set.upper[k] + 1e-9 {
                input_admissible = false;
            }
        }
        let next_value = set.value(&(a_cl * delta));
        worst_next_value = worst_next_value.max(next_value);
        if next_value.sqrt() + options.disturbance_margin > set.level.sqrt() + 1e-9 {
            invariance_ok = false;
        }
    }
    CertificateReport {
        containment_ok,
        input_admissible,
        invariance_ok,
        worst_next_value,
    }
}

/// Condensed prediction operators for `x(i) = A^i x0 + sum A^(i-1-j) B u_j`.
#[derive(Debug, Clone)]
pub(crate) struct CondensedPrediction {
    pub a_powers: Vec<DMatrix<f64>>,
    /// `input_blocks[k] = A^k B`.
    pub input_blocks: Vec<DMatrix<f64>>,
    pub input_dim: usize,
    pub horizon: usize,
}

impl CondensedPrediction {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Self {
        let n = a.nrows();
        let mut a_powers = vec![DMatrix::identity(n, n)];
        for i in 1..=horizon {
            let next = &a_powers[i - 1] * a;
            a_powers.push(next);
        }
        let input_blocks = (0..horizon).map(|k| &a_powers[k] * b).collect();
        Self {
            a_powers,
            input_blocks,
            input_dim: b.ncols(),
            horizon,
        }
    }

    /// Row `dim` of the condensed input map at `stage` (length `m * T`).
    pub fn stage_row(&self, stage: usize, dim: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.input_dim * self.horizon);
        for j in 0..stage {
            let block = &self.input_blocks[stage - 1 - j];
            for c in 0..self.input_dim {
                row[j * self.input_dim + c] = block[(dim, c)];
            }
        }
        row
    }

    /// Predicted deviation at `stage` for initial deviation `delta0` and
    /// stacked inputs `z`.
    pub fn predict(&self, delta0: &DVector<f64>, z: &DVector<f64>, stage: usize) -> DVector<f64> {
        let mut x = &self.a_powers[stage] * delta0;
        for j in 0..stage {
            let block = &self.input_blocks[stage - 1 - j];
            x += block * z.rows(j * self.input_dim, self.input_dim);
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct FilterSettings {
    pub qp: QpSettings,
    /// Per-stage constraint tightening `epsilon * i` on the state boxes.
    pub stage_tightening: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            qp: QpSettings::default(),
            stage_tightening: 0.0,
        }
    }
}

/// Immutable context shared by all filter calls: model, LQR design, the
/// three sets, horizon, and precomputed condensed prediction operators.
#[derive(Debug, Clone)]
pub struct FilterContext {
    pub model: LinearModel,
    pub design: LqrDesign,
    pub constraint_set: ConstraintSet,
    pub input_set: InputSet,
    pub terminal_set: TerminalSet,
    pub horizon: usize,
    pub settings: FilterSettings,
    prediction: CondensedPrediction,
    /// Chart dimensions with at least one finite state bound.
    constrained_dims: Vec<usize>,
    /// Constant constraint matrix (state rows, input rows, terminal rows).
    constraint_matrix: DMatrix<f64>,
}

impl FilterContext {
    pub fn new(
        model: LinearModel,
        design: LqrDesign,
        constraint_set: ConstraintSet,
        input_set: InputSet,
        terminal_set: TerminalSet,
        horizon: usize,
        settings: FilterSettings,
    ) -> Self {
        assert!(horizon >= 1, "prediction horizon must be at least 1");
        let a = DMatrix::from_iterator(CHART_DIM, CHART_DIM, model.a_matrix.iter().copied());
        let b = DMatrix::from_iterator(CHART_DIM, INPUT_DIM, model.b_matrix.iter().copied());
        let prediction = CondensedPrediction::new(&a, &b, horizon);
        let constrained_dims: Vec<usize> = (0..CHART_DIM)
            .filter(|&d| {
                constraint_set.lower[d].is_finite() || constraint_set.upper[d].is_finite()
            })
            .collect();

        let n_dec = INPUT_DIM * horizon;
        let n_state_rows = constrained_dims.len() * horizon.saturating_sub(1);
        let n_rows = n_state_rows + n_dec + CHART_DIM;
        let mut constraint_matrix = DMatrix::zeros(n_rows, n_dec);
        let mut r = 0;
        for stage in 1..horizon {
            for &d in &constrained_dims {
                constraint_matrix.set_row(r, &prediction.stage_row(stage, d).transpose());
                r += 1;
            }
        }
        for i in 0..n_dec {
            constraint_matrix[(r + i, i)] = 1.0;
        }
        r += n_dec;
        for d in 0..CHART_DIM {
            constraint_matrix.set_row(r, &prediction.stage_row(horizon, d).transpose());
            r += 1;
        }

        Self {
            model,
            design,
            constraint_set,
            input_set,
            terminal_set,
            horizon,
            settings,
            prediction,
            constrained_dims,
            constraint_matrix,
        }
    }

    pub fn hover_input(&self) -> ControlInput {
        self.design.hover_input
    }

    /// Effective terminal center for a reference window: its end position
    /// as a hover point.
    pub fn terminal_center(&self, ref_window: &[TrajectorySample], state: &State) -> ChartVector {
        match ref_window.last() {
            Some(sample) => self.terminal_set.centered_at(&sample.position),
            None => self.terminal_set.centered_at(&state.position),
        }
    }

    /// Predicted chart deviations (stages `0..=horizon`) for the stacked
    /// hover-relative input vector `z`.
    pub fn predict_deviations(&self, delta0: &ChartVector, z: &DVector<f64>) -> Vec<ChartVector> {
        let d0 = DVector::from_iterator(CHART_DIM, delta0.iter().copied());
        (0..=self.horizon)
            .map(|stage| {
                let x = self.prediction.predict(&d0, z, stage);
                ChartVector::from_iterator(x.iter().copied())
            })
            .collect()
    }

    /// Certified backup law: LQR toward the terminal center, clamped to the
    /// input set.
    pub fn backup_input(&self, xi: &ChartVector, center: &ChartVector) -> ControlInput {
        let u = ControlInput::new(
            self.design.hover_input.thrusts - self.design.gain * (xi - center),
        );
        self.input_set.clamp(&u)
    }
}

/// Condensed QP for one filter call, together with the data needed for the
/// exact terminal post-check.
#[derive(Debug, Clone)]
pub struct BuiltQp {
    pub problem: QpProblem,
    pub delta0: ChartVector,
    pub center: ChartVector,
    /// Constant part of the deviation objective `|u_des - u(0)|^2`.
    pub objective_offset: f64,
}

/// Assemble the condensed QP: decision vector is the stacked hover-relative
/// input sequence, dynamics are eliminated through the prediction
/// operators, and the terminal ellipsoid is relaxed to its tight outer box
/// (`terminal_scale` shrinks that box on the post-check re-solve).
pub fn build_qp(
    ctx: &FilterContext,
    xi: &ChartVector,
    u_des: &ControlInput,
    ref_window: &[TrajectorySample],
    terminal_scale: f64,
) -> BuiltQp {
    let horizon = ctx.horizon;
    let n_dec = INPUT_DIM * horizon;
    let center = match ref_window.last() {
        Some(sample) => ctx.terminal_set.centered_at(&sample.position),
        None => {
            let mut c = ctx.terminal_set.center;
            c[0] += xi[0];
            c[1] += xi[1];
            c[2] += xi[2];
            c
        }
    };
    let delta0 = xi - center;

    // Objective: |u_des - u(0)|^2 + reg * sum |u(i) - u_hover|^2 over the
    // hover-relative decision z, plus a PD regularization of the Hessian.
    let desired_dev = u_des.thrusts - ctx.design.hover_input.thrusts;
    let mut hessian = DMatrix::zeros(n_dec, n_dec);
    let mut linear = DVector::zeros(n_dec);
    for i in 0..n_dec {
        hessian[(i, i)] = 2.0 * OBJECTIVE_REGULARIZATION + HESSIAN_REGULARIZATION;
    }
    for k in 0..INPUT_DIM {
        hessian[(k, k)] += 2.0;
        linear[k] = -2.0 * desired_dev[k];
    }

    let d0 = DVector::from_iterator(CHART_DIM, delta0.iter().copied());
    let n_state_rows = ctx.constrained_dims.len() * horizon.saturating_sub(1);
    let n_rows = n_state_rows + n_dec + CHART_DIM;
    let mut lower = DVector::zeros(n_rows);
    let mut upper = DVector::zeros(n_rows);

    let mut r = 0;
    for stage in 1..horizon {
        let drift = &ctx.prediction.a_powers[stage] * &d0;
        let tighten = ctx.settings.stage_tightening * stage as f64;
        for &d in &ctx.constrained_dims {
            lower[r] = ctx.constraint_set.lower[d] - center[d] - drift[d] + tighten;
            upper[r] = ctx.constraint_set.upper[d] - center[d] - drift[d] - tighten;
            r += 1;
        }
    }
    for _ in 0..horizon {
        for k in 0..INPUT_DIM {
            lower[r] = ctx.input_set.lower[k] - ctx.design.hover_input.thrusts[k];
            upper[r] = ctx.input_set.upper[k] - ctx.design.hover_input.thrusts[k];
            r += 1;
        }
    }
    let hw = ctx.terminal_set.outer_box_half_widths() * terminal_scale;
    let terminal_drift = &ctx.prediction.a_powers[horizon] * &d0;
    for d in 0..CHART_DIM {
        lower[r] = -hw[d] - terminal_drift[d];
        upper[r] = hw[d] - terminal_drift[d];
        r += 1;
    }

    BuiltQp {
        problem: QpProblem {
            hessian,
            linear_term: linear,
            constraint_matrix: ctx.constraint_matrix.clone(),
            lower,
            upper,
        },
        delta0,
        center,
        objective_offset: desired_dev.norm_squared(),
    }
}

/// Per-call filter diagnostics, streamed to the run log by the pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct FilterDiagnostics {
    pub intervened: bool,
    pub fallback: bool,
    /// The measured state already violated the constraint box.
    pub infeasible_at_start: bool,
    pub qp_iterations: usize,
    /// Deviation objective `|u_des - u_safe|^2` plus regularization at the
    /// accepted solution (NaN on fallback).
    pub objective: f64,
    /// Terminal ellipsoid value of the predicted horizon-end state.
    pub terminal_value: f64,
    /// The outer-box relaxation admitted a point outside the ellipsoid and
    /// the QP was re-solved once with a shrunken box.
    pub terminal_resolved: bool,
}

/// Explicit linear-model rollout of `u_des` followed by the LQR backup law:
/// the zero-intervention certificate. Returns the terminal ellipsoid value
/// when every stage satisfies the boxes and the horizon-end state is inside
/// the ellipsoid (exact membership, not the box relaxation).
pub fn zero_intervention_certificate(
    ctx: &FilterContext,
    xi: &ChartVector,
    u_des: &ControlInput,
    center: &ChartVector,
) -> Option<f64> {
    let mut delta = xi - center;
    for stage in 0..ctx.horizon {
        let u = if stage == 0 {
            u_des.thrusts
        } else {
            ctx.design.hover_input.thrusts - ctx.design.gain * delta
        };
        for k in 0..INPUT_DIM {
            if u[k] < ctx.input_set.lower[k] - MEMBERSHIP_SLACK
                || u[k] > ctx.input_set.upper[k] + MEMBERSHIP_SLACK
            {
                return None;
            }
        }
        if !ctx.constraint_set.contains(&(delta + center), MEMBERSHIP_SLACK) {
            return None;
        }
        delta = ctx.model.a_matrix * delta
            + ctx.model.b_matrix * (u - ctx.design.hover_input.thrusts);
    }
    let value = ctx.terminal_set.value(&delta);
    ctx.terminal_set
        .contains(&delta, MEMBERSHIP_SLACK)
        .then_some(value)
}

/// One receding-horizon filter evaluation: returns the safe input to apply
/// at this step. Never fails; infeasibility falls back to the certified
/// backup law and is flagged in the diagnostics.
///
/// The desired input passes through untouched whenever its own rollout
/// (followed by the backup law) already certifies safety — zero deviation
/// is then the exact optimum of the deviation objective, no QP needed.
pub fn filter(
    ctx: &FilterContext,
    state: &State,
    u_des: &ControlInput,
    ref_window: &[TrajectorySample],
) -> (ControlInput, FilterDiagnostics) {
    let xi = state_to_chart(state);
    let mut diag = FilterDiagnostics::default();

    let center = ctx.terminal_center(ref_window, state);
    if !ctx.constraint_set.contains(&xi, MEMBERSHIP_SLACK) {
        diag.infeasible_at_start = true;
        diag.fallback = true;
        let u = ctx.backup_input(&xi, &center);
        diag.intervened = (u.thrusts - u_des.thrusts).amax() > INTERVENTION_THRESHOLD;
        return (u, diag);
    }

    if let Some(value) = zero_intervention_certificate(ctx, &xi, u_des, &center) {
        diag.objective = 0.0;
        diag.terminal_value = value;
        return (*u_des, diag);
    }

    let built = build_qp(ctx, &xi, u_des, ref_window, 1.0);
    let warm = warm_start(ctx, u_des);
    let solution = solve_qp_warm(&built.problem, &ctx.settings.qp, Some(&warm));
    diag.qp_iterations = solution.iterations;

    let accepted = match solution.status {
        QpStatus::Solved => {
            let terminal =
                ctx.predict_deviations(&built.delta0, &solution.z)[ctx.horizon];
            let value = ctx.terminal_set.value(&terminal);
            diag.terminal_value = value;
            if value <= ctx.terminal_set.level * (1.0 + MEMBERSHIP_SLACK) {
                Some(solution)
            } else {
                // Outer box admitted a point outside the ellipsoid: shrink
                // the box by the violation ratio and re-solve once.
                diag.terminal_resolved = true;
                let scale = (ctx.terminal_set.level / value).sqrt();
                let rebuilt = build_qp(ctx, &xi, u_des, ref_window, scale);
                let second = solve_qp_warm(&rebuilt.problem, &ctx.settings.qp, Some(&solution.z));
                diag.qp_iterations += second.iterations;
                if second.status == QpStatus::Solved {
                    let terminal =
                        ctx.predict_deviations(&built.delta0, &second.z)[ctx.horizon];
                    let value = ctx.terminal_set.value(&terminal);
                    diag.terminal_value = value;
                    (value <= ctx.terminal_set.level * (1.0 + 1e-6)).then_some(second)
                } else {
                    None
                }
            }
        }
        QpStatus::Infeasible | QpStatus::IterationLimit => None,
    };

    match accepted {
        Some(solution) => {
            let first = solution.z.rows(0, INPUT_DIM);
            let u_safe = ControlInput::new(
                ctx.design.hover_input.thrusts
                    + Vector4::new(first[0], first[1], first[2], first[3]),
            );
            diag.objective = solution.objective + built.objective_offset;
            diag.intervened = (u_safe.thrusts - u_des.thrusts).amax() > INTERVENTION_THRESHOLD;
            (u_safe, diag)
        }
        None => {
            diag.fallback = true;
            diag.objective = f64::NAN;
            let u = ctx.backup_input(&xi, &center);
            diag.intervened = (u.thrusts - u_des.thrusts).amax() > INTERVENTION_THRESHOLD;
            (u, diag)
        }
    }
}

/// Warm start: desired input (clamped) for the first block, hover for the
/// rest, all in hover-relative coordinates.
fn warm_start(ctx: &FilterContext, u_des: &ControlInput) -> DVector<f64> {
    let mut z = DVector::zeros(INPUT_DIM * ctx.horizon);
    let clamped = ctx.input_set.clamp(u_des);
    for k in 0..INPUT_DIM {
        z[k] = clamped.thrusts[k] - ctx.design.hover_input.thrusts[k];
    }
    z
}
