//! LQR trajectory tracking: discrete algebraic Riccati solver, gain
//! synthesis on the hover-linearized model, and the per-step desired input
//! `u_des(k) = u_hover - K (xi(x) - xi_ref)`.

use nalgebra::{DMatrix, SMatrix, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    state_to_chart, ChartVector, ControlInput, LinearModel, State, CHART_DIM, INPUT_DIM,
};
use crate::planner::TrajectorySample;

/// Feedback gain: maps a 12-dimensional chart error to 4 rotor thrusts.
pub type GainMatrix = SMatrix<f64, INPUT_DIM, CHART_DIM>;
/// Riccati solution on the chart.
pub type CostMatrix = SMatrix<f64, CHART_DIM, CHART_DIM>;

const DARE_TOLERANCE: f64 = 1e-10;
const DARE_MAX_ITERATIONS: usize = 100_000;
const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("DARE fixed-point did not converge within {0} iterations")]
    RiccatiDivergence(usize),
    #[error("R + B'PB is singular; input weights too small or model degenerate")]
    SingularInnerTerm,
    #[error("Riccati residual {0:.3e} exceeds {RESIDUAL_TOLERANCE:.0e}")]
    ResidualTooLarge(f64),
    #[error("closed loop unstable: spectral radius {0:.6}")]
    UnstableClosedLoop(f64),
    #[error("Riccati solution not PSD: min eigenvalue {0:.3e}")]
    IndefiniteSolution(f64),
}

/// Diagonal LQR weights, one entry per chart state and per rotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q: [f64; CHART_DIM],
    pub r: [f64; INPUT_DIM],
}

impl LqrWeights {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.q.iter().any(|&w| w < 0.0) || self.r.iter().any(|&w| w <= 0.0) {
            return Err(ControlError::SingularInnerTerm);
        }
        Ok(())
    }
}

/// Synthesized LQR controller for the hover model.
#[derive(Debug, Clone)]
pub struct LqrDesign {
    pub q_weights: ChartVector,
    pub r_weights: Vector4<f64>,
    pub gain: GainMatrix,
    pub riccati_solution: CostMatrix,
    /// Input at the operating point; the feedback law is a deviation from it.
    pub hover_input: ControlInput,
}

/// Solve `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q` by fixed-point iteration
/// from `P0 = Q`. Converged when the update is below 1e-10 in infinity norm;
/// the result is additionally validated against the residual of the
/// equation itself.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ControlError> {
    let a_t = a.transpose();
    let b_t = b.transpose();
    let mut p = q.clone();
    for _ in 0..DARE_MAX_ITERATIONS {
        let inner = r + &b_t * &p * b;
        let inner_inv = inner
            .try_inverse()
            .ok_or(ControlError::SingularInnerTerm)?;
        let apb = &a_t * &p * b;
        let next = &a_t * &p * a - &apb * inner_inv * apb.transpose() + q;
        // Symmetrize to keep rounding from drifting the iterates.
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= DARE_TOLERANCE {
            let res = riccati_residual(a, b, q, r, &p);
            if res > RESIDUAL_TOLERANCE {
                return Err(ControlError::ResidualTooLarge(res));
            }
            return Ok(p);
        }
    }
    Err(ControlError::RiccatiDivergence(DARE_MAX_ITERATIONS))
}

/// Infinity norm of `A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q`.
pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let a_t = a.transpose();
    let b_t = b.transpose();
    let inner = r + &b_t * p * b;
    let Some(inner_inv) = inner.try_inverse() else {
        return f64::INFINITY;
    };
    let apb = &a_t * p * b;
    (&a_t * p * a - p - &apb * inner_inv * apb.transpose() + q).amax()
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// LQR gain `K = (R + B'PB)^-1 B'PA` for the given diagonal weights, with
/// closed-loop stability and PSD checks on the accepted design.
pub fn lqr_gain(
    model: &LinearModel,
    q_weights: &ChartVector,
    r_weights: &Vector4<f64>,
) -> Result<LqrDesign, ControlError> {
    let a = DMatrix::from_iterator(CHART_DIM, CHART_DIM, model.a_matrix.iter().copied());
    let b = DMatrix::from_iterator(CHART_DIM, INPUT_DIM, model.b_matrix.iter().copied());
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        CHART_DIM,
        q_weights.iter().copied(),
    ));
    let r = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        INPUT_DIM,
        r_weights.iter().copied(),
    ));
    let p = solve_dare(&a, &b, &q, &r)?;

    let min_eig = p
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(ControlError::IndefiniteSolution(min_eig));
    }

    let inner = &r + b.transpose() * &p * &b;
    let k = inner
        .try_inverse()
        .ok_or(ControlError::SingularInnerTerm)?
        * b.transpose()
        * &p
        * &a;

    let rho = spectral_radius(&(&a - &b * &k));
    if rho >= 1.0 {
        return Err(ControlError::UnstableClosedLoop(rho));
    }

    Ok(LqrDesign {
        q_weights: *q_weights,
        r_weights: *r_weights,
        gain: GainMatrix::from_iterator(k.iter().copied()),
        riccati_solution: CostMatrix::from_iterator(p.iter().copied()),
        hover_input: model.operating_input,
    })
}

/// Chart-space reference for a trajectory sample: commanded position and
/// velocity, level attitude at the sample's yaw, zero body rates.
pub fn reference_chart(sample: &TrajectorySample) -> ChartVector {
    let mut xi = ChartVector::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&sample.position);
    xi.fixed_rows_mut::<3>(3).copy_from(&sample.velocity);
    xi[8] = sample.yaw;
    xi
}

/// Unclamped LQR input toward the reference sample. Saturation is owned by
/// the safety filter (or by the caller when the filter is disabled).
pub fn desired_input(design: &LqrDesign, x: &State, reference: &TrajectorySample) -> ControlInput {
    let error = state_to_chart(x) - reference_chart(reference);
    ControlInput::new(design.hover_input.thrusts - design.gain * error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{self, chart_to_state, linearize_hover, QuadrotorParams};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_params() -> QuadrotorParams {
        QuadrotorParams {
            mass: 0.027,
            inertia_diag: [1.4e-5, 1.4e-5, 2.17e-5],
            arm_length: 0.0397,
            torque_coefficient: 0.006,
            gravity: 9.81,
            rotor_thrust_min: 0.0,
            rotor_thrust_max: 0.15,
        }
    }

    fn default_weights() -> (ChartVector, Vector4<f64>) {
        let q = ChartVector::from_iterator(
            [10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 0.1, 0.1, 0.1]
                .iter()
                .copied(),
        );
        let r = Vector4::repeat(1e3);
        (q, r)
    }

    fn default_design() -> (LqrDesign, LinearModel, QuadrotorParams) {
        let p = test_params();
        let model = linearize_hover(&p, 0.02);
        let (q, r) = default_weights();
        let design = lqr_gain(&model, &q, &r).unwrap();
        (design, model, p)
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_dare_matches_closed_form() {
        // Closed form for a=1/2, b=q=r=1: the fixed point satisfies
        // p = p/4 - (p^2/4)/(1+p) + 1, i.e. p^2 - p/4 - 1 = 0, whose
        // positive root is (1 + sqrt(65)) / 8.
        let p = solve_dare(&scalar(0.5), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let root = (1.0 + 65.0_f64.sqrt()) / 8.0;
        assert_relative_eq!(p[(0, 0)], root, epsilon = 1e-6);
    }

    #[test]
    fn deadbeat_plant_returns_q() {
        let a = DMatrix::zeros(3, 3);
        let b = DMatrix::identity(3, 1);
        let q = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 3.0]);
        let r = scalar(1.0);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        assert_relative_eq!(p, q, epsilon = 1e-12);
    }

    fn random_stabilizable(
        rng: &mut ChaCha8Rng,
        n: usize,
        m: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = spectral_radius(&a);
        // Keep the open loop at most mildly unstable so the fixed point
        // converges quickly; a random B is controllable with probability 1.
        let a = a * (rng.gen_range(0.5..1.1) / rho.max(1e-9));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        (a, b)
    }

    #[test]
    fn random_systems_satisfy_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..50 {
            let n = rng.gen_range(2..6);
            let m = rng.gen_range(1..3);
            let (a, b) = random_stabilizable(&mut rng, n, m);
            let q = DMatrix::identity(n, n);
            let r = DMatrix::identity(m, m);
            let p = solve_dare(&a, &b, &q, &r).unwrap();
            let res = riccati_residual(&a, &b, &q, &r, &p);
            assert!(res <= 1e-8, "residual {res:.3e}");
        }
    }

    #[test]
    fn default_model_design_is_stable() {
        let (design, model, _) = default_design();
        let a = DMatrix::from_iterator(12, 12, model.a_matrix.iter().copied());
        let b = DMatrix::from_iterator(12, 4, model.b_matrix.iter().copied());
        let k = DMatrix::from_iterator(4, 12, design.gain.iter().copied());
        let rho = spectral_radius(&(&a - &b * &k));
        assert!(rho < 1.0, "spectral radius {rho}");
        // Residual of the accepted design.
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            12,
            design.q_weights.iter().copied(),
        ));
        let r = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            design.r_weights.iter().copied(),
        ));
        let p = DMatrix::from_iterator(12, 12, design.riccati_solution.iter().copied());
        assert!(riccati_residual(&a, &b, &q, &r, &p) <= 1e-8);
        // Symmetry and PSD of the stored solution.
        let asym = (&p - p.transpose()).amax();
        assert!(asym <= 1e-10);
    }

    #[test]
    fn cost_scaling_leaves_gain_unchanged() {
        let (_, model, _) = default_design();
        let (q, r) = default_weights();
        let base = lqr_gain(&model, &q, &r).unwrap();
        let alpha = 3.7;
        let scaled = lqr_gain(&model, &(q * alpha), &(r * alpha)).unwrap();
        assert!((base.gain - scaled.gain).amax() <= 1e-9);
    }

    #[test]
    fn doubling_input_weight_does_not_grow_gain() {
        let (_, model, _) = default_design();
        let (q, r) = default_weights();
        let base = lqr_gain(&model, &q, &r).unwrap();
        let softer = lqr_gain(&model, &q, &(r * 2.0)).unwrap();
        assert!(softer.gain.norm() <= base.gain.norm() + 1e-12);
    }

    #[test]
    fn zero_error_commands_hover() {
        let (design, _, p) = default_design();
        let reference = TrajectorySample {
            position: Vector3::new(0.4, 0.1, 0.7),
            velocity: Vector3::zeros(),
            yaw: 0.0,
        };
        let x = State::at_rest(reference.position);
        let u = desired_input(&design, &x, &reference);
        assert_relative_eq!(u.thrusts, p.hover_input().thrusts, epsilon = 1e-12);
    }

    #[test]
    fn above_reference_commands_less_thrust() {
        let (design, _, p) = default_design();
        let reference = TrajectorySample {
            position: Vector3::new(0.0, 0.0, 0.5),
            velocity: Vector3::zeros(),
            yaw: 0.0,
        };
        let x = State::at_rest(Vector3::new(0.0, 0.0, 0.6));
        let u = desired_input(&design, &x, &reference);
        assert!(
            u.thrusts.sum() < p.mass * p.gravity,
            "climbing command while above the reference"
        );
    }

    #[test]
    fn feedback_is_linear_in_error() {
        let (design, _, _) = default_design();
        let reference = TrajectorySample {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            yaw: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut delta = ChartVector::zeros();
            for i in 0..12 {
                delta[i] = rng.gen_range(-1e-2..1e-2);
            }
            let x = chart_to_state(&delta);
            let u = desired_input(&design, &x, &reference);
            // Oracle: independent dense multiply of the same error.
            let err = dynamics::state_to_chart(&x) - reference_chart(&reference);
            let k = DMatrix::from_iterator(4, 12, design.gain.iter().copied());
            let e = nalgebra::DVector::from_iterator(12, err.iter().copied());
            let expected = -&k * e;
            for i in 0..4 {
                assert_relative_eq!(
                    u.thrusts[i] - design.hover_input.thrusts[i],
                    expected[i],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn superposition_of_errors() {
        let (design, _, _) = default_design();
        let k = design.gain;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d1 = ChartVector::from_fn(|_, _| rng.gen_range(-1e-2..1e-2));
            let d2 = ChartVector::from_fn(|_, _| rng.gen_range(-1e-2..1e-2));
            let lhs = k * (d1 + d2);
            let rhs = k * d1 + k * d2;
            assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn closed_loop_converges_on_nonlinear_model() {
        let (design, model, p) = default_design();
        let reference = TrajectorySample {
            position: Vector3::new(0.0, 0.0, 0.5),
            velocity: Vector3::zeros(),
            yaw: 0.0,
        };
        let target = reference_chart(&reference);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..10 {
            let mut delta = ChartVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            delta *= 0.05 / delta.norm();
            let mut x = chart_to_state(&(target + delta));
            for _ in 0..250 {
                let u = desired_input(&design, &x, &reference);
                x = dynamics::step(&x, &u, &p, model.dt, None);
            }
            let err = (state_to_chart(&x) - target).norm();
            assert!(err <= 1e-3, "trial {trial}: residual error {err:.2e}");
        }
    }
}
