//! Quadrotor rigid-body model: continuous-time dynamics, RK4 integration,
//! zero-order-hold discretization and linearization about hover.
//!
//! The simulation state carries a unit quaternion to avoid gimbal issues.
//! Controllers and constraints operate on a 12-dimensional Euler-angle chart
//! `[position, velocity, roll-pitch-yaw, body rates]` (ZYX convention),
//! produced by [`state_to_chart`] / [`chart_to_state`].

use nalgebra::{Matrix3, Quaternion, SMatrix, SVector, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the Euler-angle state chart.
pub const CHART_DIM: usize = 12;
/// Number of rotors / control inputs.
pub const INPUT_DIM: usize = 4;

/// State vector on the Euler chart: position, velocity, rpy, body rates.
pub type ChartVector = SVector<f64, CHART_DIM>;
/// Discrete state-transition matrix on the chart.
pub type StateMatrix = SMatrix<f64, CHART_DIM, CHART_DIM>;
/// Discrete input matrix on the chart.
pub type InputMatrix = SMatrix<f64, CHART_DIM, INPUT_DIM>;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("inertia components must be positive, got {0:?}")]
    NonPositiveInertia([f64; 3]),
    #[error("arm length must be positive, got {0}")]
    NonPositiveArm(f64),
    #[error("rotor thrust bounds must satisfy 0 <= min < max, got [{0}, {1}]")]
    BadThrustBounds(f64, f64),
}

/// Physical parameters of the quadrotor (diagonal inertia, X configuration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorParams {
    /// Mass [kg].
    pub mass: f64,
    /// Body-frame principal moments of inertia [kg m^2].
    pub inertia_diag: [f64; 3],
    /// Distance from the center of mass to each rotor [m].
    pub arm_length: f64,
    /// Ratio of rotor reaction torque to rotor thrust [m].
    pub torque_coefficient: f64,
    /// Gravitational acceleration [m/s^2].
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Minimum thrust a single rotor can produce [N].
    pub rotor_thrust_min: f64,
    /// Maximum thrust a single rotor can produce [N].
    pub rotor_thrust_max: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(self.mass > 0.0) {
            return Err(ParamsError::NonPositiveMass(self.mass));
        }
        if self.inertia_diag.iter().any(|&j| !(j > 0.0)) {
            return Err(ParamsError::NonPositiveInertia(self.inertia_diag));
        }
        if !(self.arm_length > 0.0) {
            return Err(ParamsError::NonPositiveArm(self.arm_length));
        }
        if !(0.0 <= self.rotor_thrust_min && self.rotor_thrust_min < self.rotor_thrust_max) {
            return Err(ParamsError::BadThrustBounds(
                self.rotor_thrust_min,
                self.rotor_thrust_max,
            ));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia_diag))
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            1.0 / self.inertia_diag[0],
            1.0 / self.inertia_diag[1],
            1.0 / self.inertia_diag[2],
        ))
    }

    /// Per-rotor thrust that balances gravity with zero torque.
    pub fn hover_input(&self) -> ControlInput {
        ControlInput::uniform(self.mass * self.gravity / 4.0)
    }
}

/// Quadrotor state: position/velocity in the world frame, body-to-world
/// attitude quaternion, angular velocity in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub body_rates: Vector3<f64>,
}

impl State {
    /// At rest at `position`, level attitude.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            body_rates: Vector3::zeros(),
        }
    }
}

/// Per-rotor thrusts [N].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub thrusts: Vector4<f64>,
}

impl ControlInput {
    pub fn new(thrusts: Vector4<f64>) -> Self {
        Self { thrusts }
    }

    pub fn uniform(thrust: f64) -> Self {
        Self {
            thrusts: Vector4::repeat(thrust),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.thrusts.iter().all(|t| t.is_finite())
    }

    /// Componentwise clamp to `[lower, upper]`.
    pub fn clamp(&self, lower: &Vector4<f64>, upper: &Vector4<f64>) -> Self {
        Self {
            thrusts: self.thrusts.zip_zip_map(lower, upper, |t, l, u| t.clamp(l, u)),
        }
    }
}

/// Time derivative of [`State`]; the attitude slot is a raw quaternion rate.
#[derive(Debug, Clone, Copy)]
pub struct StateDerivative {
    pub position_rate: Vector3<f64>,
    pub velocity_rate: Vector3<f64>,
    pub attitude_rate: Quaternion<f64>,
    pub body_rate_rate: Vector3<f64>,
}

/// Additive disturbance on the state derivative (the attitude kinematics are
/// left undisturbed; a rate disturbance covers attitude uncertainty).
#[derive(Debug, Clone, Copy, Default)]
pub struct Disturbance {
    pub position_rate: Vector3<f64>,
    pub velocity_rate: Vector3<f64>,
    pub body_rate_rate: Vector3<f64>,
}

impl Disturbance {
    /// Uniform sample of every component in `[-bound, bound]`.
    pub fn sample_box<R: rand::Rng>(bound: f64, rng: &mut R) -> Self {
        let mut draw = |_| rng.gen_range(-bound..=bound);
        Self {
            position_rate: Vector3::from_fn(|i, _| draw(i)),
            velocity_rate: Vector3::from_fn(|i, _| draw(i)),
            body_rate_rate: Vector3::from_fn(|i, _| draw(i)),
        }
    }
}

/// Discrete-time linear model `x(k+1) = A x(k) + B u(k)` on the Euler chart,
/// valid as deviations from the operating point.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a_matrix: StateMatrix,
    pub b_matrix: InputMatrix,
    pub dt: f64,
    pub operating_state: State,
    pub operating_input: ControlInput,
}

/// Body-frame force and torque produced by the four rotor thrusts.
///
/// X configuration: rotors sit at `arm_length` from the center, 45 degrees
/// off the body axes, numbered 0: front-right, 1: rear-right, 2: rear-left,
/// 3: front-left. Rotors 0 and 2 spin opposite to 1 and 3 so that equal
/// thrusts cancel all torques.
pub fn wrench_from_thrusts(
    u: &ControlInput,
    p: &QuadrotorParams,
) -> (Vector3<f64>, Vector3<f64>) {
    let t = &u.thrusts;
    let a = p.arm_length / std::f64::consts::SQRT_2;
    let force = Vector3::new(0.0, 0.0, t.sum());
    let torque = Vector3::new(
        a * (-t[0] - t[1] + t[2] + t[3]),
        a * (-t[0] + t[1] + t[2] - t[3]),
        p.torque_coefficient * (-t[0] + t[1] - t[2] + t[3]),
    );
    (force, torque)
}

/// Continuous-time state derivative:
/// position rate `v`, velocity rate `R(q) f / m - g e_z`,
/// quaternion rate `q (0, w) / 2`, body-rate derivative `J^-1 (tau - w x J w)`.
pub fn derivative(x: &State, u: &ControlInput, p: &QuadrotorParams) -> StateDerivative {
    let (force_body, torque) = wrench_from_thrusts(u, p);
    let velocity_rate =
        x.attitude * force_body / p.mass - Vector3::new(0.0, 0.0, p.gravity);
    let omega = x.body_rates;
    let attitude_rate =
        x.attitude.into_inner() * Quaternion::from_parts(0.0, omega) * 0.5;
    let body_rate_rate = p.inertia_inv() * (torque - omega.cross(&(p.inertia() * omega)));
    StateDerivative {
        position_rate: x.velocity,
        velocity_rate,
        attitude_rate,
        body_rate_rate,
    }
}

fn add_disturbance(mut k: StateDerivative, d: Option<&Disturbance>) -> StateDerivative {
    if let Some(d) = d {
        k.position_rate += d.position_rate;
        k.velocity_rate += d.velocity_rate;
        k.body_rate_rate += d.body_rate_rate;
    }
    k
}

fn advance(x: &State, k: &StateDerivative, dt: f64) -> State {
    State {
        position: x.position + k.position_rate * dt,
        velocity: x.velocity + k.velocity_rate * dt,
        attitude: UnitQuaternion::from_quaternion(
            x.attitude.into_inner() + k.attitude_rate * dt,
        ),
        body_rates: x.body_rates + k.body_rate_rate * dt,
    }
}

/// One classical RK4 step of the nonlinear model; optional additive
/// disturbance is applied to the derivative at every stage. The attitude is
/// renormalized after the update.
pub fn step(
    x: &State,
    u: &ControlInput,
    p: &QuadrotorParams,
    dt: f64,
    d: Option<&Disturbance>,
) -> State {
    debug_assert!(dt > 0.0);
    let k1 = add_disturbance(derivative(x, u, p), d);
    let k2 = add_disturbance(derivative(&advance(x, &k1, dt / 2.0), u, p), d);
    let k3 = add_disturbance(derivative(&advance(x, &k2, dt / 2.0), u, p), d);
    let k4 = add_disturbance(derivative(&advance(x, &k3, dt), u, p), d);

    let position = x.position
        + (k1.position_rate + 2.0 * k2.position_rate + 2.0 * k3.position_rate + k4.position_rate)
            * (dt / 6.0);
    let velocity = x.velocity
        + (k1.velocity_rate + 2.0 * k2.velocity_rate + 2.0 * k3.velocity_rate + k4.velocity_rate)
            * (dt / 6.0);
    let attitude = UnitQuaternion::from_quaternion(
        x.attitude.into_inner()
            + (k1.attitude_rate + k2.attitude_rate * 2.0 + k3.attitude_rate * 2.0
                + k4.attitude_rate)
                * (dt / 6.0),
    );
    let body_rates = x.body_rates
        + (k1.body_rate_rate + 2.0 * k2.body_rate_rate + 2.0 * k3.body_rate_rate
            + k4.body_rate_rate)
            * (dt / 6.0);

    State {
        position,
        velocity,
        attitude,
        body_rates,
    }
}

/// ZYX (yaw-pitch-roll) Euler angles of a unit quaternion.
/// Roll and yaw lie in `(-pi, pi]`, pitch in `[-pi/2, pi/2]`.
pub fn euler_from_quaternion(q: &UnitQuaternion<f64>) -> (f64, f64, f64) {
    q.euler_angles()
}

/// Unit quaternion for ZYX Euler angles (rotation `Rz(yaw) Ry(pitch) Rx(roll)`).
pub fn quaternion_from_euler(roll: f64, pitch: f64, yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

/// Project the quaternion state onto the 12-dimensional Euler chart.
pub fn state_to_chart(x: &State) -> ChartVector {
    let (roll, pitch, yaw) = euler_from_quaternion(&x.attitude);
    let mut xi = ChartVector::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&x.position);
    xi.fixed_rows_mut::<3>(3).copy_from(&x.velocity);
    xi[6] = roll;
    xi[7] = pitch;
    xi[8] = yaw;
    xi.fixed_rows_mut::<3>(9).copy_from(&x.body_rates);
    xi
}

/// Lift a chart vector back to the quaternion state.
pub fn chart_to_state(xi: &ChartVector) -> State {
    State {
        position: Vector3::new(xi[0], xi[1], xi[2]),
        velocity: Vector3::new(xi[3], xi[4], xi[5]),
        attitude: quaternion_from_euler(xi[6], xi[7], xi[8]),
        body_rates: Vector3::new(xi[9], xi[10], xi[11]),
    }
}

/// Continuous dynamics expressed on the Euler chart. The Euler-angle rates
/// follow the ZYX kinematic relation; singular at pitch = +-pi/2, which the
/// near-hover operating regime never approaches.
fn chart_derivative(xi: &ChartVector, u: &ControlInput, p: &QuadrotorParams) -> ChartVector {
    let x = chart_to_state(xi);
    let k = derivative(&x, u, p);
    let (sr, cr) = (xi[6].sin(), xi[6].cos());
    let (tp, cp) = (xi[7].tan(), xi[7].cos());
    let w = x.body_rates;
    let euler_rates = Vector3::new(
        w.x + sr * tp * w.y + cr * tp * w.z,
        cr * w.y - sr * w.z,
        sr / cp * w.y + cr / cp * w.z,
    );
    let mut out = ChartVector::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&k.position_rate);
    out.fixed_rows_mut::<3>(3).copy_from(&k.velocity_rate);
    out.fixed_rows_mut::<3>(6).copy_from(&euler_rates);
    out.fixed_rows_mut::<3>(9).copy_from(&k.body_rate_rate);
    out
}

const FD_PERTURBATION: f64 = 1e-6;

/// Linearize the chart dynamics about hover and discretize with a matrix
/// exponential (exact zero-order hold of the linearized model).
///
/// The continuous Jacobians come from central finite differences with
/// perturbation 1e-6 about the hover equilibrium.
pub fn linearize_hover(p: &QuadrotorParams, dt: f64) -> LinearModel {
    assert!(dt > 0.0, "discretization period must be positive");
    let hover_state = State::at_rest(Vector3::zeros());
    let hover_input = p.hover_input();
    let xi0 = state_to_chart(&hover_state);

    let mut a_c = StateMatrix::zeros();
    for j in 0..CHART_DIM {
        let mut plus = xi0;
        let mut minus = xi0;
        plus[j] += FD_PERTURBATION;
        minus[j] -= FD_PERTURBATION;
        let df = (chart_derivative(&plus, &hover_input, p)
            - chart_derivative(&minus, &hover_input, p))
            / (2.0 * FD_PERTURBATION);
        a_c.set_column(j, &df);
    }

    let mut b_c = InputMatrix::zeros();
    for j in 0..INPUT_DIM {
        let mut plus = hover_input;
        let mut minus = hover_input;
        plus.thrusts[j] += FD_PERTURBATION;
        minus.thrusts[j] -= FD_PERTURBATION;
        let df = (chart_derivative(&xi0, &plus, p) - chart_derivative(&xi0, &minus, p))
            / (2.0 * FD_PERTURBATION);
        b_c.set_column(j, &df);
    }

    // Van Loan block [[A, B], [0, 0]]: its exponential holds A_d and B_d.
    let mut block = SMatrix::<f64, 16, 16>::zeros();
    block.fixed_view_mut::<12, 12>(0, 0).copy_from(&(a_c * dt));
    block.fixed_view_mut::<12, 4>(0, 12).copy_from(&(b_c * dt));
    let expm = block.exp();
    let a_matrix = expm.fixed_view::<12, 12>(0, 0).into_owned();
    let b_matrix = expm.fixed_view::<12, 4>(0, 12).into_owned();

    LinearModel {
        a_matrix,
        b_matrix,
        dt,
        operating_state: hover_state,
        operating_input: hover_input,
    }
}

/// Infinity norm of the hover-equilibrium residual; used to assert the
/// operating point of a [`LinearModel`] really is an equilibrium.
pub fn equilibrium_residual(x: &State, u: &ControlInput, p: &QuadrotorParams) -> f64 {
    let k = derivative(x, u, p);
    k.position_rate
        .amax()
        .max(k.velocity_rate.amax())
        .max(k.body_rate_rate.amax())
        .max(k.attitude_rate.coords.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn test_params() -> QuadrotorParams {
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

    fn random_state(rng: &mut ChaCha8Rng) -> State {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        State {
            position: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
            velocity: Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            attitude: UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..0.5)),
            body_rates: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, p: &QuadrotorParams) -> ControlInput {
        ControlInput::new(Vector4::from_fn(|_, _| {
            rng.gen_range(p.rotor_thrust_min..p.rotor_thrust_max)
        }))
    }

    #[test]
    fn wrench_zero_input() {
        let p = test_params();
        let (f, tau) = wrench_from_thrusts(&ControlInput::uniform(0.0), &p);
        assert_eq!(f, Vector3::zeros());
        assert_eq!(tau, Vector3::zeros());
    }

    #[test]
    fn wrench_symmetric_thrust_cancels_torque() {
        let p = test_params();
        let c = 0.04;
        let (f, tau) = wrench_from_thrusts(&ControlInput::uniform(c), &p);
        assert_relative_eq!(f.z, 4.0 * c, max_relative = 1e-15);
        assert_eq!(f.x, 0.0);
        assert_eq!(f.y, 0.0);
        assert_relative_eq!(tau.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn wrench_matches_mixer_matrix_oracle() {
        // Independent oracle: explicit 4x4 mixer built row by row from the
        // rotor geometry (force, then torque = r_i x f_i plus reaction).
        let p = test_params();
        let a = p.arm_length / std::f64::consts::SQRT_2;
        let kappa = p.torque_coefficient;
        #[rustfmt::skip]
        let mixer = Matrix4::new(
            1.0, 1.0, 1.0, 1.0,
            -a, -a, a, a,
            -a, a, a, -a,
            -kappa, kappa, -kappa, kappa,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let u = random_input(&mut rng, &p);
            let expected = mixer * u.thrusts;
            let (f, tau) = wrench_from_thrusts(&u, &p);
            assert_relative_eq!(f.z, expected[0], epsilon = 1e-15);
            assert_relative_eq!(tau.x, expected[1], epsilon = 1e-15);
            assert_relative_eq!(tau.y, expected[2], epsilon = 1e-15);
            assert_relative_eq!(tau.z, expected[3], epsilon = 1e-15);
        }
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = test_params();
        let x = State::at_rest(Vector3::new(0.3, -0.2, 1.0));
        let k = derivative(&x, &p.hover_input(), &p);
        assert_eq!(k.position_rate, Vector3::zeros());
        assert_relative_eq!(k.velocity_rate.norm(), 0.0, epsilon = 1e-15);
        assert_eq!(k.body_rate_rate, Vector3::zeros());
        assert!(k.attitude_rate.coords.amax() <= 1e-15);
    }

    #[test]
    fn free_fall_acceleration() {
        let p = test_params();
        let x = State::at_rest(Vector3::zeros());
        let k = derivative(&x, &ControlInput::uniform(0.0), &p);
        assert_relative_eq!(k.velocity_rate.z, -9.81, epsilon = 1e-15);
        assert_eq!(k.velocity_rate.x, 0.0);
        assert_eq!(k.velocity_rate.y, 0.0);
    }

    #[test]
    fn derivative_matches_rotation_matrix_oracle() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = random_input(&mut rng, &p);
            let k = derivative(&x, &u, &p);
            let (f_body, _) = wrench_from_thrusts(&u, &p);
            let r = x.attitude.to_rotation_matrix();
            let expected = r * f_body / p.mass - Vector3::new(0.0, 0.0, p.gravity);
            assert_relative_eq!(k.velocity_rate, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_preserves_hover() {
        let p = test_params();
        let x = State::at_rest(Vector3::new(1.0, 2.0, 0.5));
        let next = step(&x, &p.hover_input(), &p, 0.02, None);
        assert_relative_eq!(next.position, x.position, epsilon = 1e-12);
        assert_relative_eq!(next.velocity.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(next.body_rates.norm(), 0.0, epsilon = 1e-12);
        assert!(next.attitude.angle_to(&x.attitude) <= 1e-12);
    }

    #[test]
    fn step_ballistic_closed_form() {
        let p = test_params();
        let x = State::at_rest(Vector3::zeros());
        let dt = 0.02;
        let next = step(&x, &ControlInput::uniform(0.0), &p, dt, None);
        assert_relative_eq!(next.position.z, -0.5 * 9.81 * dt * dt, epsilon = 1e-6);
        assert!(next.attitude.angle_to(&x.attitude) <= 1e-15);
    }

    fn chart_distance(a: &State, b: &State) -> f64 {
        (state_to_chart(a) - state_to_chart(b)).norm()
    }

    fn integrate(x: &State, u: &ControlInput, p: &QuadrotorParams, dt: f64, n: usize) -> State {
        let mut s = *x;
        for _ in 0..n {
            s = step(&s, u, p, dt, None);
        }
        s
    }

    #[test]
    fn rk4_convergence_order() {
        // Richardson-style check: halving dt must shrink the one-interval
        // error by >= 15x (RK4 local order gives ~16x), measured against a
        // dt/8 reference.
        let p = test_params();
        let x = State {
            position: Vector3::new(0.1, -0.2, 0.4),
            velocity: Vector3::new(0.4, 0.2, -0.3),
            attitude: quaternion_from_euler(0.15, -0.1, 0.2),
            body_rates: Vector3::new(1.5, -2.0, 1.0),
        };
        let u = ControlInput::new(Vector4::new(0.08, 0.06, 0.075, 0.065));
        let dt = 0.02;
        let reference = integrate(&x, &u, &p, dt / 8.0, 8);
        let coarse = integrate(&x, &u, &p, dt, 1);
        let fine = integrate(&x, &u, &p, dt / 2.0, 2);
        let e_coarse = chart_distance(&coarse, &reference);
        let e_fine = chart_distance(&fine, &reference);
        assert!(
            e_coarse / e_fine >= 15.0,
            "convergence ratio {} below 15 (coarse {:.3e}, fine {:.3e})",
            e_coarse / e_fine,
            e_coarse,
            e_fine
        );
    }

    #[test]
    fn quaternion_norm_preserved() {
        let p = test_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut x = random_state(&mut rng);
            let u = random_input(&mut rng, &p);
            for _ in 0..20 {
                x = step(&x, &u, &p, 0.02, None);
            }
            assert!((x.attitude.into_inner().norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn translational_energy_conserved_unpowered() {
        let p = test_params();
        let energy = |s: &State| {
            0.5 * p.mass * s.velocity.norm_squared() + p.mass * p.gravity * s.position.z
        };
        let mut x = State {
            velocity: Vector3::new(1e-3, -1e-3, 0.0),
            ..State::at_rest(Vector3::new(0.0, 0.0, 2.0))
        };
        let u = ControlInput::uniform(0.0);
        let e0 = energy(&x);
        for _ in 0..100 {
            let next = step(&x, &u, &p, 0.02, None);
            assert!((energy(&next) - energy(&x)).abs() <= 1e-8);
            x = next;
        }
        assert!((energy(&x) - e0).abs() <= 1e-6);
    }

    #[test]
    fn disturbance_shifts_derivative() {
        let p = test_params();
        let x = State::at_rest(Vector3::zeros());
        let d = Disturbance {
            velocity_rate: Vector3::new(0.0, 0.0, 9.81),
            ..Default::default()
        };
        // Disturbance exactly cancelling gravity under zero thrust: no fall.
        let next = step(&x, &ControlInput::uniform(0.0), &p, 0.02, Some(&d));
        assert_relative_eq!(next.position.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_identity_and_single_axis() {
        let (r, p_, y) = euler_from_quaternion(&UnitQuaternion::identity());
        assert_eq!((r, p_, y), (0.0, 0.0, 0.0));
        let q = quaternion_from_euler(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let (r, p_, y) = euler_from_quaternion(&q);
        assert_relative_eq!(r, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p_, 0.0, epsilon = 1e-12);
        assert_relative_eq!(y, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn euler_round_trip_reproduces_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let q = random_state(&mut rng).attitude;
            let (roll, pitch, yaw) = euler_from_quaternion(&q);
            let q2 = quaternion_from_euler(roll, pitch, yaw);
            let r1 = q.to_rotation_matrix();
            let r2 = q2.to_rotation_matrix();
            assert_relative_eq!(r1.matrix(), r2.matrix(), epsilon = 1e-10);
        }
    }

    #[test]
    fn linearization_position_rows_are_velocity_selector() {
        let p = test_params();
        // Check on the continuous Jacobian indirectly through the discrete
        // model at tiny dt: A ~ I + A_c dt.
        let dt = 1e-8;
        let model = linearize_hover(&p, dt);
        let a_c_approx = (model.a_matrix - StateMatrix::identity()) / dt;
        for i in 0..3 {
            for j in 0..CHART_DIM {
                let expected = if j == i + 3 { 1.0 } else { 0.0 };
                assert_relative_eq!(a_c_approx[(i, j)], expected, epsilon = 1e-4);
            }
        }
        // ZOH limit: A -> I, and B -> 0 proportionally to dt (the torque rows
        // of B_c scale as arm_length / inertia ~ 2e3, so the absolute size of
        // B at dt = 1e-8 is ~2e-5; the limit statement is relative to B_c).
        assert_relative_eq!(model.a_matrix, StateMatrix::identity(), epsilon = 1e-6);
        let b_c_scale = (model.b_matrix / dt).amax();
        assert!(model.b_matrix.amax() <= 1e-6 * (1.0 + b_c_scale));
    }

    #[test]
    fn linear_model_operating_point_is_equilibrium() {
        let p = test_params();
        let model = linearize_hover(&p, 0.02);
        assert!(
            equilibrium_residual(&model.operating_state, &model.operating_input, &p) <= 1e-9
        );
    }

    #[test]
    fn linear_prediction_matches_nonlinear_small_perturbation() {
        let p = test_params();
        let model = linearize_hover(&p, 0.02);
        let xi0 = state_to_chart(&model.operating_state);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let mut delta = ChartVector::zeros();
            for i in 0..CHART_DIM {
                delta[i] = rng.gen_range(-1.0..1.0);
            }
            delta *= 1e-4 / delta.norm();
            let x = chart_to_state(&(xi0 + delta));
            let next = step(&x, &model.operating_input, &p, model.dt, None);
            let predicted = model.a_matrix * delta;
            let actual = state_to_chart(&next) - xi0;
            assert!(
                (actual - predicted).amax() <= 1e-6,
                "linearization error {:.3e}",
                (actual - predicted).amax()
            );
        }
    }

    #[test]
    fn linear_prediction_with_inputs_within_tolerance() {
        let p = test_params();
        let model = linearize_hover(&p, 0.02);
        let xi0 = state_to_chart(&model.operating_state);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let mut delta = ChartVector::zeros();
            for i in 0..CHART_DIM {
                delta[i] = rng.gen_range(-1e-3..1e-3);
            }
            let mut du = Vector4::zeros();
            for i in 0..INPUT_DIM {
                du[i] = rng.gen_range(-1e-3..1e-3);
            }
            let x = chart_to_state(&(xi0 + delta));
            let u = ControlInput::new(model.operating_input.thrusts + du);
            let next = step(&x, &u, &p, model.dt, None);
            let predicted = model.a_matrix * delta + model.b_matrix * du;
            let actual = state_to_chart(&next) - xi0;
            assert!(
                (actual - predicted).amax() <= 1e-5,
                "linearization error {:.3e}",
                (actual - predicted).amax()
            );
        }
    }

    #[test]
    fn params_validation_rejects_bad_values() {
        let mut p = test_params();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = test_params();
        p.rotor_thrust_min = 0.2;
        assert!(p.validate().is_err());
        assert!(test_params().validate().is_ok());
    }
}
