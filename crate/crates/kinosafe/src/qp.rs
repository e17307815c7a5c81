//! Dense convex QP solver for problems of the form
//!
//! ```text
//!   minimize   1/2 z'Hz + q'z
//!   subject to l <= Az <= u
//! ```
//!
//! with positive-definite `H`. Alternating direction method of multipliers
//! with operator splitting between the regularized quadratic solve (cached
//! Cholesky factorization) and projection onto the constraint intervals,
//! plus an active-set polish of the converged iterate. Primal infeasibility
//! is declared through the standard certificate on the dual update
//! sequence. Bounds may be infinite on either side; rows with both bounds
//! infinite should simply be omitted.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Problem data. `constraint_matrix` is dense `m x n`; `lower`/`upper` are
/// length `m` and may contain `-inf`/`+inf`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear_term: DVector<f64>,
    pub constraint_matrix: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn num_variables(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint_matrix.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.hessian * z)[(0, 0)] + self.linear_term.dot(z)
    }

    /// Worst violation of `l <= Az <= u` at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        if self.num_constraints() == 0 {
            return 0.0;
        }
        let az = &self.constraint_matrix * z;
        let mut worst: f64 = 0.0;
        for i in 0..az.len() {
            worst = worst.max(self.lower[i] - az[i]).max(az[i] - self.upper[i]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Primal infeasibility certificate found.
    Infeasible,
    /// Iteration limit reached without convergence; callers treat this as
    /// infeasible for safety purposes.
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub rho: f64,
    pub sigma: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 20_000,
            rho: 1.0,
            sigma: 1e-6,
        }
    }
}

const INFEASIBILITY_TOLERANCE: f64 = 1e-7;
const RHO_ADAPT_INTERVAL: usize = 100;

fn clamp_vec(v: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(lower[i], upper[i]))
}

/// OSQP-style primal infeasibility test on the dual increment `dy`:
/// `A' dy ~ 0` and the support function of the bounds at `dy` is negative.
fn primal_infeasibility_certificate(problem: &QpProblem, dy: &DVector<f64>) -> bool {
    let norm = dy.amax();
    if norm <= 1e-14 {
        return false;
    }
    let eps = INFEASIBILITY_TOLERANCE * norm;
    if (problem.constraint_matrix.transpose() * dy).amax() > eps {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > eps {
            if problem.upper[i].is_infinite() {
                return false;
            }
            support += problem.upper[i] * dy[i];
        } else if dy[i] < -eps {
            if problem.lower[i].is_infinite() {
                return false;
            }
            support += problem.lower[i] * dy[i];
        }
    }
    support < -eps
}

/// Active side of a constraint row during polishing.
#[derive(Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
}

/// Active-set cleanup of the converged ADMM iterate: starting from the rows
/// the projection clamped, alternately drop wrong-sign multipliers and add
/// violated rows until the KKT point is primal and dual consistent. Such a
/// point satisfies the KKT conditions exactly; the ADMM iterate is kept
/// when polishing fails.
fn polish(
    problem: &QpProblem,
    s: &DVector<f64>,
    tolerance: f64,
) -> Option<DVector<f64>> {
    let n = problem.num_variables();
    let m = problem.num_constraints();
    let bound_tol = |b: f64| 10.0 * tolerance * (1.0 + b.abs());
    let mut active: Vec<(usize, Side)> = Vec::new();
    for i in 0..m {
        if problem.lower[i].is_finite() && s[i] - problem.lower[i] <= bound_tol(problem.lower[i]) {
            active.push((i, Side::Lower));
        } else if problem.upper[i].is_finite()
            && problem.upper[i] - s[i] <= bound_tol(problem.upper[i])
        {
            active.push((i, Side::Upper));
        }
    }

    let solve_kkt = |active: &[(usize, Side)]| -> Option<DVector<f64>> {
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&problem.linear_term));
        for (r, &(i, side)) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = problem.constraint_matrix[(i, c)];
                kkt[(c, n + r)] = problem.constraint_matrix[(i, c)];
            }
            rhs[n + r] = match side {
                Side::Lower => problem.lower[i],
                Side::Upper => problem.upper[i],
            };
        }
        let sol = kkt.clone().lu().solve(&rhs)?;
        ((&kkt * &sol - &rhs).amax() <= 1e-8 * (1.0 + rhs.amax())).then_some(sol)
    };

    for _ in 0..(2 * m + 10) {
        let sol = solve_kkt(&active)?;
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        let zp = sol.rows(0, n).into_owned();

        // Dual consistency: an upper-side multiplier must be nonnegative,
        // a lower-side one nonpositive (stationarity Hz + q + A' nu = 0).
        let mut worst_drop: Option<(usize, f64)> = None;
        for (r, &(_, side)) in active.iter().enumerate() {
            let nu = sol[n + r];
            let wrong = match side {
                Side::Upper => -nu,
                Side::Lower => nu,
            };
            if wrong > 1e-9 && worst_drop.map_or(true, |(_, w)| wrong > w) {
                worst_drop = Some((r, wrong));
            }
        }
        if let Some((r, _)) = worst_drop {
            active.remove(r);
            continue;
        }

        // Primal consistency: add the most violated inactive row.
        let az = &problem.constraint_matrix * &zp;
        let mut worst_add: Option<(usize, Side, f64)> = None;
        for i in 0..m {
            if active.iter().any(|&(j, _)| j == i) {
                continue;
            }
            let low_violation = problem.lower[i] - az[i];
            let up_violation = az[i] - problem.upper[i];
            if low_violation > 1e-9 && worst_add.map_or(true, |(_, _, w)| low_violation > w) {
                worst_add = Some((i, Side::Lower, low_violation));
            }
            if up_violation > 1e-9 && worst_add.map_or(true, |(_, _, w)| up_violation > w) {
                worst_add = Some((i, Side::Upper, up_violation));
            }
        }
        if let Some((i, side, _)) = worst_add {
            active.push((i, side));
            continue;
        }

        // Feasible with consistent multiplier signs: the KKT conditions
        // certify optimality of the polished point for the convex problem.
        return (problem.max_violation(&zp) <= tolerance).then_some(zp);
    }
    None
}

/// Solve the QP from a cold start (`z = 0`).
pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    solve_qp_warm(problem, settings, None)
}

/// Solve the QP, optionally warm-starting the primal iterate.
pub fn solve_qp_warm(
    problem: &QpProblem,
    settings: &QpSettings,
    warm_start: Option<&DVector<f64>>,
) -> QpSolution {
    let n = problem.num_variables();
    let m = problem.num_constraints();
    debug_assert_eq!(problem.linear_term.len(), n);
    debug_assert_eq!(problem.constraint_matrix.ncols(), n.max(problem.constraint_matrix.ncols()));

    // Unconstrained problems reduce to one linear solve.
    if m == 0 {
        let z = Cholesky::new(problem.hessian.clone())
            .map(|c| c.solve(&(-&problem.linear_term)))
            .unwrap_or_else(|| DVector::zeros(n));
        let objective = problem.objective(&z);
        return QpSolution {
            status: QpStatus::Solved,
            z,
            objective,
            iterations: 1,
        };
    }

    let mut rho = settings.rho;
    let sigma = settings.sigma;
    let a = &problem.constraint_matrix;
    let a_t = a.transpose();
    let ata = &a_t * a;

    let factor = |rho: f64| -> Option<Cholesky<f64, Dyn>> {
        let mut kkt = problem.hessian.clone() + &ata * rho;
        for i in 0..n {
            kkt[(i, i)] += sigma;
        }
        Cholesky::new(kkt)
    };
    let Some(mut chol) = factor(rho) else {
        // Hessian not PD even with regularization; treat as failure.
        return QpSolution {
            status: QpStatus::IterationLimit,
            z: DVector::zeros(n),
            objective: f64::NAN,
            iterations: 0,
        };
    };

    let mut z = warm_start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut s = clamp_vec(&(a * &z), &problem.lower, &problem.upper);
    let mut y = DVector::zeros(m);

    for iter in 1..=settings.max_iterations {
        let rhs = &z * sigma - &problem.linear_term + &a_t * (&s * rho - &y);
        z = chol.solve(&rhs);
        let az = a * &z;
        let s_next = clamp_vec(&(&az + &y / rho), &problem.lower, &problem.upper);
        let dy = (&az - &s_next) * rho;
        let y_next = &y + &dy;

        let primal_residual = (&az - &s_next).amax();
        let dual_residual = (&problem.hessian * &z + &problem.linear_term + &a_t * &y_next).amax();

        if primal_residual <= settings.tolerance && dual_residual <= settings.tolerance {
            s = s_next;
            if let Some(zp) = polish(problem, &s, settings.tolerance) {
                z = zp;
            }
            let objective = problem.objective(&z);
            return QpSolution {
                status: QpStatus::Solved,
                z,
                objective,
                iterations: iter,
            };
        }

        if primal_infeasibility_certificate(problem, &dy) {
            return QpSolution {
                status: QpStatus::Infeasible,
                z,
                objective: f64::NAN,
                iterations: iter,
            };
        }

        s = s_next;
        y = y_next;

        if iter % RHO_ADAPT_INTERVAL == 0 && dual_residual > 0.0 && primal_residual > 0.0 {
            let ratio = (primal_residual / dual_residual).sqrt();
            if !(0.2..=5.0).contains(&ratio) {
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                if let Some(f) = factor(new_rho) {
                    rho = new_rho;
                    chol = f;
                }
            }
        }
    }

    QpSolution {
        status: QpStatus::IterationLimit,
        z: z.clone(),
        objective: problem.objective(&z),
        iterations: settings.max_iterations,
    }
}
