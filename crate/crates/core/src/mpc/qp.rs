//! Dense convex QP solver (Mehrotra predictor-corrector interior point).
//!
//! Solves
//!
//! ```text
//!   min  0.5 x' H x + g' x
//!   s.t. A x = b,   C x <= d
//! ```
//!
//! The Newton systems eliminate the inequality slacks and multipliers,
//! leaving an (n + m_eq) augmented system that is LU-factorized once per
//! iteration and reused for the corrector step. One round of iterative
//! refinement is applied to each solve; the barrier scaling makes the
//! augmented matrix increasingly ill-conditioned near the solution.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("QP interior point reached the iteration limit")]
    MaxIterations,
    #[error("singular KKT system in the QP subproblem")]
    SingularKkt,
    #[error("non-finite value encountered in the QP subproblem")]
    NotFinite,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub mu_ineq: DVector<f64>,
    pub iterations: usize,
}

const FRACTION_TO_BOUNDARY: f64 = 0.995;

/// Largest step alpha in [0, 1] keeping v + alpha dv >= 0.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

struct KktSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    matrix: DMatrix<f64>,
}

impl KktSolver {
    fn new(matrix: DMatrix<f64>) -> Result<Self, QpError> {
        let lu = matrix.clone().lu();
        // A zero pivot signals a structurally singular system.
        for i in 0..matrix.nrows() {
            if lu.u()[(i, i)] == 0.0 {
                return Err(QpError::SingularKkt);
            }
        }
        Ok(Self { lu, matrix })
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        let mut sol = self.lu.solve(rhs).ok_or(QpError::SingularKkt)?;
        // One refinement pass.
        let residual = rhs - &self.matrix * &sol;
        if let Some(corr) = self.lu.solve(&residual) {
            sol += corr;
        }
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(QpError::NotFinite);
        }
        Ok(sol)
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    c_ineq: &DMatrix<f64>,
    d_ineq: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let me = b_eq.len();
    let mi = d_ineq.len();

    if mi == 0 {
        return solve_equality_qp(h, g, a_eq, b_eq);
    }

    let mut x = DVector::zeros(n);
    let mut lam = DVector::zeros(me);
    let mut s = DVector::from_fn(mi, |i, _| d_ineq[i].max(1.0));
    let mut mu = DVector::from_element(mi, 1.0);

    let scale_d = 1.0 + g.amax();
    let scale_p = 1.0 + b_eq.amax().max(d_ineq.amax());

    for iter in 0..max_iter {
        let r_d = h * &x + g + a_eq.transpose() * &lam + c_ineq.transpose() * &mu;
        let r_p = a_eq * &x - b_eq;
        let r_s = c_ineq * &x + &s - d_ineq;
        let comp = s.dot(&mu) / mi as f64;

        let converged = r_d.amax() <= tol * scale_d
            && (me == 0 || r_p.amax() <= tol * scale_p)
            && r_s.amax() <= tol * scale_p
            && comp <= tol * scale_d;
        if converged {
            return Ok(QpSolution { x, lambda_eq: lam, mu_ineq: mu, iterations: iter });
        }

        // Augmented system [H + C' D C, A'; A, 0] with D = mu / s.
        let dim = n + me;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut weighted = c_ineq.clone();
        for i in 0..mi {
            let w = mu[i] / s[i];
            if !w.is_finite() {
                return Err(QpError::NotFinite);
            }
            weighted.row_mut(i).scale_mut(w);
        }
        let htil = h + c_ineq.transpose() * &weighted;
        kkt.view_mut((0, 0), (n, n)).copy_from(&htil);
        if me > 0 {
            kkt.view_mut((0, n), (n, me)).copy_from(&a_eq.transpose());
            kkt.view_mut((n, 0), (me, n)).copy_from(a_eq);
        }
        let solver = KktSolver::new(kkt)?;

        let assemble_rhs = |rc: &DVector<f64>| -> DVector<f64> {
            // rc is the target of mu .* ds + s .* dmu.
            let mut coupled = DVector::zeros(mi);
            for i in 0..mi {
                coupled[i] = (rc[i] + mu[i] * r_s[i]) / s[i];
            }
            let mut rhs = DVector::zeros(n + me);
            let top = -&r_d - c_ineq.transpose() * coupled;
            rhs.rows_mut(0, n).copy_from(&top);
            if me > 0 {
                rhs.rows_mut(n, me).copy_from(&(-&r_p));
            }
            rhs
        };

        let recover = |step: &DVector<f64>, rc: &DVector<f64>| {
            let dx = step.rows(0, n).into_owned();
            let dlam = if me > 0 { step.rows(n, me).into_owned() } else { DVector::zeros(0) };
            let ds = -&r_s - c_ineq * &dx;
            let mut dmu = DVector::zeros(mi);
            for i in 0..mi {
                dmu[i] = (rc[i] - mu[i] * ds[i]) / s[i];
            }
            (dx, dlam, ds, dmu)
        };

        // Affine predictor.
        let rc_aff = DVector::from_fn(mi, |i, _| -s[i] * mu[i]);
        let step_aff = solver.solve(&assemble_rhs(&rc_aff))?;
        let (_, _, ds_aff, dmu_aff) = recover(&step_aff, &rc_aff);
        let alpha_p_aff = max_step(&s, &ds_aff);
        let alpha_d_aff = max_step(&mu, &dmu_aff);
        let comp_aff = (0..mi)
            .map(|i| (s[i] + alpha_p_aff * ds_aff[i]) * (mu[i] + alpha_d_aff * dmu_aff[i]))
            .sum::<f64>()
            / mi as f64;
        let sigma = if comp > 0.0 { (comp_aff / comp).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // Corrector.
        let rc =
            DVector::from_fn(mi, |i, _| sigma * comp - s[i] * mu[i] - ds_aff[i] * dmu_aff[i]);
        let step = solver.solve(&assemble_rhs(&rc))?;
        let (dx, dlam, ds, dmu) = recover(&step, &rc);

        let alpha_p = (FRACTION_TO_BOUNDARY * max_step(&s, &ds)).min(1.0);
        let alpha_d = (FRACTION_TO_BOUNDARY * max_step(&mu, &dmu)).min(1.0);

        x += &dx * alpha_p;
        s += &ds * alpha_p;
        if me > 0 {
            lam += &dlam * alpha_d;
        }
        mu += &dmu * alpha_d;

        if !x.iter().all(|v| v.is_finite()) || !mu.iter().all(|v| v.is_finite()) {
            return Err(QpError::NotFinite);
        }
    }
    Err(QpError::MaxIterations)
}

fn solve_equality_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let me = b_eq.len();
    let dim = n + me;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    if me > 0 {
        kkt.view_mut((0, n), (n, me)).copy_from(&a_eq.transpose());
        kkt.view_mut((n, 0), (me, n)).copy_from(a_eq);
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-g));
    if me > 0 {
        rhs.rows_mut(n, me).copy_from(b_eq);
    }
    let solver = KktSolver::new(kkt)?;
    let sol = solver.solve(&rhs)?;
    Ok(QpSolution {
        x: sol.rows(0, n).into_owned(),
        lambda_eq: if me > 0 { sol.rows(n, me).into_owned() } else { DVector::zeros(0) },
        mu_ineq: DVector::zeros(0),
        iterations: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unconstrained_minimum_inside_the_box_is_found() {
        // min (x0-1)^2 + (x1+2)^2 with -10 <= x <= 10.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let g = DVector::from_vec(vec![-2.0, 4.0]);
        let a = DMatrix::zeros(0, 2);
        let b = DVector::zeros(0);
        let mut c = DMatrix::zeros(4, 2);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        c[(2, 0)] = -1.0;
        c[(3, 1)] = -1.0;
        let d = DVector::from_element(4, 10.0);
        let sol = solve_qp(&h, &g, &a, &b, &c, &d, 1e-12, 60).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.x[1], -2.0, epsilon = 1e-8);
    }

    #[test]
    fn active_bound_produces_matching_multiplier() {
        // min x^2 - 10x s.t. x <= 2: solution x = 2, mu = 2*2 - 10 -> 6.
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, -10.0);
        let a = DMatrix::zeros(0, 1);
        let b = DVector::zeros(0);
        let c = DMatrix::from_element(1, 1, 1.0);
        let d = DVector::from_element(1, 2.0);
        let sol = solve_qp(&h, &g, &a, &b, &c, &d, 1e-12, 60).unwrap();
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(sol.mu_ineq[0], 6.0, epsilon = 1e-7);
    }

    #[test]
    fn equality_constrained_solution_satisfies_kkt() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let n = 6;
            let me = 2;
            let mi = 8;
            let m_raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let h = &m_raw * m_raw.transpose() + DMatrix::identity(n, n);
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let a = DMatrix::from_fn(me, n, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(me, |_, _| rng.gen_range(-0.5..0.5));
            let c = DMatrix::from_fn(mi, n, |_, _| rng.gen_range(-1.0..1.0));
            let d = DVector::from_fn(mi, |_, _| rng.gen_range(0.5..3.0));
            let sol = solve_qp(&h, &g, &a, &b, &c, &d, 1e-12, 80).unwrap();

            let stat = &h * &sol.x + &g + a.transpose() * &sol.lambda_eq
                + c.transpose() * &sol.mu_ineq;
            assert!(stat.amax() < 1e-7, "stationarity {}", stat.amax());
            assert!((&a * &sol.x - &b).amax() < 1e-8);
            let slack = &d - &c * &sol.x;
            for i in 0..mi {
                assert!(slack[i] > -1e-8);
                assert!(sol.mu_ineq[i] > -1e-12);
                assert!(sol.mu_ineq[i] * slack[i] < 1e-6);
            }
        }
    }
}
