//! SQP solver for the multiple-shooting MPC program.
//!
//! Outer loop: sequential quadratic programming with exact constraint
//! Jacobians, an ell-1 merit line search and an adaptively convexified
//! Lagrangian Hessian (objective curvature is exact, defect curvature
//! comes from differentiating the exact step Jacobians). Inner loop:
//! the interior-point QP in [`super::qp`]. Once the KKT residual is
//! small the active set is frozen and a Newton polish drives the
//! residual to the requested tolerance.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::model::DiscreteModel;
use super::nlp::MpcNlp;
use super::qp::{solve_qp, QpError};
use super::{ControlVec, MpcProblem, StateVec, ThetaVector};
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("cost parameters violate their invariants (finite, diagonal floor)")]
    InvalidTheta,
    #[error("invalid initial state: {0}")]
    InvalidState(#[from] SimError),
    #[error("solver did not produce a usable solution: status {status:?}, KKT residual {kkt:.3e}")]
    SolverFailed { status: SolveStatus, kkt: f64 },
    #[error("stale solution: sensitivities require a converged solve")]
    StaleSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// Primal-dual solution of one MPC instance.
#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub states: Vec<StateVec>,
    pub controls: Vec<ControlVec>,
    pub slacks: Vec<StateVec>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub stationarity: f64,
    pub feasibility: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
    pub x_init: StateVec,
    pub iterations: usize,
}

impl NlpSolution {
    pub fn kkt_residual(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }

    pub fn first_control(&self) -> ControlVec {
        self.controls[0]
    }

    pub fn primal_vector(&self) -> DVector<f64> {
        let n = self.controls.len();
        let n_vars = 3 * (n + 1) + 2 * n + 3 * (n + 1);
        let mut z = DVector::zeros(n_vars);
        for (i, x) in self.states.iter().enumerate() {
            z.rows_mut(3 * i, 3).copy_from(x);
        }
        for (i, u) in self.controls.iter().enumerate() {
            z.rows_mut(3 * (n + 1) + 2 * i, 2).copy_from(u);
        }
        for (i, eta) in self.slacks.iter().enumerate() {
            z.rows_mut(3 * (n + 1) + 2 * n + 3 * i, 3).copy_from(eta);
        }
        z
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    /// KKT residual below which the Newton polish is attempted.
    pub polish_trigger: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { kkt_tol: 1e-8, max_iter: 200, qp_tol: 1e-12, qp_max_iter: 80, polish_trigger: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Residuals {
    stationarity: f64,
    primal: f64,
    dual: f64,
    complementarity: f64,
}

impl Residuals {
    fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub struct MpcSolver<M> {
    pub problem: MpcProblem<M>,
    pub settings: SolverSettings,
}

impl<M: DiscreteModel> MpcSolver<M> {
    pub fn new(problem: MpcProblem<M>) -> Self {
        Self { problem, settings: SolverSettings::default() }
    }

    pub fn with_settings(problem: MpcProblem<M>, settings: SolverSettings) -> Self {
        Self { problem, settings }
    }

    /// Solves the MPC program at the measured state.
    pub fn solve(
        &self,
        theta: &ThetaVector,
        x_k: &StateVec,
        warm_start: Option<&NlpSolution>,
    ) -> Result<NlpSolution, MpcError> {
        if !theta.is_finite() || !theta.satisfies_floor() {
            return Err(MpcError::InvalidTheta);
        }
        if !x_k.iter().all(|v| v.is_finite()) {
            return Err(MpcError::InvalidState(SimError::NonFinite { field: "state" }));
        }
        let nlp = MpcNlp::new(&self.problem, theta, *x_k);
        let z0 = match warm_start {
            Some(prev) => self.shifted_guess(prev, x_k),
            None => self.cold_start(x_k),
        };
        self.run_sqp(&nlp, z0)
    }

    /// First element of the optimal control sequence.
    pub fn policy(
        &self,
        theta: &ThetaVector,
        x_k: &StateVec,
        warm_start: Option<&NlpSolution>,
    ) -> Result<ControlVec, MpcError> {
        let sol = self.solve(theta, x_k, warm_start)?;
        Self::require_usable(&sol)?;
        Ok(sol.first_control())
    }

    /// Optimal value of the MPC program.
    pub fn value(
        &self,
        theta: &ThetaVector,
        x_k: &StateVec,
        warm_start: Option<&NlpSolution>,
    ) -> Result<f64, MpcError> {
        let sol = self.solve(theta, x_k, warm_start)?;
        Self::require_usable(&sol)?;
        Ok(sol.objective)
    }

    pub fn require_usable(sol: &NlpSolution) -> Result<(), MpcError> {
        let ok = match sol.status {
            SolveStatus::Converged => true,
            SolveStatus::MaxIter => sol.kkt_residual() < 1e-4,
            SolveStatus::Infeasible => false,
        };
        if ok {
            Ok(())
        } else {
            Err(MpcError::SolverFailed { status: sol.status, kkt: sol.kkt_residual() })
        }
    }

    /// Reference-hold initial guess: controls pinned at the reference,
    /// states rolled out under the prediction model, slacks covering any
    /// box violation of the rollout.
    fn cold_start(&self, x_k: &StateVec) -> DVector<f64> {
        let p = &self.problem;
        let n = p.horizon;
        let u0 = ControlVec::from_fn(|j, _| p.u_ref[j].clamp(p.control_lower[j], p.control_upper[j]));
        let mut states = Vec::with_capacity(n + 1);
        states.push(*x_k);
        for i in 0..n {
            let next = p.model.step(&states[i], &u0).unwrap_or(states[i]);
            states.push(next);
        }
        let mut z = DVector::zeros(p.n_vars());
        for (i, x) in states.iter().enumerate() {
            z.rows_mut(3 * i, 3).copy_from(x);
            let eta = StateVec::from_fn(|j, _| {
                (p.state_lower[j] - x[j]).max(x[j] - p.state_upper[j]).max(0.0)
            });
            z.rows_mut(3 * (n + 1) + 2 * n + 3 * i, 3).copy_from(&eta);
        }
        for i in 0..n {
            z.rows_mut(3 * (n + 1) + 2 * i, 2).copy_from(&u0);
        }
        z
    }

    /// Receding-horizon warm start: shift the previous solution by one
    /// interval, duplicate the tail, pin the new measured state.
    fn shifted_guess(&self, prev: &NlpSolution, x_k: &StateVec) -> DVector<f64> {
        let p = &self.problem;
        let n = p.horizon;
        let mut z = DVector::zeros(p.n_vars());
        for i in 0..=n {
            let src = (i + 1).min(n);
            z.rows_mut(3 * i, 3).copy_from(&prev.states[src]);
            z.rows_mut(3 * (n + 1) + 2 * n + 3 * i, 3).copy_from(&prev.slacks[src]);
        }
        for i in 0..n {
            let src = (i + 1).min(n - 1);
            z.rows_mut(3 * (n + 1) + 2 * i, 2).copy_from(&prev.controls[src]);
        }
        z.rows_mut(0, 3).copy_from(x_k);
        z
    }

    fn run_sqp(&self, nlp: &MpcNlp<'_, M>, z0: DVector<f64>) -> Result<NlpSolution, MpcError> {
        let s = &self.settings;
        let n_eq = nlp.n_eq;
        let n_ineq = nlp.n_ineq;

        let mut z = z0;
        let mut lam = DVector::zeros(n_eq);
        let mut mu = DVector::zeros(n_ineq);
        // Make sure the starting point is evaluable; if the warm start is
        // somehow broken fall back to the cold start.
        if nlp.eq_constraints(&z).is_err() {
            z = self.cold_start(&nlp.x_init);
        }

        let mut sigma_pen = 10.0f64;
        let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
        let mut stalls = 0usize;
        let mut polish_attempts = 0usize;
        let mut qp_breakdown = false;
        let mut iterations = 0usize;

        for iter in 0..s.max_iter {
            iterations = iter;
            let grad = nlp.objective_gradient(&z);
            let (ceq, jeq) = match nlp.eq_with_jacobian(&z) {
                Ok(v) => v,
                Err(_) => break,
            };
            let cineq = nlp.ineq_constraints(&z);
            let res = residuals(&grad, &ceq, &jeq, &cineq, nlp.ineq_jacobian(), &lam, &mu);

            if best.as_ref().map_or(true, |(b, ..)| res.max() < *b) {
                best = Some((res.max(), z.clone(), lam.clone(), mu.clone()));
            }
            if res.max() <= s.kkt_tol {
                return Ok(self.assemble(nlp, z, lam, mu, SolveStatus::Converged, iterations));
            }
            if res.max() <= s.polish_trigger && polish_attempts < 3 {
                polish_attempts += 1;
                if let Some((pz, plam, pmu, pres)) = self.polish(nlp, &z, &lam, &mu) {
                    if pres.max() <= s.kkt_tol {
                        return Ok(self.assemble(
                            nlp,
                            pz,
                            plam,
                            pmu,
                            SolveStatus::Converged,
                            iterations,
                        ));
                    }
                    if pres.max() < res.max() {
                        z = pz;
                        lam = plam;
                        mu = pmu;
                        continue;
                    }
                }
            }

            // Lagrangian Hessian; early iterations have unreliable
            // multipliers, use the convex objective curvature alone.
            let diag_h = DMatrix::from_diagonal(nlp.objective_hessian_diag());
            let h_exact = if iter >= 2 {
                nlp.lagrangian_hessian(&z, &lam).unwrap_or_else(|_| diag_h.clone())
            } else {
                diag_h.clone()
            };

            let b_eq = -&ceq;
            let d_ineq = -&cineq;
            let mut qp = None;
            let h_scale = 1.0 + nlp.objective_hessian_diag().amax();
            let mut rho = 0.0f64;
            for attempt in 0..4 {
                let h_try = if attempt == 3 {
                    diag_h.clone()
                } else if rho > 0.0 {
                    let mut h = h_exact.clone();
                    for i in 0..h.nrows() {
                        h[(i, i)] += rho;
                    }
                    h
                } else {
                    h_exact.clone()
                };
                match solve_qp(&h_try, &grad, &jeq, &b_eq, nlp.ineq_jacobian(), &d_ineq, s.qp_tol, s.qp_max_iter)
                {
                    Ok(sol) => {
                        qp = Some(sol);
                        break;
                    }
                    Err(QpError::MaxIterations) | Err(QpError::SingularKkt) | Err(QpError::NotFinite) => {
                        rho = if rho == 0.0 { 1e-6 * h_scale } else { rho * 100.0 };
                    }
                }
            }
            let Some(qp) = qp else {
                qp_breakdown = true;
                break;
            };

            let d = qp.x;
            let mult_scale = qp.lambda_eq.amax().max(qp.mu_ineq.amax());
            sigma_pen = sigma_pen.max(2.0 * mult_scale + 1.0);

            let viol = |ceq: &DVector<f64>, cineq: &DVector<f64>| {
                ceq.iter().map(|v| v.abs()).sum::<f64>()
                    + cineq.iter().map(|v| v.max(0.0)).sum::<f64>()
            };
            let merit0 = nlp.objective(&z) + sigma_pen * viol(&ceq, &cineq);
            let descent = grad.dot(&d) - sigma_pen * viol(&ceq, &cineq);

            let mut alpha = 1.0f64;
            let mut accepted = false;
            for _ in 0..40 {
                let z_trial = &z + &d * alpha;
                if let Ok(ceq_t) = nlp.eq_constraints(&z_trial) {
                    let cineq_t = nlp.ineq_constraints(&z_trial);
                    let merit_t = nlp.objective(&z_trial) + sigma_pen * viol(&ceq_t, &cineq_t);
                    if merit_t <= merit0 + 1e-4 * alpha * descent.min(0.0) {
                        z = z_trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Full steps near the solution can be rejected by the merit
                // function even when they reduce the KKT error; accept on a
                // measured residual decrease instead.
                let z_trial = &z + &d;
                if let Ok(ceq_t) = nlp.eq_constraints(&z_trial) {
                    if let Ok((_, jeq_t)) = nlp.eq_with_jacobian(&z_trial) {
                        let grad_t = nlp.objective_gradient(&z_trial);
                        let cineq_t = nlp.ineq_constraints(&z_trial);
                        let res_t = residuals(
                            &grad_t,
                            &ceq_t,
                            &jeq_t,
                            &cineq_t,
                            nlp.ineq_jacobian(),
                            &qp.lambda_eq,
                            &qp.mu_ineq,
                        );
                        if res_t.max() < 0.9 * res.max() {
                            z = z_trial;
                            alpha = 1.0;
                            accepted = true;
                        }
                    }
                }
            }
            if accepted {
                stalls = 0;
                lam = &lam * (1.0 - alpha) + &qp.lambda_eq * alpha;
                mu = &mu * (1.0 - alpha) + &qp.mu_ineq * alpha;
            } else {
                stalls += 1;
                lam = qp.lambda_eq;
                mu = qp.mu_ineq;
                if stalls >= 2 {
                    break;
                }
            }
        }

        // Last-chance polish from the best iterate seen.
        let (best_kkt, bz, blam, bmu) =
            best.unwrap_or((f64::INFINITY, z.clone(), lam.clone(), mu.clone()));
        if best_kkt < 1e-2 {
            if let Some((pz, plam, pmu, pres)) = self.polish(nlp, &bz, &blam, &bmu) {
                if pres.max() <= s.kkt_tol {
                    return Ok(self.assemble(nlp, pz, plam, pmu, SolveStatus::Converged, iterations));
                }
                if pres.max() < best_kkt {
                    let status =
                        if qp_breakdown { SolveStatus::Infeasible } else { SolveStatus::MaxIter };
                    return Ok(self.assemble(nlp, pz, plam, pmu, status, iterations));
                }
            }
        }
        let status = if qp_breakdown { SolveStatus::Infeasible } else { SolveStatus::MaxIter };
        Ok(self.assemble(nlp, bz, blam, bmu, status, iterations))
    }

    /// Newton iterations on the KKT equations of the frozen active set.
    fn polish(
        &self,
        nlp: &MpcNlp<'_, M>,
        z0: &DVector<f64>,
        lam0: &DVector<f64>,
        mu0: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, Residuals)> {
        let cineq = nlp.ineq_constraints(z0);
        let mu_scale = 1.0 + mu0.amax();
        let mut active: Vec<usize> = (0..nlp.n_ineq)
            .filter(|&j| cineq[j] >= -1e-6 * (1.0 + cineq[j].abs()) || mu0[j] > 1e-8 * mu_scale)
            .collect();

        for _ in 0..2 {
            let (z, lam, mu_a) = self.polish_with_active(nlp, z0, lam0, mu0, &active)?;
            // Multipliers of truly active rows must be nonnegative; drop
            // offenders and retry once.
            let negative: Vec<usize> = active
                .iter()
                .enumerate()
                .filter(|(k, _)| mu_a[*k] < -1e-9 * mu_scale)
                .map(|(k, _)| k)
                .collect();
            if negative.is_empty() {
                let mut mu_full = DVector::zeros(nlp.n_ineq);
                for (k, &j) in active.iter().enumerate() {
                    mu_full[j] = mu_a[k].max(0.0);
                }
                let grad = nlp.objective_gradient(&z);
                let (ceq, jeq) = nlp.eq_with_jacobian(&z).ok()?;
                let ci = nlp.ineq_constraints(&z);
                let res =
                    residuals(&grad, &ceq, &jeq, &ci, nlp.ineq_jacobian(), &lam, &mu_full);
                return Some((z, lam, mu_full, res));
            }
            for k in negative.into_iter().rev() {
                active.remove(k);
            }
        }
        None
    }

    fn polish_with_active(
        &self,
        nlp: &MpcNlp<'_, M>,
        z0: &DVector<f64>,
        lam0: &DVector<f64>,
        mu0: &DVector<f64>,
        active: &[usize],
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = nlp.n_vars;
        let me = nlp.n_eq;
        let na = active.len();
        let dim = n + me + na;
        let target = 0.05 * self.settings.kkt_tol;

        let mut z = z0.clone();
        // Pin the measured state exactly; the first equality rows are the
        // identity so Newton keeps it there.
        z.rows_mut(0, 3).copy_from(&nlp.x_init);
        let mut lam = lam0.clone();
        let mut mu_a = DVector::from_fn(na, |k, _| mu0[active[k]].max(0.0));

        let j_ineq = nlp.ineq_jacobian();
        let mut prev_norm = f64::INFINITY;

        for it in 0..12 {
            let grad = nlp.objective_gradient(&z);
            let (ceq, jeq) = nlp.eq_with_jacobian(&z).ok()?;
            let cineq = nlp.ineq_constraints(&z);

            let mut f_vec = DVector::zeros(dim);
            let mut stat = grad.clone() + jeq.transpose() * &lam;
            for (k, &j) in active.iter().enumerate() {
                stat += j_ineq.row(j).transpose() * mu_a[k];
            }
            f_vec.rows_mut(0, n).copy_from(&stat);
            f_vec.rows_mut(n, me).copy_from(&ceq);
            for (k, &j) in active.iter().enumerate() {
                f_vec[n + me + k] = cineq[j];
            }

            let norm = f_vec.amax();
            if !norm.is_finite() {
                return None;
            }
            if norm <= target || (it > 2 && norm >= prev_norm) {
                break;
            }
            prev_norm = norm;

            let diag_fallback = DMatrix::from_diagonal(nlp.objective_hessian_diag());
            let h = nlp.lagrangian_hessian(&z, &lam).unwrap_or(diag_fallback);

            let mut big = DMatrix::zeros(dim, dim);
            big.view_mut((0, 0), (n, n)).copy_from(&h);
            big.view_mut((0, n), (n, me)).copy_from(&jeq.transpose());
            big.view_mut((n, 0), (me, n)).copy_from(&jeq);
            for (k, &j) in active.iter().enumerate() {
                for c in 0..n {
                    big[(c, n + me + k)] = j_ineq[(j, c)];
                    big[(n + me + k, c)] = j_ineq[(j, c)];
                }
            }
            let lu = big.clone().lu();
            let rhs = -&f_vec;
            let mut step = lu.solve(&rhs)?;
            let resid = &rhs - &big * &step;
            if let Some(corr) = lu.solve(&resid) {
                step += corr;
            }
            if !step.iter().all(|v| v.is_finite()) {
                return None;
            }

            z += step.rows(0, n);
            lam += step.rows(n, me);
            mu_a += step.rows(n + me, na);
        }
        Some((z, lam, mu_a))
    }

    fn assemble(
        &self,
        nlp: &MpcNlp<'_, M>,
        mut z: DVector<f64>,
        lam: DVector<f64>,
        mut mu: DVector<f64>,
        status: SolveStatus,
        iterations: usize,
    ) -> NlpSolution {
        let n = self.problem.horizon;
        z.rows_mut(0, 3).copy_from(&nlp.x_init);
        for v in mu.iter_mut() {
            if *v < 0.0 && *v > -1e-12 {
                *v = 0.0;
            }
        }
        let grad = nlp.objective_gradient(&z);
        let (res, feas_ok) = match nlp.eq_with_jacobian(&z) {
            Ok((ceq, jeq)) => {
                let cineq = nlp.ineq_constraints(&z);
                (residuals(&grad, &ceq, &jeq, &cineq, nlp.ineq_jacobian(), &lam, &mu), true)
            }
            Err(_) => (
                Residuals {
                    stationarity: f64::INFINITY,
                    primal: f64::INFINITY,
                    dual: f64::INFINITY,
                    complementarity: f64::INFINITY,
                },
                false,
            ),
        };
        let status = if !feas_ok {
            SolveStatus::Infeasible
        } else if res.max() <= self.settings.kkt_tol {
            SolveStatus::Converged
        } else if status == SolveStatus::Converged {
            SolveStatus::MaxIter
        } else {
            status
        };

        let states = (0..=n).map(|i| nlp.state_at(&z, i)).collect();
        let controls = (0..n).map(|i| nlp.control_at(&z, i)).collect();
        let slacks = (0..=n).map(|i| nlp.slack_at(&z, i)).collect();
        NlpSolution {
            states,
            controls,
            slacks,
            lambda: lam,
            mu,
            objective: nlp.objective(&z),
            status,
            stationarity: res.stationarity,
            feasibility: res.primal,
            dual_feasibility: res.dual,
            complementarity: res.complementarity,
            x_init: nlp.x_init,
            iterations,
        }
    }
}

fn residuals(
    grad: &DVector<f64>,
    ceq: &DVector<f64>,
    jeq: &DMatrix<f64>,
    cineq: &DVector<f64>,
    jineq: &DMatrix<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
) -> Residuals {
    let stat = grad + jeq.transpose() * lam + jineq.transpose() * mu;
    let primal_eq = ceq.amax();
    let primal_ineq = cineq.iter().fold(0.0f64, |acc, v| acc.max(*v));
    let dual = mu.iter().fold(0.0f64, |acc, v| acc.max(-*v));
    let comp = (0..mu.len())
        .map(|j| mu[j].min(-cineq[j]).abs())
        .fold(0.0f64, f64::max);
    Residuals {
        stationarity: stat.amax(),
        primal: primal_eq.max(primal_ineq),
        dual,
        complementarity: comp,
    }
}
