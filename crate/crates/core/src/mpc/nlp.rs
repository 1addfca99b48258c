//! Multiple-shooting transcription of the MPC problem.
//!
//! Decision vector layout: predicted states x_0..x_N, controls
//! u_0..u_{N-1}, state slacks eta_0..eta_N. Equality constraints pin
//! x_0 to the measurement and enforce the shooting defects. Inequality
//! constraints (all linear) are hard control boxes, soft state boxes
//! h(x) <= eta and slack nonnegativity.
//!
//! The objective is
//!
//! ```text
//!   offset + gamma^N [ (x_N - xr)' T (x_N - xr) + Gf' eta_N ]
//!          + sum_i g' [x_i; u_i]            (controls up to N-1)
//!          + sum_{i<N} gamma^i [ (x_i - xr)' Q (x_i - xr)
//!                              + (u_i - ur)' R (u_i - ur) + G' eta_i ]
//! ```
//!
//! with diagonal Q, R, T. The linear term applies its state part at
//! every node including the terminal one; there is no u_N.

use nalgebra::{DMatrix, DVector, SMatrix};

use super::model::DiscreteModel;
use super::{ControlVec, MpcProblem, StateVec, ThetaVec, ThetaVector};
use crate::sim::SimError;

pub struct MpcNlp<'a, M> {
    pub problem: &'a MpcProblem<M>,
    pub theta: ThetaVector,
    pub x_init: StateVec,
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    gamma_pow: Vec<f64>,
    ineq_jac: DMatrix<f64>,
    ineq_offset: DVector<f64>,
    hess_diag: DVector<f64>,
}

impl<'a, M: DiscreteModel> MpcNlp<'a, M> {
    pub fn new(problem: &'a MpcProblem<M>, theta: &ThetaVector, x_init: StateVec) -> Self {
        let n = problem.horizon;
        let n_vars = problem.n_vars();
        let n_eq = problem.n_eq();
        let n_ineq = problem.n_ineq();
        let gamma_pow: Vec<f64> = (0..=n).map(|i| problem.gamma.powi(i as i32)).collect();

        let mut nlp = Self {
            problem,
            theta: *theta,
            x_init,
            n_vars,
            n_eq,
            n_ineq,
            gamma_pow,
            ineq_jac: DMatrix::zeros(n_ineq, n_vars),
            ineq_offset: DVector::zeros(n_ineq),
            hess_diag: DVector::zeros(n_vars),
        };
        nlp.build_linear_inequalities();
        nlp.build_hessian_diagonal();
        nlp
    }

    pub fn x_index(&self, i: usize) -> usize {
        3 * i
    }

    pub fn u_index(&self, i: usize) -> usize {
        3 * (self.problem.horizon + 1) + 2 * i
    }

    pub fn eta_index(&self, i: usize) -> usize {
        3 * (self.problem.horizon + 1) + 2 * self.problem.horizon + 3 * i
    }

    pub fn state_at(&self, z: &DVector<f64>, i: usize) -> StateVec {
        StateVec::new(z[self.x_index(i)], z[self.x_index(i) + 1], z[self.x_index(i) + 2])
    }

    pub fn control_at(&self, z: &DVector<f64>, i: usize) -> ControlVec {
        ControlVec::new(z[self.u_index(i)], z[self.u_index(i) + 1])
    }

    pub fn slack_at(&self, z: &DVector<f64>, i: usize) -> StateVec {
        StateVec::new(z[self.eta_index(i)], z[self.eta_index(i) + 1], z[self.eta_index(i) + 2])
    }

    fn build_linear_inequalities(&mut self) {
        let n = self.problem.horizon;
        let p = self.problem;
        let mut row = 0;
        for i in 0..n {
            for j in 0..2 {
                self.ineq_jac[(row, self.u_index(i) + j)] = -1.0;
                self.ineq_offset[row] = p.control_lower[j];
                row += 1;
            }
        }
        for i in 0..n {
            for j in 0..2 {
                self.ineq_jac[(row, self.u_index(i) + j)] = 1.0;
                self.ineq_offset[row] = -p.control_upper[j];
                row += 1;
            }
        }
        for i in 0..=n {
            for j in 0..3 {
                self.ineq_jac[(row, self.x_index(i) + j)] = -1.0;
                self.ineq_jac[(row, self.eta_index(i) + j)] = -1.0;
                self.ineq_offset[row] = p.state_lower[j];
                row += 1;
            }
        }
        for i in 0..=n {
            for j in 0..3 {
                self.ineq_jac[(row, self.x_index(i) + j)] = 1.0;
                self.ineq_jac[(row, self.eta_index(i) + j)] = -1.0;
                self.ineq_offset[row] = -p.state_upper[j];
                row += 1;
            }
        }
        for i in 0..=n {
            for j in 0..3 {
                self.ineq_jac[(row, self.eta_index(i) + j)] = -1.0;
                row += 1;
            }
        }
        debug_assert_eq!(row, self.n_ineq);
    }

    fn build_hessian_diagonal(&mut self) {
        let n = self.problem.horizon;
        for i in 0..n {
            for j in 0..3 {
                self.hess_diag[self.x_index(i) + j] = 2.0 * self.gamma_pow[i] * self.theta.q_diag[j];
            }
            for j in 0..2 {
                self.hess_diag[self.u_index(i) + j] = 2.0 * self.gamma_pow[i] * self.theta.r_diag[j];
            }
        }
        for j in 0..3 {
            self.hess_diag[self.x_index(n) + j] = 2.0 * self.gamma_pow[n] * self.theta.t_diag[j];
        }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let n = self.problem.horizon;
        let p = self.problem;
        let th = &self.theta;
        let mut total = th.offset;
        for i in 0..n {
            let x = self.state_at(z, i);
            let u = self.control_at(z, i);
            let eta = self.slack_at(z, i);
            let mut stage = 0.0;
            for j in 0..3 {
                let d = x[j] - p.x_ref[j];
                stage += th.q_diag[j] * d * d + p.slack_weight[j] * eta[j];
            }
            for j in 0..2 {
                let d = u[j] - p.u_ref[j];
                stage += th.r_diag[j] * d * d;
            }
            total += self.gamma_pow[i] * stage;
            for j in 0..3 {
                total += th.g_lin[j] * x[j];
            }
            for j in 0..2 {
                total += th.g_lin[3 + j] * u[j];
            }
        }
        let x_n = self.state_at(z, n);
        let eta_n = self.slack_at(z, n);
        let mut terminal = 0.0;
        for j in 0..3 {
            let d = x_n[j] - p.x_ref[j];
            terminal += th.t_diag[j] * d * d + p.slack_weight_terminal[j] * eta_n[j];
        }
        total += self.gamma_pow[n] * terminal;
        for j in 0..3 {
            total += th.g_lin[j] * x_n[j];
        }
        total
    }

    pub fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.problem.horizon;
        let p = self.problem;
        let th = &self.theta;
        let mut g = DVector::zeros(self.n_vars);
        for i in 0..n {
            let gp = self.gamma_pow[i];
            for j in 0..3 {
                let d = z[self.x_index(i) + j] - p.x_ref[j];
                g[self.x_index(i) + j] = 2.0 * gp * th.q_diag[j] * d + th.g_lin[j];
                g[self.eta_index(i) + j] = gp * p.slack_weight[j];
            }
            for j in 0..2 {
                let d = z[self.u_index(i) + j] - p.u_ref[j];
                g[self.u_index(i) + j] = 2.0 * gp * th.r_diag[j] * d + th.g_lin[3 + j];
            }
        }
        let gp = self.gamma_pow[n];
        for j in 0..3 {
            let d = z[self.x_index(n) + j] - p.x_ref[j];
            g[self.x_index(n) + j] = 2.0 * gp * th.t_diag[j] * d + th.g_lin[j];
            g[self.eta_index(n) + j] = gp * p.slack_weight_terminal[j];
        }
        g
    }

    /// Constant diagonal of the objective Hessian.
    pub fn objective_hessian_diag(&self) -> &DVector<f64> {
        &self.hess_diag
    }

    pub fn eq_constraints(&self, z: &DVector<f64>) -> Result<DVector<f64>, SimError> {
        let n = self.problem.horizon;
        let mut g = DVector::zeros(self.n_eq);
        for j in 0..3 {
            g[j] = z[self.x_index(0) + j] - self.x_init[j];
        }
        for i in 0..n {
            let next = self.problem.model.step(&self.state_at(z, i), &self.control_at(z, i))?;
            for j in 0..3 {
                g[3 * (i + 1) + j] = z[self.x_index(i + 1) + j] - next[j];
            }
        }
        Ok(g)
    }

    pub fn eq_with_jacobian(
        &self,
        z: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), SimError> {
        let n = self.problem.horizon;
        let mut g = DVector::zeros(self.n_eq);
        let mut jac = DMatrix::zeros(self.n_eq, self.n_vars);
        for j in 0..3 {
            g[j] = z[self.x_index(0) + j] - self.x_init[j];
            jac[(j, self.x_index(0) + j)] = 1.0;
        }
        for i in 0..n {
            let (next, jx, ju) = self
                .problem
                .model
                .step_with_jacobians(&self.state_at(z, i), &self.control_at(z, i))?;
            for r in 0..3 {
                let row = 3 * (i + 1) + r;
                g[row] = z[self.x_index(i + 1) + r] - next[r];
                jac[(row, self.x_index(i + 1) + r)] = 1.0;
                for c in 0..3 {
                    jac[(row, self.x_index(i) + c)] = -jx[(r, c)];
                }
                for c in 0..2 {
                    jac[(row, self.u_index(i) + c)] = -ju[(r, c)];
                }
            }
        }
        Ok((g, jac))
    }

    pub fn ineq_constraints(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.ineq_jac * z + &self.ineq_offset
    }

    pub fn ineq_jacobian(&self) -> &DMatrix<f64> {
        &self.ineq_jac
    }

    /// Hessian of the Lagrangian w.r.t. the primal variables.
    ///
    /// The objective contributes its constant diagonal; the shooting
    /// defects contribute -sum_m lambda_m d2 F_m, evaluated by central
    /// differences of the exact step Jacobians.
    pub fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DMatrix<f64>, SimError> {
        let n = self.problem.horizon;
        let mut h = DMatrix::zeros(self.n_vars, self.n_vars);
        for d in 0..self.n_vars {
            h[(d, d)] = self.hess_diag[d];
        }
        for i in 0..n {
            let lam = StateVec::new(lambda[3 * (i + 1)], lambda[3 * (i + 1) + 1], lambda[3 * (i + 1) + 2]);
            if lam.amax() == 0.0 {
                continue;
            }
            let x = self.state_at(z, i);
            let u = self.control_at(z, i);
            let block = self.defect_curvature(&x, &u, &lam)?;
            let idx = |d: usize| if d < 3 { self.x_index(i) + d } else { self.u_index(i) + d - 3 };
            for a in 0..5 {
                for b in 0..5 {
                    h[(idx(a), idx(b))] -= block[(a, b)];
                }
            }
        }
        Ok(h)
    }

    /// lambda-weighted second derivative of the step map on one node.
    fn defect_curvature(
        &self,
        x: &StateVec,
        u: &ControlVec,
        lam: &StateVec,
    ) -> Result<SMatrix<f64, 5, 5>, SimError> {
        let mut stacked = [[0.0; 5]; 5];
        for d in 0..5 {
            let base = if d < 3 { x[d] } else { u[d - 3] };
            let h = 1e-5 * (1.0 + base.abs());
            let mut xp = *x;
            let mut xm = *x;
            let mut up = *u;
            let mut um = *u;
            if d < 3 {
                xp[d] += h;
                xm[d] -= h;
            } else {
                up[d - 3] += h;
                um[d - 3] -= h;
            }
            let (_, jxp, jup) = self.problem.model.step_with_jacobians(&xp, &up)?;
            let (_, jxm, jum) = self.problem.model.step_with_jacobians(&xm, &um)?;
            for e in 0..5 {
                let mut acc = 0.0;
                for m in 0..3 {
                    let dp = if e < 3 { jxp[(m, e)] } else { jup[(m, e - 3)] };
                    let dm = if e < 3 { jxm[(m, e)] } else { jum[(m, e - 3)] };
                    acc += lam[m] * (dp - dm) / (2.0 * h);
                }
                stacked[d][e] = acc;
            }
        }
        let mut block = SMatrix::<f64, 5, 5>::zeros();
        for a in 0..5 {
            for b in 0..5 {
                block[(a, b)] = 0.5 * (stacked[a][b] + stacked[b][a]);
            }
        }
        Ok(block)
    }

    /// Partial derivative of the objective w.r.t. the 14 cost parameters.
    pub fn objective_theta_gradient(&self, z: &DVector<f64>) -> ThetaVec {
        let n = self.problem.horizon;
        let p = self.problem;
        let mut g = ThetaVec::zeros();
        g[0] = 1.0;
        for i in 0..n {
            let gp = self.gamma_pow[i];
            for j in 0..3 {
                let d = z[self.x_index(i) + j] - p.x_ref[j];
                g[1 + j] += gp * d * d;
                g[9 + j] += z[self.x_index(i) + j];
            }
            for j in 0..2 {
                let d = z[self.u_index(i) + j] - p.u_ref[j];
                g[4 + j] += gp * d * d;
                g[12 + j] += z[self.u_index(i) + j];
            }
        }
        let gp = self.gamma_pow[n];
        for j in 0..3 {
            let d = z[self.x_index(n) + j] - p.x_ref[j];
            g[6 + j] = gp * d * d;
            g[9 + j] += z[self.x_index(n) + j];
        }
        g
    }

    /// Mixed second derivative d(grad_z objective)/d(theta), n_vars x 14.
    pub fn objective_cross_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.problem.horizon;
        let p = self.problem;
        let mut jac = DMatrix::zeros(self.n_vars, 14);
        for i in 0..n {
            let gp = self.gamma_pow[i];
            for j in 0..3 {
                let row = self.x_index(i) + j;
                jac[(row, 1 + j)] = 2.0 * gp * (z[row] - p.x_ref[j]);
                jac[(row, 9 + j)] = 1.0;
            }
            for j in 0..2 {
                let row = self.u_index(i) + j;
                jac[(row, 4 + j)] = 2.0 * gp * (z[row] - p.u_ref[j]);
                jac[(row, 12 + j)] = 1.0;
            }
        }
        let gp = self.gamma_pow[n];
        for j in 0..3 {
            let row = self.x_index(n) + j;
            jac[(row, 6 + j)] = 2.0 * gp * (z[row] - p.x_ref[j]);
            jac[(row, 9 + j)] = 1.0;
        }
        jac
    }
}
