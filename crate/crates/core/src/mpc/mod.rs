//! Parameterized MPC formulated as a slack-relaxed nonlinear program.
//!
//! The optimal control problem uses direct multiple shooting: decision
//! variables are the predicted states, the controls and nonnegative
//! slacks on the state box. Control bounds are hard, state bounds are
//! softened with an exact ell-1 penalty. The program is solved by a
//! dense SQP method with an interior-point QP subproblem solver and a
//! Newton polish on the converged active set.

mod model;
mod nlp;
mod qp;
mod solver;

pub use model::{CstrRk4Model, DiscreteModel, LinearDiscreteModel};
pub use nlp::MpcNlp;
pub use qp::{solve_qp, QpError, QpSolution};
pub use solver::{MpcError, MpcSolver, NlpSolution, SolveStatus, SolverSettings};

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::sim::{self, ModelVariant};
pub use crate::sim::{ControlVec, StateVec};

pub type ThetaVec = SVector<f64, 14>;

/// Lower clamp applied to the diagonal cost weights.
pub const THETA_DIAG_FLOOR: f64 = 1e-6;

/// Tunable parameters of the MPC cost: a scalar offset, diagonal stage
/// weights on states and controls, diagonal terminal weights, and linear
/// weights on the stacked state-control vector.
///
/// Packed order in the flat 14-vector: offset, q (3), r (2), t (3), g (5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub offset: f64,
    pub q_diag: [f64; 3],
    pub r_diag: [f64; 2],
    pub t_diag: [f64; 3],
    pub g_lin: [f64; 5],
}

impl ThetaVector {
    /// Initial controller parameters: stage and terminal weights copied
    /// from the tracking stage cost, no offset, no linear term.
    pub fn benchmark_initial() -> Self {
        Self {
            offset: 0.0,
            q_diag: sim::STATE_WEIGHTS,
            r_diag: sim::CONTROL_WEIGHTS,
            t_diag: sim::STATE_WEIGHTS,
            g_lin: [0.0; 5],
        }
    }

    pub fn as_vector(&self) -> ThetaVec {
        let mut v = ThetaVec::zeros();
        v[0] = self.offset;
        v.fixed_rows_mut::<3>(1).copy_from_slice(&self.q_diag);
        v.fixed_rows_mut::<2>(4).copy_from_slice(&self.r_diag);
        v.fixed_rows_mut::<3>(6).copy_from_slice(&self.t_diag);
        v.fixed_rows_mut::<5>(9).copy_from_slice(&self.g_lin);
        v
    }

    pub fn from_vector(v: &ThetaVec) -> Self {
        Self {
            offset: v[0],
            q_diag: [v[1], v[2], v[3]],
            r_diag: [v[4], v[5]],
            t_diag: [v[6], v[7], v[8]],
            g_lin: [v[9], v[10], v[11], v[12], v[13]],
        }
    }

    /// Clamps the diagonal weights at the positivity floor.
    pub fn clamped(&self) -> Self {
        let mut out = *self;
        for w in out.q_diag.iter_mut() {
            *w = w.max(THETA_DIAG_FLOOR);
        }
        for w in out.r_diag.iter_mut() {
            *w = w.max(THETA_DIAG_FLOOR);
        }
        for w in out.t_diag.iter_mut() {
            *w = w.max(THETA_DIAG_FLOOR);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.as_vector().iter().all(|v| v.is_finite())
    }

    pub fn satisfies_floor(&self) -> bool {
        self.q_diag.iter().chain(&self.r_diag).chain(&self.t_diag).all(|w| *w >= THETA_DIAG_FLOOR)
    }
}

/// Fixed data of the optimal control problem: horizon, discount, slack
/// penalties, references, boxes and the prediction model.
#[derive(Debug, Clone)]
pub struct MpcProblem<M> {
    pub horizon: usize,
    pub gamma: f64,
    pub slack_weight: StateVec,
    pub slack_weight_terminal: StateVec,
    pub x_ref: StateVec,
    pub u_ref: ControlVec,
    pub state_lower: StateVec,
    pub state_upper: StateVec,
    pub control_lower: ControlVec,
    pub control_upper: ControlVec,
    pub model: M,
}

impl MpcProblem<CstrRk4Model> {
    /// The reactor benchmark problem with its published constants.
    pub fn cstr(variant: ModelVariant) -> Self {
        Self::cstr_with(variant, 10, 0.99, sim::DEFAULT_DT)
    }

    pub fn cstr_with(variant: ModelVariant, horizon: usize, gamma: f64, dt: f64) -> Self {
        Self {
            horizon,
            gamma,
            slack_weight: StateVec::from(sim::PENALTY_WEIGHTS),
            slack_weight_terminal: StateVec::from(sim::PENALTY_WEIGHTS),
            x_ref: StateVec::from(sim::X_REF),
            u_ref: ControlVec::from(sim::U_REF),
            state_lower: StateVec::from(sim::STATE_LOWER),
            state_upper: StateVec::from(sim::STATE_UPPER),
            control_lower: ControlVec::from(sim::CONTROL_LOWER),
            control_upper: ControlVec::from(sim::CONTROL_UPPER),
            model: CstrRk4Model::new(sim::CstrParams::default(), variant, dt),
        }
    }
}

impl<M: DiscreteModel> MpcProblem<M> {
    pub fn n_vars(&self) -> usize {
        let n = self.horizon;
        3 * (n + 1) + 2 * n + 3 * (n + 1)
    }

    pub fn n_eq(&self) -> usize {
        3 * (self.horizon + 1)
    }

    pub fn n_ineq(&self) -> usize {
        let n = self.horizon;
        4 * n + 9 * (n + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_round_trips_through_the_flat_vector() {
        let theta = ThetaVector {
            offset: -3.0,
            q_diag: [1.0, 2.0, 3.0],
            r_diag: [4.0, 5.0],
            t_diag: [6.0, 7.0, 8.0],
            g_lin: [9.0, 10.0, 11.0, 12.0, 13.0],
        };
        let v = theta.as_vector();
        assert_eq!(ThetaVector::from_vector(&v), theta);
        assert_eq!(v[0], -3.0);
        assert_eq!(v[13], 13.0);
    }

    #[test]
    fn clamping_enforces_the_floor() {
        let mut theta = ThetaVector::benchmark_initial();
        theta.q_diag[0] = -5.0;
        theta.t_diag[2] = 0.0;
        let clamped = theta.clamped();
        assert_eq!(clamped.q_diag[0], THETA_DIAG_FLOOR);
        assert_eq!(clamped.t_diag[2], THETA_DIAG_FLOOR);
        assert!(clamped.satisfies_floor());
    }

    #[test]
    fn single_step_problem_has_fourteen_decision_variables() {
        let mut problem = MpcProblem::cstr(ModelVariant::Misspecified);
        problem.horizon = 1;
        assert_eq!(problem.n_vars(), 14);
    }
}
