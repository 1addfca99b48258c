//! Closed-loop tuning of a parameterized model predictive controller.
//!
//! The crate couples three pieces:
//!
//! * a slack-relaxed MPC solved as a nonlinear program by a dense SQP
//!   method, together with exact KKT-based sensitivities of its policy
//!   and value with respect to the cost parameters,
//! * a compatible deterministic policy-gradient critic fitted per
//!   episode with least-squares temporal differences, and
//! * a multi-objective Bayesian optimizer (Gaussian-process surrogates,
//!   expected hypervolume improvement) proposing new cost parameters
//!   from four closed-loop objectives.
//!
//! The benchmark plant is a continuous stirred tank reactor simulated
//! with a fixed-step RK4 integrator; the controller deliberately uses a
//! biased model of it. A small finite-MDP harness verifies that the
//! telescoping cost modification recovers the optimal value function
//! under such model mismatch.

pub mod cdpg;
pub mod experiment;
pub mod gp;
pub mod mdp;
pub mod mobo;
pub mod mpc;
pub mod objectives;
pub mod sensitivity;
pub mod sim;

pub use cdpg::{CriticParams, EpisodeLog, StepRecord, TerminalRecord};
pub use experiment::{ExperimentConfig, Mode};
pub use gp::{GpHyperParams, GpModel};
pub use mobo::{ParetoArchive, Hypervolume};
pub use mpc::{
    ControlVec, MpcProblem, MpcSolver, NlpSolution, SolveStatus, StateVec, ThetaVec, ThetaVector,
};
pub use objectives::ObjectiveVector;
pub use sim::{CstrControl, CstrParams, CstrState, ModelVariant};

/// Dimension of the MPC cost parameter vector.
pub const THETA_DIM: usize = 14;
