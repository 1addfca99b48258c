//! Discrete-time prediction models used inside the MPC.

use nalgebra::SMatrix;

use crate::sim::{
    rk4_step_vec, vector_field_jacobians, vector_field_unchecked, ControlVec, CstrParams,
    ModelBiases, ModelVariant, SimError, StateVec,
};

pub type StateJacobian = SMatrix<f64, 3, 3>;
pub type ControlJacobian = SMatrix<f64, 3, 2>;

/// One-step discrete dynamics with exact first derivatives.
pub trait DiscreteModel {
    fn step(&self, x: &StateVec, u: &ControlVec) -> Result<StateVec, SimError>;

    /// Next state together with its Jacobians w.r.t. state and control.
    fn step_with_jacobians(
        &self,
        x: &StateVec,
        u: &ControlVec,
    ) -> Result<(StateVec, StateJacobian, ControlJacobian), SimError>;
}

/// RK4 discretization of the reactor vector field under zero-order hold.
#[derive(Debug, Clone, Copy)]
pub struct CstrRk4Model {
    pub params: CstrParams,
    pub biases: ModelBiases,
    pub dt: f64,
}

impl CstrRk4Model {
    pub fn new(params: CstrParams, variant: ModelVariant, dt: f64) -> Self {
        Self { params, biases: variant.biases(), dt }
    }

    fn validate(&self, x: &StateVec, u: &ControlVec) -> Result<(), SimError> {
        if !x.iter().all(|c| c.is_finite()) {
            return Err(SimError::NonFinite { field: "state" });
        }
        if !u.iter().all(|c| c.is_finite()) {
            return Err(SimError::NonFinite { field: "control" });
        }
        if x[0] <= 0.0 {
            return Err(SimError::NonPositive { field: "volume", value: x[0] });
        }
        if x[2] <= 0.0 {
            return Err(SimError::NonPositive { field: "temperature", value: x[2] });
        }
        if u[1] <= 0.0 {
            return Err(SimError::NonPositive { field: "coolant_flow", value: u[1] });
        }
        Ok(())
    }
}

impl DiscreteModel for CstrRk4Model {
    fn step(&self, x: &StateVec, u: &ControlVec) -> Result<StateVec, SimError> {
        self.validate(x, u)?;
        let next = rk4_step_vec(
            |x| vector_field_unchecked(x, u, &self.params, &self.biases),
            x,
            self.dt,
        );
        if !next.iter().all(|c| c.is_finite()) {
            return Err(SimError::NonFinite { field: "integrated state" });
        }
        Ok(next)
    }

    fn step_with_jacobians(
        &self,
        x: &StateVec,
        u: &ControlVec,
    ) -> Result<(StateVec, StateJacobian, ControlJacobian), SimError> {
        self.validate(x, u)?;
        let h = self.dt;
        let eval = |x: &StateVec| vector_field_unchecked(x, u, &self.params, &self.biases);
        let jac = |x: &StateVec| vector_field_jacobians(x, u, &self.params, &self.biases);
        let eye = StateJacobian::identity();

        // Chain rule through the four stages.
        let k1 = eval(x);
        let (a1, b1) = jac(x);

        let x2 = x + k1 * (h / 2.0);
        let k2 = eval(&x2);
        let (fx2, fu2) = jac(&x2);
        let a2 = fx2 * (eye + a1 * (h / 2.0));
        let b2 = fu2 + fx2 * b1 * (h / 2.0);

        let x3 = x + k2 * (h / 2.0);
        let k3 = eval(&x3);
        let (fx3, fu3) = jac(&x3);
        let a3 = fx3 * (eye + a2 * (h / 2.0));
        let b3 = fu3 + fx3 * b2 * (h / 2.0);

        let x4 = x + k3 * h;
        let k4 = eval(&x4);
        let (fx4, fu4) = jac(&x4);
        let a4 = fx4 * (eye + a3 * h);
        let b4 = fu4 + fx4 * b3 * h;

        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !next.iter().all(|c| c.is_finite()) {
            return Err(SimError::NonFinite { field: "integrated state" });
        }
        let jx = eye + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        let ju = (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
        Ok((next, jx, ju))
    }
}

/// Linear discrete test system x+ = A x + B u.
#[derive(Debug, Clone, Copy)]
pub struct LinearDiscreteModel {
    pub a: StateJacobian,
    pub b: ControlJacobian,
}

impl DiscreteModel for LinearDiscreteModel {
    fn step(&self, x: &StateVec, u: &ControlVec) -> Result<StateVec, SimError> {
        Ok(self.a * x + self.b * u)
    }

    fn step_with_jacobians(
        &self,
        x: &StateVec,
        u: &ControlVec,
    ) -> Result<(StateVec, StateJacobian, ControlJacobian), SimError> {
        Ok((self.a * x + self.b * u, self.a, self.b))
    }
}
