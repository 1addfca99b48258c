//! Continuous stirred tank reactor plant model and stage cost.
//!
//! The reactor state is x = (V, Ca, T): liquid volume, concentration of
//! the reactant and temperature. Controls are u = (qs, qc): outlet flow
//! and coolant flow. Two variants of the vector field are provided: the
//! true plant and a deliberately biased model used inside the MPC.
//! Integration is classical fixed-step RK4 with zero-order-hold control.

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateVec = SVector<f64, 3>;
pub type ControlVec = SVector<f64, 2>;

/// Default sampling time in minutes.
pub const DEFAULT_DT: f64 = 0.05;

/// Tracking references (V, Ca, T) and (qs, qc).
pub const X_REF: [f64; 3] = [105.0, 0.12, 433.0];
pub const U_REF: [f64; 2] = [100.0, 110.0];

/// Box constraints on the state and the controls.
pub const STATE_LOWER: [f64; 3] = [90.0, 0.0, 400.0];
pub const STATE_UPPER: [f64; 3] = [110.0, 0.35, 480.0];
pub const CONTROL_LOWER: [f64; 2] = [55.0, 55.0];
pub const CONTROL_UPPER: [f64; 2] = [140.0, 140.0];

/// Stage-cost tracking weights and the constraint penalty vector.
pub const STATE_WEIGHTS: [f64; 3] = [10.0, 5000.0, 10.0];
pub const CONTROL_WEIGHTS: [f64; 2] = [10.0, 10.0];
pub const PENALTY_WEIGHTS: [f64; 3] = [1e5, 1e5, 1e5];

/// Box the per-episode initial conditions are drawn from.
pub const INIT_LOWER: [f64; 3] = [95.0, 0.05, 410.0];
pub const INIT_UPPER: [f64; 3] = [108.0, 0.3, 460.0];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("non-finite value in field `{field}`")]
    NonFinite { field: &'static str },
    #[error("field `{field}` must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
}

/// Reactor state (V in liters, Ca in mol/L, T in kelvin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CstrState {
    pub volume: f64,
    pub concentration: f64,
    pub temperature: f64,
}

impl CstrState {
    pub fn new(volume: f64, concentration: f64, temperature: f64) -> Self {
        Self { volume, concentration, temperature }
    }

    pub fn as_vector(&self) -> StateVec {
        StateVec::new(self.volume, self.concentration, self.temperature)
    }

    pub fn from_vector(v: &StateVec) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    fn validate(&self) -> Result<(), SimError> {
        if !self.volume.is_finite() {
            return Err(SimError::NonFinite { field: "volume" });
        }
        if !self.concentration.is_finite() {
            return Err(SimError::NonFinite { field: "concentration" });
        }
        if !self.temperature.is_finite() {
            return Err(SimError::NonFinite { field: "temperature" });
        }
        if self.volume <= 0.0 {
            return Err(SimError::NonPositive { field: "volume", value: self.volume });
        }
        Ok(())
    }
}

/// Control input (qs and qc, both in L/min).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CstrControl {
    pub outlet_flow: f64,
    pub coolant_flow: f64,
}

impl CstrControl {
    pub fn new(outlet_flow: f64, coolant_flow: f64) -> Self {
        Self { outlet_flow, coolant_flow }
    }

    pub fn as_vector(&self) -> ControlVec {
        ControlVec::new(self.outlet_flow, self.coolant_flow)
    }

    pub fn from_vector(v: &ControlVec) -> Self {
        Self::new(v[0], v[1])
    }

    fn validate(&self) -> Result<(), SimError> {
        if !self.outlet_flow.is_finite() {
            return Err(SimError::NonFinite { field: "outlet_flow" });
        }
        if !self.coolant_flow.is_finite() {
            return Err(SimError::NonFinite { field: "coolant_flow" });
        }
        if self.coolant_flow <= 0.0 {
            return Err(SimError::NonPositive { field: "coolant_flow", value: self.coolant_flow });
        }
        Ok(())
    }
}

/// Physical reactor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CstrParams {
    /// Inlet process flow rate [L/min].
    pub q_in: f64,
    /// Feed concentration [mol/L].
    pub ca_in: f64,
    /// Feed temperature [K].
    pub t_in: f64,
    /// Inlet coolant temperature [K].
    pub t_coolant_in: f64,
    /// Heat of reaction [cal/mol].
    pub delta_h: f64,
    /// Density times specific heat of the process liquid [cal/(L K)].
    pub rho_cp: f64,
    /// Reaction rate constant [1/min].
    pub k0: f64,
    /// Activation energy over the gas constant [K].
    pub e_over_r: f64,
    /// Density times specific heat of the coolant [cal/(L K)].
    pub rho_cp_coolant: f64,
    /// Heat transfer coefficient times area [cal/(min K)].
    pub ha: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            q_in: 100.0,
            ca_in: 1.0,
            t_in: 350.0,
            t_coolant_in: 350.0,
            delta_h: -2e5,
            rho_cp: 1000.0,
            k0: 7.2e10,
            e_over_r: 1e4,
            rho_cp_coolant: 1000.0,
            ha: 7e5,
        }
    }
}

impl CstrParams {
    /// Heat release coefficient k1 = -dH k0 / (rho Cp).
    pub fn k1(&self) -> f64 {
        -self.delta_h * self.k0 / self.rho_cp
    }

    /// Coolant capacity ratio k2 = rho_c Cpc / (rho Cp).
    pub fn k2(&self) -> f64 {
        self.rho_cp_coolant / self.rho_cp
    }

    /// Heat exchanger constant k3 = hA / (rho_c Cpc).
    pub fn k3(&self) -> f64 {
        self.ha / self.rho_cp_coolant
    }
}

/// Multiplicative biases applied to individual terms of the vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBiases {
    pub inflow: f64,
    pub reaction: f64,
    pub heat: f64,
    pub cooling: f64,
    pub k3: f64,
}

impl ModelBiases {
    pub const UNIT: ModelBiases =
        ModelBiases { inflow: 1.0, reaction: 1.0, heat: 1.0, cooling: 1.0, k3: 1.0 };

    /// Biases of the deliberately wrong prediction model.
    pub const MISSPECIFIED: ModelBiases =
        ModelBiases { inflow: 1.1, reaction: 1.2, heat: 1.15, cooling: 0.9, k3: 1.2 };
}

/// Which vector field to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    TruePlant,
    Misspecified,
}

impl ModelVariant {
    pub fn biases(&self) -> ModelBiases {
        match self {
            ModelVariant::TruePlant => ModelBiases::UNIT,
            ModelVariant::Misspecified => ModelBiases::MISSPECIFIED,
        }
    }
}

/// Time derivative (dV/dt, dCa/dt, dT/dt) of the reactor state.
pub fn vector_field(
    state: &CstrState,
    control: &CstrControl,
    params: &CstrParams,
    variant: ModelVariant,
) -> Result<StateVec, SimError> {
    state.validate()?;
    control.validate()?;
    Ok(vector_field_unchecked(
        &state.as_vector(),
        &control.as_vector(),
        params,
        &variant.biases(),
    ))
}

/// Vector field on raw vectors, domain checks skipped.
pub fn vector_field_unchecked(
    x: &StateVec,
    u: &ControlVec,
    p: &CstrParams,
    b: &ModelBiases,
) -> StateVec {
    let (v, ca, t) = (x[0], x[1], x[2]);
    let (qs, qc) = (u[0], u[1]);
    let arrhenius = (-p.e_over_r / t).exp();
    let cooling = 1.0 - (-b.k3 * p.k3() / qc).exp();

    let dv = p.q_in - qs;
    let dca = b.inflow * p.q_in / v * (p.ca_in - ca) - b.reaction * p.k0 * arrhenius * ca;
    let dt = p.q_in / v * (p.t_in - t)
        + b.heat * p.k1() * arrhenius * ca
        + b.cooling * p.k2() * qc / v * cooling * (p.t_coolant_in - t);
    StateVec::new(dv, dca, dt)
}

/// Jacobians of the vector field with respect to the state and control.
pub fn vector_field_jacobians(
    x: &StateVec,
    u: &ControlVec,
    p: &CstrParams,
    b: &ModelBiases,
) -> (SMatrix<f64, 3, 3>, SMatrix<f64, 3, 2>) {
    let (v, ca, t) = (x[0], x[1], x[2]);
    let qc = u[1];
    let arrhenius = (-p.e_over_r / t).exp();
    let darr_dt = arrhenius * p.e_over_r / (t * t);
    let k3_eff = b.k3 * p.k3();
    let cool_exp = (-k3_eff / qc).exp();
    let cooling = 1.0 - cool_exp;
    let (k1, k2) = (p.k1(), p.k2());

    let mut jx = SMatrix::<f64, 3, 3>::zeros();
    let mut ju = SMatrix::<f64, 3, 2>::zeros();

    // dV/dt = q_in - qs
    ju[(0, 0)] = -1.0;

    // dCa/dt
    jx[(1, 0)] = -b.inflow * p.q_in / (v * v) * (p.ca_in - ca);
    jx[(1, 1)] = -b.inflow * p.q_in / v - b.reaction * p.k0 * arrhenius;
    jx[(1, 2)] = -b.reaction * p.k0 * ca * darr_dt;

    // dT/dt
    jx[(2, 0)] = -p.q_in / (v * v) * (p.t_in - t)
        - b.cooling * k2 * qc / (v * v) * cooling * (p.t_coolant_in - t);
    jx[(2, 1)] = b.heat * k1 * arrhenius;
    jx[(2, 2)] = -p.q_in / v + b.heat * k1 * ca * darr_dt - b.cooling * k2 * qc / v * cooling;
    ju[(2, 1)] =
        b.cooling * k2 / v * (p.t_coolant_in - t) * (cooling - (k3_eff / qc) * cool_exp);

    (jx, ju)
}

/// One classical RK4 step for an autonomous system of dimension `D`.
pub fn rk4_step_vec<const D: usize, F>(f: F, x: &SVector<f64, D>, dt: f64) -> SVector<f64, D>
where
    F: Fn(&SVector<f64, D>) -> SVector<f64, D>,
{
    let k1 = f(x);
    let k2 = f(&(x + k1 * (dt / 2.0)));
    let k3 = f(&(x + k2 * (dt / 2.0)));
    let k4 = f(&(x + k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// RK4 step of the reactor under zero-order-hold control.
pub fn rk4_step(
    state: &CstrState,
    control: &CstrControl,
    params: &CstrParams,
    dt: f64,
    variant: ModelVariant,
) -> Result<CstrState, SimError> {
    state.validate()?;
    control.validate()?;
    if !(dt > 0.0) {
        return Err(SimError::NonPositive { field: "dt", value: dt });
    }
    let biases = variant.biases();
    let u = control.as_vector();
    let next = rk4_step_vec(
        |x| vector_field_unchecked(x, &u, params, &biases),
        &state.as_vector(),
        dt,
    );
    if !next.iter().all(|c| c.is_finite()) {
        return Err(SimError::NonFinite { field: "integrated state" });
    }
    Ok(CstrState::from_vector(&next))
}

/// Quadratic tracking cost with an exact penalty on state-box violations.
///
/// Controls are clipped to their box before evaluation, so only the three
/// state bounds can contribute to the penalty term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlStageCost {
    pub x_ref: [f64; 3],
    pub u_ref: [f64; 2],
    pub state_weights: [f64; 3],
    pub control_weights: [f64; 2],
    pub penalty: [f64; 3],
    pub state_lower: [f64; 3],
    pub state_upper: [f64; 3],
    pub control_lower: [f64; 2],
    pub control_upper: [f64; 2],
}

impl Default for RlStageCost {
    fn default() -> Self {
        Self {
            x_ref: X_REF,
            u_ref: U_REF,
            state_weights: STATE_WEIGHTS,
            control_weights: CONTROL_WEIGHTS,
            penalty: PENALTY_WEIGHTS,
            state_lower: STATE_LOWER,
            state_upper: STATE_UPPER,
            control_lower: CONTROL_LOWER,
            control_upper: CONTROL_UPPER,
        }
    }
}

impl RlStageCost {
    /// Componentwise state-box violation max(0, lb - x, x - ub).
    pub fn state_violation(&self, x: &StateVec) -> StateVec {
        StateVec::from_fn(|j, _| {
            (self.state_lower[j] - x[j]).max(x[j] - self.state_upper[j]).max(0.0)
        })
    }

    pub fn cost(&self, state: &CstrState, control: &CstrControl) -> f64 {
        let x = state.as_vector();
        let u = control.as_vector();
        let mut total = 0.0;
        for j in 0..3 {
            let d = x[j] - self.x_ref[j];
            total += self.state_weights[j] * d * d;
        }
        for j in 0..2 {
            let clipped = u[j].clamp(self.control_lower[j], self.control_upper[j]);
            let d = clipped - self.u_ref[j];
            total += self.control_weights[j] * d * d;
        }
        let violation = self.state_violation(&x);
        for j in 0..3 {
            total += self.penalty[j] * violation[j];
        }
        total
    }
}

/// Draws an initial reactor state uniformly from a box.
pub fn sample_initial_state<R: Rng>(rng: &mut R, lower: &[f64; 3], upper: &[f64; 3]) -> CstrState {
    let draw = |rng: &mut R, lo: f64, hi: f64| rng.gen_range(lo..=hi);
    CstrState::new(
        draw(rng, lower[0], upper[0]),
        draw(rng, lower[1], upper[1]),
        draw(rng, lower[2], upper[2]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn reference_state() -> CstrState {
        CstrState::new(X_REF[0], X_REF[1], X_REF[2])
    }

    fn reference_control() -> CstrControl {
        CstrControl::new(U_REF[0], U_REF[1])
    }

    /// Independent transcription of the three rate equations, kept free of
    /// the production evaluation path on purpose.
    fn hand_vector_field(x: [f64; 3], u: [f64; 2], b: ModelBiases) -> [f64; 3] {
        let p = CstrParams::default();
        let (v, ca, t) = (x[0], x[1], x[2]);
        let k1 = -p.delta_h * p.k0 / p.rho_cp;
        let k2 = p.rho_cp_coolant / p.rho_cp;
        let k3 = p.ha / p.rho_cp_coolant;
        let dv = p.q_in - u[0];
        let dca = b.inflow * p.q_in / v * (p.ca_in - ca)
            - b.reaction * p.k0 * (-p.e_over_r / t).exp() * ca;
        let dt = p.q_in / v * (p.t_in - t)
            + b.heat * k1 * (-p.e_over_r / t).exp() * ca
            + b.cooling * k2 * u[1] / v * (1.0 - (-b.k3 * k3 / u[1]).exp()) * (p.t_coolant_in - t);
        [dv, dca, dt]
    }

    #[test]
    fn volume_rate_vanishes_at_nominal_outflow() {
        let state = CstrState::new(100.0, 1.0, 350.0);
        let control = CstrControl::new(100.0, 110.0);
        let d = vector_field(&state, &control, &CstrParams::default(), ModelVariant::TruePlant)
            .unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn unit_biases_reproduce_true_plant_bitwise() {
        let p = CstrParams::default();
        let x = StateVec::new(97.3, 0.21, 441.0);
        let u = ControlVec::new(93.0, 121.0);
        let truth = vector_field_unchecked(&x, &u, &p, &ModelVariant::TruePlant.biases());
        let unit = vector_field_unchecked(&x, &u, &p, &ModelBiases::UNIT);
        for j in 0..3 {
            assert_eq!(truth[j].to_bits(), unit[j].to_bits());
        }
    }

    #[test]
    fn vector_field_matches_hand_transcription() {
        for (x, u) in [
            ([105.0, 0.12, 433.0], [100.0, 110.0]),
            ([95.0, 0.3, 455.0], [70.0, 60.0]),
        ] {
            for variant in [ModelVariant::TruePlant, ModelVariant::Misspecified] {
                let got = vector_field(
                    &CstrState::new(x[0], x[1], x[2]),
                    &CstrControl::new(u[0], u[1]),
                    &CstrParams::default(),
                    variant,
                )
                .unwrap();
                let want = hand_vector_field(x, u, variant.biases());
                for j in 0..3 {
                    assert_relative_eq!(got[j], want[j], max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn variants_differ_when_reaction_terms_are_live() {
        let x = StateVec::new(100.0, 0.2, 440.0);
        let u = ControlVec::new(100.0, 110.0);
        let p = CstrParams::default();
        let a = vector_field_unchecked(&x, &u, &p, &ModelVariant::TruePlant.biases());
        let b = vector_field_unchecked(&x, &u, &p, &ModelVariant::Misspecified.biases());
        assert!((a[1] - b[1]).abs() > 0.0);
        assert!((a[2] - b[2]).abs() > 0.0);
    }

    #[test]
    fn domain_errors_name_the_offending_field() {
        let p = CstrParams::default();
        let bad_v = CstrState::new(0.0, 0.1, 430.0);
        let err = vector_field(&bad_v, &reference_control(), &p, ModelVariant::TruePlant)
            .unwrap_err();
        assert_eq!(err, SimError::NonPositive { field: "volume", value: 0.0 });

        let bad_qc = CstrControl::new(100.0, -1.0);
        let err = vector_field(&reference_state(), &bad_qc, &p, ModelVariant::TruePlant)
            .unwrap_err();
        assert_eq!(err, SimError::NonPositive { field: "coolant_flow", value: -1.0 });

        let nan_t = CstrState::new(100.0, 0.1, f64::NAN);
        let err =
            vector_field(&nan_t, &reference_control(), &p, ModelVariant::TruePlant).unwrap_err();
        assert_eq!(err, SimError::NonFinite { field: "temperature" });
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let p = CstrParams::default();
        let b = ModelBiases::MISSPECIFIED;
        let x = StateVec::new(102.0, 0.17, 447.0);
        let u = ControlVec::new(91.0, 104.0);
        let (jx, ju) = vector_field_jacobians(&x, &u, &p, &b);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (vector_field_unchecked(&xp, &u, &p, &b)
                - vector_field_unchecked(&xm, &u, &p, &b))
                / (2.0 * h);
            for i in 0..3 {
                assert_relative_eq!(jx[(i, j)], fd[i], max_relative = 1e-5, epsilon = 1e-9);
            }
        }
        for j in 0..2 {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let fd = (vector_field_unchecked(&x, &up, &p, &b)
                - vector_field_unchecked(&x, &um, &p, &b))
                / (2.0 * h);
            for i in 0..3 {
                assert_relative_eq!(ju[(i, j)], fd[i], max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rk4_fixed_point_under_zero_field() {
        let zeroed = CstrParams {
            q_in: 0.0,
            ca_in: 0.0,
            t_in: 0.0,
            t_coolant_in: 0.0,
            delta_h: 0.0,
            k0: 0.0,
            ha: 0.0,
            ..CstrParams::default()
        };
        let state = CstrState::new(100.0, 0.2, 430.0);
        let next = rk4_step(&state, &reference_control(), &zeroed, 0.05, ModelVariant::TruePlant)
            .unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        // Scalar harness: xdot = -x, closed-form solution exp(-dt).
        let x0 = SVector::<f64, 1>::new(1.0);
        let next = rk4_step_vec(|x| -x, &x0, 0.05);
        assert_abs_diff_eq!(next[0], (-0.05f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn rk4_agrees_with_half_step_doubling() {
        let state = reference_state();
        let control = CstrControl::new(95.0, 120.0);
        let p = CstrParams::default();
        let full = rk4_step(&state, &control, &p, 0.05, ModelVariant::TruePlant).unwrap();
        let half = rk4_step(&state, &control, &p, 0.025, ModelVariant::TruePlant).unwrap();
        let halved = rk4_step(&half, &control, &p, 0.025, ModelVariant::TruePlant).unwrap();
        for (a, b) in full.as_vector().iter().zip(halved.as_vector().iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-6);
        }
    }

    #[test]
    fn rk4_global_error_shrinks_at_fourth_order() {
        // Global error on xdot = -x over one unit of time drops ~16x per halving.
        let integrate = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut x = SVector::<f64, 1>::new(1.0);
            for _ in 0..steps {
                x = rk4_step_vec(|x| -x, &x, dt);
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let coarse = integrate(0.05);
        let fine = integrate(0.025);
        let ratio = coarse / fine;
        assert!((12.0..=20.0).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn stage_cost_zero_at_reference() {
        let cost = RlStageCost::default();
        assert_eq!(cost.cost(&reference_state(), &reference_control()), 0.0);
    }

    #[test]
    fn stage_cost_penalizes_volume_violation() {
        let cost = RlStageCost::default();
        let state = CstrState::new(111.0, X_REF[1], X_REF[2]);
        let got = cost.cost(&state, &reference_control());
        // Tracking (111-105)^2 * 10 plus penalty 1e5 * (111-110).
        assert_relative_eq!(got, 100_360.0, max_relative = 1e-12);
    }

    #[test]
    fn stage_cost_nonnegative_and_quadratic_inside_the_box() {
        let cost = RlStageCost::default();
        let state = CstrState::new(100.0, 0.2, 420.0);
        let control = CstrControl::new(80.0, 130.0);
        let got = cost.cost(&state, &control);
        let quad = 10.0 * (100.0f64 - 105.0).powi(2)
            + 5000.0 * (0.2f64 - 0.12).powi(2)
            + 10.0 * (420.0f64 - 433.0).powi(2)
            + 10.0 * (80.0f64 - 100.0).powi(2)
            + 10.0 * (130.0f64 - 110.0).powi(2);
        assert_relative_eq!(got, quad, max_relative = 1e-12);
        assert!(got >= 0.0);
    }

    #[test]
    fn initial_state_sampler_respects_the_box() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let s = sample_initial_state(&mut rng, &INIT_LOWER, &INIT_UPPER);
            assert!(s.volume >= INIT_LOWER[0] && s.volume <= INIT_UPPER[0]);
            assert!(s.concentration >= INIT_LOWER[1] && s.concentration <= INIT_UPPER[1]);
            assert!(s.temperature >= INIT_LOWER[2] && s.temperature <= INIT_UPPER[2]);
        }
    }
}
