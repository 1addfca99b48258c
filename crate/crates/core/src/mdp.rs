//! Finite-MDP harness for the telescoping cost modification.
//!
//! The construction under test: given the optimal value function V* of a
//! deterministic MDP, replace the stage cost of a finite-horizon optimal
//! control problem that predicts with a wrong model fhat by
//!
//! ```text
//!   L(s,a) + gamma [ V*(f(s,a)) - V*(fhat(s,a)) ]
//! ```
//!
//! and use V* as the terminal cost. The sum then telescopes to
//! Q*(s0, a0) plus nonnegative advantage terms along the model rollout,
//! so minimizing over open-loop sequences recovers V* and the optimal
//! first action exactly, for any model mismatch.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("enumeration budget exceeded: {actions}^{horizon} sequences")]
    EnumerationTooLarge { actions: usize, horizon: usize },
    #[error("invalid table: {0}")]
    InvalidTable(&'static str),
}

/// Deterministic finite MDP with a true and a model transition table.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// True successor table, indexed [state][action].
    pub true_next: Vec<Vec<usize>>,
    /// Prediction-model successor table (deliberately wrong in general).
    pub model_next: Vec<Vec<usize>>,
    /// Stage cost table, indexed [state][action].
    pub cost: Vec<Vec<f64>>,
    pub gamma: f64,
    pub horizon: usize,
}

impl FiniteMdp {
    fn validate(&self) -> Result<(), MdpError> {
        let ok_table = |t: &Vec<Vec<usize>>| {
            t.len() == self.n_states
                && t.iter().all(|row| {
                    row.len() == self.n_actions && row.iter().all(|s| *s < self.n_states)
                })
        };
        if !ok_table(&self.true_next) || !ok_table(&self.model_next) {
            return Err(MdpError::InvalidTable("transition index out of range"));
        }
        if self.cost.len() != self.n_states
            || self.cost.iter().any(|row| row.len() != self.n_actions)
            || self.cost.iter().flatten().any(|c| !c.is_finite())
        {
            return Err(MdpError::InvalidTable("cost table malformed"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MdpError::InvalidTable("gamma outside (0, 1]"));
        }
        Ok(())
    }
}

const VI_TOL: f64 = 1e-12;
const VI_MAX_SWEEPS: usize = 1_000_000;

/// Optimal value function and greedy policy (ties broken by lowest
/// action index) of the infinite-horizon problem under the true model.
pub fn value_iteration(mdp: &FiniteMdp) -> Result<(Vec<f64>, Vec<usize>), MdpError> {
    mdp.validate()?;
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..VI_MAX_SWEEPS {
        let mut v_next = vec![0.0; mdp.n_states];
        let mut delta = 0.0f64;
        for s in 0..mdp.n_states {
            let mut best = f64::INFINITY;
            for a in 0..mdp.n_actions {
                let q = mdp.cost[s][a] + mdp.gamma * v[mdp.true_next[s][a]];
                if q < best {
                    best = q;
                }
            }
            v_next[s] = best;
            delta = delta.max((v_next[s] - v[s]).abs());
        }
        v = v_next;
        if delta <= VI_TOL {
            let policy = greedy_policy(mdp, &v);
            return Ok((v, policy));
        }
    }
    Err(MdpError::NoConvergence(VI_MAX_SWEEPS))
}

fn greedy_policy(mdp: &FiniteMdp, v: &[f64]) -> Vec<usize> {
    (0..mdp.n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best = f64::INFINITY;
            for a in 0..mdp.n_actions {
                let q = mdp.cost[s][a] + mdp.gamma * v[mdp.true_next[s][a]];
                if q < best {
                    best = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Sup-norm Bellman residual of a value function candidate.
pub fn bellman_residual(mdp: &FiniteMdp, v: &[f64]) -> f64 {
    (0..mdp.n_states)
        .map(|s| {
            let best = (0..mdp.n_actions)
                .map(|a| mdp.cost[s][a] + mdp.gamma * v[mdp.true_next[s][a]])
                .fold(f64::INFINITY, f64::min)
            ;
            (best - v[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Telescoping stage-cost table along true successors,
/// `L_tel(s,a) = V*(s) - gamma V*(f(s,a))`, plus the terminal table
/// `T(s) = V*(s)`.
pub fn modified_costs(mdp: &FiniteMdp, v_star: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let stage = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| v_star[s] - mdp.gamma * v_star[mdp.true_next[s][a]])
                .collect()
        })
        .collect();
    (stage, v_star.to_vec())
}

/// Model-successor twin of [`modified_costs`], used to assemble the
/// mismatch-corrected stage cost `L + L_tel_model - L_tel_true`.
fn telescoping_model(mdp: &FiniteMdp, v_star: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| v_star[s] - mdp.gamma * v_star[mdp.model_next[s][a]])
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct TheoremReport {
    /// max_s |Vhat*(s) - V*(s)| over all start states.
    pub max_value_gap: f64,
    /// Fraction of start states whose minimizing first action matches
    /// the greedy policy.
    pub policy_agreement: f64,
}

/// Brute-force check that the finite-horizon problem with corrected
/// costs and model-rollout predictions recovers V* and the optimal
/// first action at every state.
pub fn verify_theorem1(mdp: &FiniteMdp) -> Result<TheoremReport, MdpError> {
    mdp.validate()?;
    let n_sequences = (mdp.n_actions as f64).powi(mdp.horizon as i32);
    if n_sequences > 1e7 {
        return Err(MdpError::EnumerationTooLarge {
            actions: mdp.n_actions,
            horizon: mdp.horizon,
        });
    }
    let (v_star, policy) = value_iteration(mdp)?;
    let (tel_true, terminal) = modified_costs(mdp, &v_star);
    let tel_model = telescoping_model(mdp, &v_star);

    let n_seq = n_sequences as usize;
    let mut max_gap = 0.0f64;
    let mut agree = 0usize;

    for s0 in 0..mdp.n_states {
        let mut best = f64::INFINITY;
        let mut best_first = 0usize;
        for code in 0..n_seq {
            let mut c = code;
            let mut state = s0;
            let mut total = 0.0;
            let mut discount = 1.0;
            let mut first_action = 0usize;
            for i in 0..mdp.horizon {
                let a = c % mdp.n_actions;
                c /= mdp.n_actions;
                if i == 0 {
                    first_action = a;
                }
                let stage = mdp.cost[state][a] + tel_model[state][a] - tel_true[state][a];
                total += discount * stage;
                discount *= mdp.gamma;
                state = mdp.model_next[state][a];
            }
            total += discount * terminal[state];
            if total < best {
                best = total;
                best_first = first_action;
            }
        }
        max_gap = max_gap.max((best - v_star[s0]).abs());
        if best_first == policy[s0] {
            agree += 1;
        }
    }
    Ok(TheoremReport {
        max_value_gap: max_gap,
        policy_agreement: agree as f64 / mdp.n_states as f64,
    })
}

/// Random deterministic MDP with a zero-cost absorbing goal state and a
/// guaranteed path to it, so the value function stays finite at
/// gamma = 1. The prediction model is an independent random table.
pub fn random_mdp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    horizon: usize,
) -> FiniteMdp {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut true_next = vec![vec![0usize; n_actions]; n_states];
    let mut model_next = vec![vec![0usize; n_actions]; n_states];
    let mut cost = vec![vec![0.0f64; n_actions]; n_states];
    for s in 1..n_states {
        for a in 0..n_actions {
            // Action 0 always steps toward the goal so every policy that
            // wants to terminate can.
            true_next[s][a] = if a == 0 { s - 1 } else { rng.gen_range(0..n_states) };
            model_next[s][a] = rng.gen_range(0..n_states);
            cost[s][a] = rng.gen_range(0.1..1.0);
        }
    }
    for a in 0..n_actions {
        model_next[0][a] = rng.gen_range(0..n_states);
    }
    FiniteMdp { n_states, n_actions, true_next, model_next, cost, gamma, horizon }
}
