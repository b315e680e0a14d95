//! Benchmark environments: a noisy grid world and a discretized mountain car.

mod gridworld;
mod mountain_car;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mdp::sample::rollout;
use crate::mdp::{expected_features, solve_optimal_policy, FeatureExpectation, FeatureMap, Mdp, ModelError, Policy, Trajectory};

pub use gridworld::{build_gridworld, Action, Cell, GridWorldSpec};
pub use mountain_car::{build_mountain_car, MountainCarSpec, Sampling};

/// Label marking states a safety property should avoid.
pub const UNSAFE: &str = "unsafe";
pub const GOAL: &str = "goal";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("only {accepted} of {wanted} safe demonstrations after {attempts} attempts")]
    FilterExhausted {
        accepted: usize,
        wanted: usize,
        attempts: usize,
    },
}

/// Optimal policy under `true_reward` and its feature expectations.
pub fn make_expert(
    mdp: &Mdp,
    features: &FeatureMap,
    true_reward: &[f64],
) -> Result<(Policy, FeatureExpectation), ModelError> {
    let policy = solve_optimal_policy(mdp, true_reward)?.policy;
    let mu = expected_features(mdp, &policy, features)?;
    Ok((policy, mu))
}

/// `m` demonstrations of `horizon` transitions each.
///
/// With `filter_safe`, any trajectory visiting an `unsafe` state is
/// discarded and resampled, giving up after `100·m` attempts.
pub fn generate_demonstrations(
    mdp: &Mdp,
    policy: &Policy,
    m: usize,
    horizon: usize,
    seed: u64,
    filter_safe: bool,
) -> Result<Vec<Trajectory>, EnvError> {
    policy.validate(mdp)?;
    let mut unsafe_state = vec![false; mdp.n_states()];
    if let Some(states) = mdp.labels().get(UNSAFE) {
        for &s in states {
            unsafe_state[s] = true;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(m);
    let cap = m.saturating_mul(100);
    let mut attempts = 0;
    while demos.len() < m {
        if filter_safe && attempts >= cap {
            return Err(EnvError::FilterExhausted {
                accepted: demos.len(),
                wanted: m,
                attempts,
            });
        }
        attempts += 1;
        let tau = rollout(mdp, policy, horizon, &mut rng);
        if filter_safe && tau.states.iter().any(|&s| unsafe_state[s]) {
            continue;
        }
        demos.push(tau);
    }
    Ok(demos)
}
