use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{axpy, FeatureExpectation, FeatureMap, Mdp, ModelError, Policy, Trajectory};

/// Draws a successor from a sparse row by inverse-CDF sampling.
pub(crate) fn draw(row: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(t, p) in row {
        acc += p;
        if u < acc {
            return t;
        }
    }
    // rounding left a sliver of mass past the last entry
    row.last().map(|&(t, _)| t).expect("rows are nonempty")
}

pub(crate) fn rollout(mdp: &Mdp, policy: &Policy, horizon: usize, rng: &mut impl Rng) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut s = mdp.initial_state();
    states.push(s);
    for _ in 0..horizon {
        s = draw(mdp.row(s, policy.action(s)), rng);
        states.push(s);
    }
    Trajectory::new(states)
}

/// `n` trajectories of `horizon` transitions each, reproducible for a fixed seed.
pub fn sample_trajectories(
    mdp: &Mdp,
    policy: &Policy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, ModelError> {
    policy.validate(mdp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| rollout(mdp, policy, horizon, &mut rng)).collect())
}

/// Empirical mean of `Σ_{t<horizon} γ^t f(s_t)` over the demonstrations.
///
/// Each trajectory is truncated to its first `horizon` states; shorter ones
/// are padded by repeating their final state.
pub fn estimate_expert_features(
    trajectories: &[Trajectory],
    features: &FeatureMap,
    gamma: f64,
    horizon: usize,
) -> Result<FeatureExpectation, ModelError> {
    if trajectories.is_empty() {
        return Err(ModelError::NoDemonstrations);
    }
    let mut mean = vec![0.0; features.dim()];
    for tau in trajectories {
        let last = *tau.states.last().ok_or(ModelError::EmptyTrajectory)?;
        if let Some(&index) = tau.states.iter().find(|&&s| s >= features.n_states()) {
            return Err(ModelError::StateOutOfRange {
                index,
                n_states: features.n_states(),
            });
        }
        let mut discount = 1.0;
        for t in 0..horizon {
            let s = tau.states.get(t).copied().unwrap_or(last);
            axpy(&mut mean, discount, features.get(s));
            discount *= gamma;
        }
    }
    let m = trajectories.len() as f64;
    mean.iter_mut().for_each(|x| *x /= m);
    Ok(FeatureExpectation::new(mean))
}
