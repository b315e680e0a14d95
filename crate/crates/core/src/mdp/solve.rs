use super::{axpy, Dtmc, FeatureExpectation, FeatureMap, Mdp, ModelError, Policy};

/// Sup-norm residual at which value iteration stops.
pub const VALUE_TOLERANCE: f64 = 1e-9;

/// Hard cap on Bellman sweeps.
pub const SWEEP_LIMIT: usize = 100_000;

/// Q-values closer than this (relative to their magnitude) count as tied.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicy {
    pub policy: Policy,
    pub value: Vec<f64>,
    /// Bellman optimality residual of `value` in the sup norm.
    pub residual: f64,
    pub sweeps: usize,
}

fn q_value(mdp: &Mdp, reward: &[f64], value: &[f64], s: usize, a: usize) -> f64 {
    let future: f64 = mdp.row(s, a).iter().map(|&(t, p)| p * value[t]).sum();
    reward[s] + mdp.gamma() * future
}

/// Lowest-index action whose Q-value is within tie tolerance of the best.
fn greedy_action(mdp: &Mdp, reward: &[f64], value: &[f64], s: usize) -> (usize, f64) {
    let qs: Vec<f64> = (0..mdp.n_actions())
        .map(|a| q_value(mdp, reward, value, s, a))
        .collect();
    let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_TOLERANCE * best.abs().max(1.0);
    let action = qs.iter().position(|&q| q >= best - slack).unwrap_or(0);
    (action, best)
}

/// Value iteration under state reward `reward`, followed by greedy policy
/// extraction with lowest-index tie-breaking.
pub fn solve_optimal_policy(mdp: &Mdp, reward: &[f64]) -> Result<OptimalPolicy, ModelError> {
    let n = mdp.n_states();
    if reward.len() != n {
        return Err(ModelError::RewardLength {
            expected: n,
            got: reward.len(),
        });
    }
    let mut value = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < SWEEP_LIMIT && residual >= VALUE_TOLERANCE {
        residual = 0.0;
        for s in 0..n {
            let best = (0..mdp.n_actions())
                .map(|a| q_value(mdp, reward, &value, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (best - value[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut value, &mut next);
        sweeps += 1;
    }
    let actions = (0..n).map(|s| greedy_action(mdp, reward, &value, s).0).collect();
    Ok(OptimalPolicy {
        policy: Policy::new(actions),
        value,
        residual,
        sweeps,
    })
}

/// Iterative evaluation of `V_π` for state reward `reward`.
pub fn evaluate_policy(mdp: &Mdp, policy: &Policy, reward: &[f64]) -> Result<Vec<f64>, ModelError> {
    policy.validate(mdp)?;
    if reward.len() != mdp.n_states() {
        return Err(ModelError::RewardLength {
            expected: mdp.n_states(),
            got: reward.len(),
        });
    }
    let features = reward.iter().map(|&r| vec![r]).collect::<Vec<_>>();
    Ok(linear_fixed_point(mdp, policy, &features, 1)
        .into_iter()
        .map(|v| v[0])
        .collect())
}

/// Solves `μ(s) = f(s) + γ Σ T_π(s, s') μ(s')` by fixed-point iteration.
///
/// The stopping threshold is scaled by `1 − γ`, so the returned vectors are
/// within `VALUE_TOLERANCE` of the exact solution in the sup norm.
fn linear_fixed_point(mdp: &Mdp, policy: &Policy, rows: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let threshold = VALUE_TOLERANCE * (1.0 - gamma);
    let mut mu = vec![vec![0.0; dim]; n];
    let mut next = vec![vec![0.0; dim]; n];
    for _ in 0..SWEEP_LIMIT {
        let mut change: f64 = 0.0;
        for s in 0..n {
            let out = &mut next[s];
            out.copy_from_slice(&rows[s]);
            for &(t, p) in mdp.row(s, policy.action(s)) {
                axpy(out, gamma * p, &mu[t]);
            }
            for (a, b) in out.iter().zip(&mu[s]) {
                change = change.max((a - b).abs());
            }
        }
        std::mem::swap(&mut mu, &mut next);
        if change < threshold {
            break;
        }
    }
    mu
}

/// Per-state feature expectations `μ_π(s)` for every state.
pub fn state_feature_expectations(
    mdp: &Mdp,
    policy: &Policy,
    features: &FeatureMap,
) -> Result<Vec<Vec<f64>>, ModelError> {
    policy.validate(mdp)?;
    features.check_states(mdp.n_states())?;
    let rows: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| features.get(s).to_vec()).collect();
    Ok(linear_fixed_point(mdp, policy, &rows, features.dim()))
}

/// Feature expectations of `policy` evaluated at the initial state.
pub fn expected_features(
    mdp: &Mdp,
    policy: &Policy,
    features: &FeatureMap,
) -> Result<FeatureExpectation, ModelError> {
    let mut all = state_feature_expectations(mdp, policy, features)?;
    Ok(FeatureExpectation::new(all.swap_remove(mdp.initial_state())))
}

impl Dtmc {
    /// Expected discounted feature sums from the initial state of the chain.
    pub fn expected_features(&self, features: &FeatureMap, gamma: f64) -> FeatureExpectation {
        let mdp = Mdp {
            n_states: self.n_states(),
            n_actions: 1,
            rows: self.rows.clone(),
            gamma,
            initial_state: self.initial_state,
            labels: Default::default(),
        };
        let policy = Policy::constant(self.n_states(), 0);
        expected_features(&mdp, &policy, features).expect("chain-shaped model is consistent")
    }
}
