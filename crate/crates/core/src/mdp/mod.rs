//! Tabular MDPs, policy-induced Markov chains and feature expectations.
//!
//! An [`Mdp`] carries no reward function: rewards are supplied separately
//! (usually as `ω·f(s)` through a [`FeatureMap`]) so that the same model can
//! be solved under many candidate rewards.

pub(crate) mod sample;
mod solve;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use sample::{estimate_expert_features, sample_trajectories};
pub use solve::{
    evaluate_policy, expected_features, solve_optimal_policy, state_feature_expectations,
    OptimalPolicy, SWEEP_LIMIT, VALUE_TOLERANCE,
};

/// Tolerance on probability row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Sparse probability row: `(successor, probability)` pairs sorted by successor.
pub type SparseRow = Vec<(usize, f64)>;

/// Named sets of states.
pub type Labels = BTreeMap<String, BTreeSet<usize>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model must have at least one state and one action")]
    Empty,
    #[error("discount factor {0} outside [0, 1)")]
    Discount(f64),
    #[error("state index {index} out of range (n_states = {n_states})")]
    StateOutOfRange { index: usize, n_states: usize },
    #[error("action index {index} out of range (n_actions = {n_actions})")]
    ActionOutOfRange { index: usize, n_actions: usize },
    #[error("probability {probability} for ({state}, {action}) -> {target} outside [0, 1]")]
    Probability {
        state: usize,
        action: usize,
        target: usize,
        probability: f64,
    },
    #[error("row ({state}, {action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("policy covers {got} states, model has {expected}")]
    IncompletePolicy { expected: usize, got: usize },
    #[error("feature map has {got} states, model has {expected}")]
    FeatureStates { expected: usize, got: usize },
    #[error("feature vector for state {state} has length {got}, expected {expected}")]
    FeatureDimension {
        state: usize,
        expected: usize,
        got: usize,
    },
    #[error("feature value {value} of state {state} outside [0, 1]")]
    FeatureRange { state: usize, value: f64 },
    #[error("reward vector has length {got}, expected {expected}")]
    RewardLength { expected: usize, got: usize },
    #[error("no demonstrations supplied")]
    NoDemonstrations,
    #[error("empty trajectory in demonstrations")]
    EmptyTrajectory,
    #[error("reward weights have norm {0}, expected at most 1")]
    WeightNorm(f64),
}

/// Sorts a row by successor, merges duplicate successors and drops zeros.
pub(crate) fn normalize_row(mut row: SparseRow) -> SparseRow {
    row.sort_by_key(|&(s, _)| s);
    let mut out: SparseRow = Vec::with_capacity(row.len());
    for (s, p) in row {
        match out.last_mut() {
            Some((last, q)) if *last == s => *q += p,
            _ => out.push((s, p)),
        }
    }
    out.retain(|&(_, p)| p != 0.0);
    // merged entries may overshoot 1 by a rounding error
    out.iter_mut().for_each(|(_, p)| *p = p.min(1.0));
    out
}

fn check_row(row: &[(usize, f64)], n_states: usize, state: usize, action: usize) -> Result<(), ModelError> {
    let mut sum = 0.0;
    for &(target, probability) in row {
        if target >= n_states {
            return Err(ModelError::StateOutOfRange { index: target, n_states });
        }
        if !(0.0..=1.0).contains(&probability) {
            return Err(ModelError::Probability {
                state,
                action,
                target,
                probability,
            });
        }
        sum += probability;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(ModelError::RowSum { state, action, sum });
    }
    Ok(())
}

fn check_labels(labels: &Labels, n_states: usize) -> Result<(), ModelError> {
    for states in labels.values() {
        if let Some(&index) = states.iter().find(|&&s| s >= n_states) {
            return Err(ModelError::StateOutOfRange { index, n_states });
        }
    }
    Ok(())
}

/// Markov decision process without a reward function.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    rows: Vec<SparseRow>,
    gamma: f64,
    initial_state: usize,
    labels: Labels,
}

impl Mdp {
    /// Builds an MDP from one row per `(state, action)` pair, stored
    /// state-major (`rows[s * n_actions + a]`).
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        initial_state: usize,
        rows: Vec<SparseRow>,
        labels: Labels,
    ) -> Result<Self, ModelError> {
        if n_states == 0 || n_actions == 0 {
            return Err(ModelError::Empty);
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(ModelError::Discount(gamma));
        }
        if initial_state >= n_states {
            return Err(ModelError::StateOutOfRange {
                index: initial_state,
                n_states,
            });
        }
        assert_eq!(rows.len(), n_states * n_actions, "one row per (state, action)");
        let rows: Vec<SparseRow> = rows.into_iter().map(normalize_row).collect();
        for (i, row) in rows.iter().enumerate() {
            check_row(row, n_states, i / n_actions, i % n_actions)?;
        }
        check_labels(&labels, n_states)?;
        Ok(Self {
            n_states,
            n_actions,
            rows,
            gamma,
            initial_state,
            labels,
        })
    }

    pub fn builder(n_states: usize, n_actions: usize, gamma: f64) -> MdpBuilder {
        MdpBuilder {
            n_states,
            n_actions,
            gamma,
            initial_state: 0,
            rows: vec![Vec::new(); n_states * n_actions],
            labels: Labels::new(),
            error: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.rows[state * self.n_actions + action]
    }

    /// Probability of `state --action--> target`.
    pub fn probability(&self, state: usize, action: usize, target: usize) -> f64 {
        lookup(self.row(state, action), target)
    }

    /// Same model with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(ModelError::Discount(gamma));
        }
        Ok(Self { gamma, ..self.clone() })
    }

    /// Number of stored nonzero transitions.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

fn lookup(row: &[(usize, f64)], target: usize) -> f64 {
    row.binary_search_by_key(&target, |&(s, _)| s)
        .map(|i| row[i].1)
        .unwrap_or(0.0)
}

/// Incremental construction of an [`Mdp`]; repeated transitions accumulate.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    initial_state: usize,
    rows: Vec<SparseRow>,
    labels: Labels,
    error: Option<ModelError>,
}

impl MdpBuilder {
    pub fn initial_state(mut self, state: usize) -> Self {
        self.initial_state = state;
        self
    }

    pub fn transition(mut self, state: usize, action: usize, target: usize, probability: f64) -> Self {
        self.add_transition(state, action, target, probability);
        self
    }

    /// Non-consuming variant of [`MdpBuilder::transition`]. Out-of-range
    /// `(state, action)` pairs are reported by [`MdpBuilder::build`].
    pub fn add_transition(&mut self, state: usize, action: usize, target: usize, probability: f64) {
        if state >= self.n_states {
            self.error.get_or_insert(ModelError::StateOutOfRange {
                index: state,
                n_states: self.n_states,
            });
        } else if action >= self.n_actions {
            self.error.get_or_insert(ModelError::ActionOutOfRange {
                index: action,
                n_actions: self.n_actions,
            });
        } else {
            self.rows[state * self.n_actions + action].push((target, probability));
        }
    }

    pub fn label<I: IntoIterator<Item = usize>>(mut self, name: &str, states: I) -> Self {
        self.labels.entry(name.to_string()).or_default().extend(states);
        self
    }

    pub fn add_label(&mut self, name: &str, state: usize) {
        self.labels.entry(name.to_string()).or_default().insert(state);
    }

    pub fn build(self) -> Result<Mdp, ModelError> {
        if let Some(err) = self.error {
            return Err(err);
        }
        Mdp::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            self.initial_state,
            self.rows,
            self.labels,
        )
    }
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    /// The same action in every state.
    pub fn constant(n_states: usize, action: usize) -> Self {
        Self(vec![action; n_states])
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks totality and action bounds against `mdp`.
    pub fn validate(&self, mdp: &Mdp) -> Result<(), ModelError> {
        if self.0.len() != mdp.n_states() {
            return Err(ModelError::IncompletePolicy {
                expected: mdp.n_states(),
                got: self.0.len(),
            });
        }
        if let Some(&index) = self.0.iter().find(|&&a| a >= mdp.n_actions()) {
            return Err(ModelError::ActionOutOfRange {
                index,
                n_actions: mdp.n_actions(),
            });
        }
        Ok(())
    }
}

/// Discrete-time Markov chain, typically induced by fixing a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc {
    rows: Vec<SparseRow>,
    initial_state: usize,
    labels: Labels,
}

impl Dtmc {
    pub fn new(rows: Vec<SparseRow>, initial_state: usize, labels: Labels) -> Result<Self, ModelError> {
        let n_states = rows.len();
        if n_states == 0 {
            return Err(ModelError::Empty);
        }
        if initial_state >= n_states {
            return Err(ModelError::StateOutOfRange {
                index: initial_state,
                n_states,
            });
        }
        let rows: Vec<SparseRow> = rows.into_iter().map(normalize_row).collect();
        for (s, row) in rows.iter().enumerate() {
            check_row(row, n_states, s, 0)?;
        }
        check_labels(&labels, n_states)?;
        Ok(Self {
            rows,
            initial_state,
            labels,
        })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }

    pub fn probability(&self, state: usize, target: usize) -> f64 {
        lookup(&self.rows[state], target)
    }

    /// Predecessor lists: `preds[t]` holds `(s, T(s, t))` for every `T(s, t) > 0`.
    pub fn predecessors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut preds = vec![Vec::new(); self.n_states()];
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                preds[t].push((s, p));
            }
        }
        preds
    }
}

/// Fixes `policy` on `mdp`. Rows are copied verbatim from the MDP.
pub fn induce_dtmc(mdp: &Mdp, policy: &Policy) -> Result<Dtmc, ModelError> {
    policy.validate(mdp)?;
    let rows = (0..mdp.n_states())
        .map(|s| mdp.row(s, policy.action(s)).to_vec())
        .collect();
    Ok(Dtmc {
        rows,
        initial_state: mdp.initial_state(),
        labels: mdp.labels().clone(),
    })
}

/// Per-state feature vectors `f(s) ∈ [0, 1]^k`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (state, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(ModelError::FeatureDimension {
                    state,
                    expected: dim,
                    got: row.len(),
                });
            }
            if let Some(&value) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ModelError::FeatureRange { state, value });
            }
            values.extend(row);
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn get(&self, state: usize) -> &[f64] {
        &self.values[state * self.dim..(state + 1) * self.dim]
    }

    /// `R(s) = ω·f(s)` for every state.
    pub fn reward(&self, omega: &RewardWeights) -> Vec<f64> {
        (0..self.n_states()).map(|s| dot(omega.as_slice(), self.get(s))).collect()
    }

    pub(crate) fn check_states(&self, n_states: usize) -> Result<(), ModelError> {
        if self.n_states() != n_states {
            return Err(ModelError::FeatureStates {
                expected: n_states,
                got: self.n_states(),
            });
        }
        Ok(())
    }
}

/// A state sequence, optionally carrying its probability in the generating chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub probability: Option<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>) -> Self {
        Self {
            states,
            probability: None,
        }
    }

    pub fn with_probability(states: Vec<usize>, probability: f64) -> Self {
        Self {
            states,
            probability: Some(probability),
        }
    }

    /// `Σ_t γ^t f(s_t)` over the states actually present.
    pub fn discounted_features(&self, features: &FeatureMap, gamma: f64) -> Vec<f64> {
        let mut sum = vec![0.0; features.dim()];
        let mut discount = 1.0;
        for &s in &self.states {
            axpy(&mut sum, discount, features.get(s));
            discount *= gamma;
        }
        sum
    }

    /// Product of one-step probabilities in `dtmc`.
    pub fn probability_in(&self, dtmc: &Dtmc) -> f64 {
        self.states
            .windows(2)
            .map(|w| dtmc.probability(w[0], w[1]))
            .product()
    }
}

/// Expected discounted feature sums `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExpectation(Vec<f64>);

impl FeatureExpectation {
    pub fn new(mu: Vec<f64>) -> Self {
        Self(mu)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance `‖self − other‖₂`.
    pub fn distance(&self, other: &FeatureExpectation) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Linear reward weights with `‖ω‖₂ ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights(Vec<f64>);

impl RewardWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self, ModelError> {
        let norm = norm(&omega);
        if norm > 1.0 + 1e-9 {
            return Err(ModelError::WeightNorm(norm));
        }
        Ok(Self(omega))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> Mdp {
        Mdp::builder(2, 1, 0.9)
            .transition(0, 0, 1, 1.0)
            .transition(1, 0, 1, 1.0)
            .label("b", [1])
            .build()
            .unwrap()
    }

    #[test]
    fn induce_copies_selected_row() {
        let dtmc = induce_dtmc(&two_state(), &Policy::new(vec![0, 0])).unwrap();
        assert_eq!(dtmc.row(0), &[(1, 1.0)]);
        assert_eq!(dtmc.initial_state(), 0);
        assert!(dtmc.labels()["b"].contains(&1));
    }

    #[test]
    fn incomplete_policy_rejected() {
        let err = induce_dtmc(&two_state(), &Policy::new(vec![0])).unwrap_err();
        assert_eq!(err, ModelError::IncompletePolicy { expected: 2, got: 1 });
    }

    #[test]
    fn row_sum_checked() {
        let err = Mdp::builder(2, 1, 0.5)
            .transition(0, 0, 1, 0.5)
            .transition(1, 0, 1, 1.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, ModelError::RowSum { state: 0, .. }));
    }

    #[test]
    fn out_of_range_entries_rejected() {
        let err = Mdp::builder(1, 1, 0.5).transition(0, 0, 3, 1.0).build().unwrap_err();
        assert!(matches!(err, ModelError::StateOutOfRange { index: 3, .. }));
        let err = Mdp::builder(1, 1, 0.5)
            .transition(0, 0, 0, 1.0)
            .transition(0, 2, 0, 1.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, ModelError::ActionOutOfRange { index: 2, .. }));
        let err = Mdp::builder(1, 1, 0.5)
            .transition(0, 0, 0, 1.0)
            .label("x", [4])
            .build()
            .unwrap_err();
        assert!(matches!(err, ModelError::StateOutOfRange { index: 4, .. }));
        assert!(matches!(
            Mdp::builder(1, 1, 1.0).transition(0, 0, 0, 1.0).build(),
            Err(ModelError::Discount(_))
        ));
    }

    #[test]
    fn duplicate_transitions_merge() {
        let mdp = Mdp::builder(1, 1, 0.5)
            .transition(0, 0, 0, 0.25)
            .transition(0, 0, 0, 0.75)
            .build()
            .unwrap();
        assert_eq!(mdp.row(0, 0), &[(0, 1.0)]);
    }

    #[test]
    fn feature_range_enforced() {
        assert!(matches!(
            FeatureMap::new(vec![vec![0.5, 1.5]]),
            Err(ModelError::FeatureRange { state: 0, .. })
        ));
        assert!(matches!(
            FeatureMap::new(vec![vec![0.5], vec![0.1, 0.2]]),
            Err(ModelError::FeatureDimension { state: 1, .. })
        ));
    }

    #[test]
    fn weights_norm_bounded() {
        assert!(RewardWeights::new(vec![0.6, 0.8]).is_ok());
        assert!(RewardWeights::new(vec![1.0, 0.1]).is_err());
    }

    #[test]
    fn trajectory_probability() {
        let dtmc = Dtmc::new(vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]], 0, Labels::new()).unwrap();
        let tau = Trajectory::new(vec![0, 0, 1, 1]);
        assert_eq!(tau.probability_in(&dtmc), 0.25);
    }
}
