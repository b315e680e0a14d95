//! Apprenticeship learning with and without counterexample guidance.
//!
//! Plain apprenticeship learning alternates max-margin weight fitting with
//! solving the MDP under the fitted reward until the margin drops below
//! `ε`. The guided loop additionally model-checks every candidate: safe
//! candidates join the set `Π_S`, unsafe ones contribute a counterexample,
//! and the weight `k` between imitating the expert and separating from the
//! counterexamples is moved by bisection-like updates between `inf` and 1.

use std::fmt;

use thiserror::Error;

use crate::cex::{enumerate_with_threshold, counterexample_features, CexError, Evidence, DEFAULT_MAX_PATHS};
use crate::margin::{solve_max_margin_with, solve_weighted_margin_with, MarginError, MarginOptions, MarginProblem};
use crate::mdp::{
    expected_features, induce_dtmc, solve_optimal_policy, FeatureExpectation, FeatureMap, Mdp, ModelError, Policy,
    RewardWeights,
};
use crate::pctl::{until_operands, verify, CheckError, StateFormula, Verdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Margin(#[from] MarginError),
    #[error(transparent)]
    Counterexample(#[from] CexError),
    #[error("initial policy violates the property (probability {probability})")]
    UnsafeInitialPolicy { probability: f64 },
    #[error("expert features have dimension {expert}, feature map has {features}")]
    DimensionMismatch { expert: usize, features: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlConfig {
    /// Stop once the margin is at most this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub margin: MarginOptions,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            epsilon: 10.0,
            max_iters: 50,
            margin: MarginOptions::default(),
        }
    }
}

/// A policy together with its feature expectations and the weights that
/// produced it (zero for policies not learned from weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub policy: Policy,
    pub mu: FeatureExpectation,
    pub weights: RewardWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlResult {
    /// Candidate closest to the expert's feature expectations.
    pub best: Candidate,
    /// Margin of the last weight fit.
    pub delta: f64,
    pub iterations: usize,
    pub candidates: Vec<Candidate>,
}

fn check_dimensions(features: &FeatureMap, mu_expert: &FeatureExpectation) -> Result<(), LearnError> {
    if features.dim() != mu_expert.dim() {
        return Err(LearnError::DimensionMismatch {
            expert: mu_expert.dim(),
            features: features.dim(),
        });
    }
    Ok(())
}

fn learn_candidate(mdp: &Mdp, features: &FeatureMap, weights: RewardWeights) -> Result<Candidate, LearnError> {
    let reward = features.reward(&weights);
    let policy = solve_optimal_policy(mdp, &reward)?.policy;
    let mu = expected_features(mdp, &policy, features)?;
    Ok(Candidate { policy, mu, weights })
}

fn closest<'a>(candidates: impl IntoIterator<Item = &'a Candidate>, mu_expert: &FeatureExpectation) -> &'a Candidate {
    let mut best: Option<(&Candidate, f64)> = None;
    for c in candidates {
        let d = c.mu.distance(mu_expert);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.expect("candidate set is nonempty").0
}

/// Max-margin apprenticeship learning starting from `initial`.
pub fn apprenticeship_learning(
    mdp: &Mdp,
    features: &FeatureMap,
    mu_expert: &FeatureExpectation,
    initial: &Policy,
    config: &AlConfig,
) -> Result<AlResult, LearnError> {
    check_dimensions(features, mu_expert)?;
    let mut candidates = vec![Candidate {
        policy: initial.clone(),
        mu: expected_features(mdp, initial, features)?,
        weights: RewardWeights::zeros(features.dim()),
    }];
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let mus: Vec<FeatureExpectation> = candidates.iter().map(|c| c.mu.clone()).collect();
        let solution = solve_max_margin_with(mu_expert, &mus, &config.margin)?;
        delta = solution.delta;
        if delta <= config.epsilon {
            break;
        }
        let next = learn_candidate(mdp, features, solution.omega)?;
        if candidates.iter().any(|c| c.policy == next.policy) {
            break;
        }
        candidates.push(next);
    }
    Ok(AlResult {
        best: closest(&candidates, mu_expert).clone(),
        delta,
        iterations,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CegalConfig {
    /// Feature-distance bound for accepting a safe candidate.
    pub epsilon: f64,
    /// Stop shrinking `k` once `|k − inf|` is at most this.
    pub sigma: f64,
    /// Step length of the `k` shrink.
    pub alpha: f64,
    pub max_iters: usize,
    /// Path budget per counterexample.
    pub max_paths: usize,
    /// Enumerate counterexamples against this smaller threshold instead.
    pub cex_threshold: Option<f64>,
    /// Starting value of `k`.
    pub initial_k: f64,
    pub margin: MarginOptions,
}

impl Default for CegalConfig {
    fn default() -> Self {
        Self {
            epsilon: 10.0,
            sigma: 1e-5,
            alpha: 0.5,
            max_iters: 50,
            max_paths: DEFAULT_MAX_PATHS,
            cex_threshold: None,
            initial_k: 1.0,
            margin: MarginOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Sat,
    Unsat,
}

/// Bounds `0 ≤ inf ≤ k ≤ sup = 1` of the expert/separation trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSchedule {
    pub inf: f64,
    pub k: f64,
    pub sup: f64,
    pub alpha: f64,
}

impl KSchedule {
    pub fn new(alpha: f64) -> Self {
        Self {
            inf: 0.0,
            k: 1.0,
            sup: 1.0,
            alpha,
        }
    }

    /// SAT raises `inf` to `k` and resets `k` to `sup`; UNSAT moves `k` a
    /// fraction `α` of the way towards `inf`.
    pub fn update_k(&mut self, status: Status) {
        match status {
            Status::Sat => {
                self.inf = self.k;
                self.k = self.sup;
            }
            Status::Unsat => self.k = self.alpha * self.inf + (1.0 - self.alpha) * self.k,
        }
    }

    pub fn exhausted(&self, sigma: f64) -> bool {
        (self.k - self.inf).abs() <= sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordVerdict {
    Sat,
    Unsat,
    /// Safe, but already in the candidate set; handled like UNSAT.
    SatDuplicate,
}

impl fmt::Display for RecordVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordVerdict::Sat => "SAT",
            RecordVerdict::Unsat => "UNSAT",
            RecordVerdict::SatDuplicate => "SAT_DUP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CexSummary {
    pub paths: usize,
    pub mass: f64,
    pub evidence: Evidence,
}

/// One verified candidate. `k` and `inf` are the values after the update
/// this verdict triggered; `delta` is the margin of the fit that produced
/// the candidate (NaN for the initial policy).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub k: f64,
    pub inf: f64,
    pub delta: f64,
    pub probability: f64,
    pub verdict: RecordVerdict,
    pub mu_dist: f64,
    pub weights: RewardWeights,
    pub counterexample: Option<CexSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    InitialPolicyClose,
    EpsilonClose,
    KExhausted,
    IterBudget,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CegalResult {
    pub policy: Policy,
    pub mu: FeatureExpectation,
    pub weights: RewardWeights,
    pub verdict: Verdict,
    pub termination: Termination,
    pub transcript: Vec<IterationRecord>,
    /// Verified-safe candidates, starting with the initial policy.
    pub safe_set: Vec<Candidate>,
}

impl CegalResult {
    pub fn distance(&self, mu_expert: &FeatureExpectation) -> f64 {
        self.mu.distance(mu_expert)
    }
}

/// Counterexample-guided apprenticeship learning from the safe policy `pi0`.
pub fn run_cegal(
    mdp: &Mdp,
    features: &FeatureMap,
    mu_expert: &FeatureExpectation,
    formula: &StateFormula,
    pi0: &Policy,
    config: &CegalConfig,
) -> Result<CegalResult, LearnError> {
    check_dimensions(features, mu_expert)?;
    let threshold = until_operands(formula)?.threshold;
    let check = |policy: &Policy| -> Result<Verdict, LearnError> { Ok(verify(&induce_dtmc(mdp, policy)?, formula)?) };

    let verdict0 = check(pi0)?;
    if !verdict0.satisfied {
        return Err(LearnError::UnsafeInitialPolicy {
            probability: verdict0.probability,
        });
    }
    let start = Candidate {
        policy: pi0.clone(),
        mu: expected_features(mdp, pi0, features)?,
        weights: RewardWeights::zeros(features.dim()),
    };
    let mut schedule = KSchedule::new(config.alpha);
    schedule.k = config.initial_k;
    let mut transcript = vec![IterationRecord {
        iter: 0,
        k: schedule.k,
        inf: schedule.inf,
        delta: f64::NAN,
        probability: verdict0.probability,
        verdict: RecordVerdict::Sat,
        mu_dist: start.mu.distance(mu_expert),
        weights: start.weights.clone(),
        counterexample: None,
    }];
    let finish = |candidate: &Candidate, verdict: Verdict, termination, transcript, safe_set| CegalResult {
        policy: candidate.policy.clone(),
        mu: candidate.mu.clone(),
        weights: candidate.weights.clone(),
        verdict,
        termination,
        transcript,
        safe_set,
    };
    if start.mu.distance(mu_expert) <= config.epsilon {
        return Ok(finish(&start, verdict0, Termination::InitialPolicyClose, transcript, vec![start.clone()]));
    }

    let al = apprenticeship_learning(
        mdp,
        features,
        mu_expert,
        pi0,
        &AlConfig {
            epsilon: config.epsilon,
            max_iters: config.max_iters,
            margin: config.margin,
        },
    )?;
    let mut candidate = al.best;
    let mut delta = al.delta;
    let mut safe_set = vec![start];
    let mut cex_set: Vec<FeatureExpectation> = Vec::new();

    let best_safe = |safe_set: &[Candidate]| -> Result<(Candidate, Verdict), LearnError> {
        let best = closest(safe_set, mu_expert).clone();
        let verdict = check(&best.policy)?;
        Ok((best, verdict))
    };

    for iter in 1..=config.max_iters {
        let verdict = check(&candidate.policy)?;
        let mu_dist = candidate.mu.distance(mu_expert);
        let mut record = IterationRecord {
            iter,
            k: schedule.k,
            inf: schedule.inf,
            delta,
            probability: verdict.probability,
            verdict: RecordVerdict::Sat,
            mu_dist,
            weights: candidate.weights.clone(),
            counterexample: None,
        };
        let status = if verdict.satisfied {
            if mu_dist <= config.epsilon {
                transcript.push(record);
                return Ok(finish(&candidate, verdict, Termination::EpsilonClose, transcript, safe_set));
            }
            if safe_set.iter().any(|c| c.policy == candidate.policy) {
                record.verdict = RecordVerdict::SatDuplicate;
                Status::Unsat
            } else {
                safe_set.push(candidate.clone());
                Status::Sat
            }
        } else {
            record.verdict = RecordVerdict::Unsat;
            let dtmc = induce_dtmc(mdp, &candidate.policy)?;
            let target = config.cex_threshold.unwrap_or(threshold);
            let cex = match enumerate_with_threshold(&dtmc, formula, config.max_paths, target) {
                Ok(cex) => cex,
                Err(CexError::BudgetExhausted { partial }) => partial,
                Err(e) => return Err(e.into()),
            };
            record.counterexample = Some(CexSummary {
                paths: cex.paths.len(),
                mass: cex.total_probability,
                evidence: cex.evidence,
            });
            if !cex.paths.is_empty() {
                cex_set.push(counterexample_features(&cex, features, mdp.gamma())?);
            }
            Status::Unsat
        };
        if status == Status::Unsat && schedule.exhausted(config.sigma) {
            transcript.push(record);
            let (best, verdict) = best_safe(&safe_set)?;
            return Ok(finish(&best, verdict, Termination::KExhausted, transcript, safe_set));
        }
        schedule.update_k(status);
        record.k = schedule.k;
        record.inf = schedule.inf;
        transcript.push(record);
        if iter == config.max_iters {
            break;
        }

        let problem = MarginProblem::new(
            mu_expert.clone(),
            safe_set.iter().map(|c| c.mu.clone()).collect(),
            cex_set.clone(),
            schedule.k,
        )?;
        let solution = solve_weighted_margin_with(&problem, &config.margin)?;
        delta = solution.delta;
        candidate = learn_candidate(mdp, features, solution.omega)?;
    }
    let (best, verdict) = best_safe(&safe_set)?;
    Ok(finish(&best, verdict, Termination::IterBudget, transcript, safe_set))
}
