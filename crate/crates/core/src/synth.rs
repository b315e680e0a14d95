//! Maximally safe stationary policies.
//!
//! For unbounded until the minimum reachability probability is attained by
//! a memoryless policy: states that can avoid `φ2` forever are found by a
//! graph fixpoint, the rest by value iteration, and the greedy policy is
//! polished by exact policy iteration.
//!
//! For bounded until the optimum generally needs a step-dependent policy.
//! Backward induction gives that optimum as a lower bound; the stationary
//! policy returned is the best of several projections (the step-0 decision
//! rule, its greedy re-evaluations, the unbounded optimum) or, on small
//! models, of every deterministic policy.

use thiserror::Error;

use crate::mdp::{induce_dtmc, Mdp, ModelError, Policy};
use crate::pctl::{
    check_bounded_until, check_unbounded_until, satisfaction_in, until_operands, verify, CheckError, StateFormula,
};

/// Exhaustive search is used when the policy space is at most this large.
pub const EXHAUSTIVE_LIMIT: usize = 4096;

const VALUE_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;
const PROJECTION_ROUNDS: usize = 20;
const POLISH_ROUNDS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("synthesis needs an upper-bounded probability operator")]
    LowerBound,
    #[error(
        "no stationary policy found meeting the bound: best stationary probability {stationary}, \
         step-dependent optimum {optimum}"
    )]
    InfeasibleStationary {
        policy: Policy,
        stationary: f64,
        optimum: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafePolicy {
    pub policy: Policy,
    /// Verified probability of the path formula under `policy`.
    pub probability: f64,
    /// Optimum over step-dependent policies; equals `probability` for
    /// unbounded until.
    pub lower_bound: f64,
}

/// Policy minimizing the initial-state probability of the formula's path
/// property.
pub fn synthesize_min_reach_policy(mdp: &Mdp, formula: &StateFormula) -> Result<SafePolicy, SynthError> {
    let query = until_operands(formula)?;
    if !query.comparison.is_upper_bound() {
        return Err(SynthError::LowerBound);
    }
    let n = mdp.n_states();
    let phi1 = satisfaction_in(mdp.labels(), n, &query.left)?;
    let phi2 = satisfaction_in(mdp.labels(), n, &query.right)?;
    let evaluate = |policy: &Policy| -> Result<f64, SynthError> {
        Ok(verify(&induce_dtmc(mdp, policy)?, formula)?.probability)
    };

    let unbounded = min_reach_unbounded(mdp, &phi1, &phi2)?;
    let Some(t) = query.bound else {
        let probability = evaluate(&unbounded)?;
        return Ok(SafePolicy {
            policy: unbounded,
            probability,
            lower_bound: probability,
        });
    };

    let (rule, optimum) = step_zero_rule(mdp, &phi1, &phi2, t);
    let mut best = (evaluate(&rule)?, rule.clone());
    let mut consider = |policy: Policy, p: f64| {
        if p < best.0 - VALUE_TOLERANCE || (p <= best.0 + VALUE_TOLERANCE && policy.actions() < best.1.actions()) {
            best = (p, policy);
        }
    };
    let mut current = rule;
    for _ in 0..PROJECTION_ROUNDS {
        let values = check_bounded_until(&induce_dtmc(mdp, &current)?, &phi1, &phi2, t - 1);
        let next = greedy(mdp, &phi1, &phi2, &values, Some(&current));
        if next == current {
            break;
        }
        let p = evaluate(&next)?;
        consider(next.clone(), p);
        current = next;
    }
    let p = evaluate(&unbounded)?;
    consider(unbounded, p);
    if policy_space(mdp).is_some_and(|size| size <= EXHAUSTIVE_LIMIT) {
        let mut actions = vec![0; n];
        loop {
            let policy = Policy::new(actions.clone());
            let p = evaluate(&policy)?;
            consider(policy, p);
            if !odometer(&mut actions, mdp.n_actions()) {
                break;
            }
        }
    }
    let (probability, policy) = best;
    if query.violated_by(probability) && !query.violated_by(optimum) {
        return Err(SynthError::InfeasibleStationary {
            policy,
            stationary: probability,
            optimum,
        });
    }
    Ok(SafePolicy {
        policy,
        probability,
        lower_bound: optimum,
    })
}

fn policy_space(mdp: &Mdp) -> Option<usize> {
    let mut size: usize = 1;
    for _ in 0..mdp.n_states() {
        size = size.checked_mul(mdp.n_actions())?;
    }
    Some(size)
}

/// Advances `actions` to the next policy in lexicographic order.
fn odometer(actions: &mut [usize], n_actions: usize) -> bool {
    for a in actions.iter_mut().rev() {
        *a += 1;
        if *a < n_actions {
            return true;
        }
        *a = 0;
    }
    false
}

fn expected(mdp: &Mdp, s: usize, a: usize, values: &[f64]) -> f64 {
    mdp.row(s, a).iter().map(|&(t, p)| p * values[t]).sum()
}

/// Lowest-index minimizing action per state. With `keep`, an incumbent
/// action is only replaced by a strictly better one.
fn greedy(mdp: &Mdp, phi1: &[bool], phi2: &[bool], values: &[f64], keep: Option<&Policy>) -> Policy {
    let actions = (0..mdp.n_states())
        .map(|s| {
            let incumbent = keep.map_or(0, |p| p.action(s));
            if phi2[s] || !phi1[s] {
                return incumbent;
            }
            let mut best = incumbent;
            let mut best_value = expected(mdp, s, incumbent, values);
            for a in 0..mdp.n_actions() {
                let v = expected(mdp, s, a, values);
                let better = v < best_value - VALUE_TOLERANCE
                    || (keep.is_none() && a < best && v <= best_value + VALUE_TOLERANCE);
                if better {
                    best = a;
                    best_value = v;
                }
            }
            best
        })
        .collect();
    Policy::new(actions)
}

/// Backward induction over `t` steps. Returns the step-0 decision rule and
/// the step-dependent optimum at the initial state.
fn step_zero_rule(mdp: &Mdp, phi1: &[bool], phi2: &[bool], t: u32) -> (Policy, f64) {
    let n = mdp.n_states();
    let mut x: Vec<f64> = phi2.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut next = x.clone();
    for _ in 1..t {
        for s in 0..n {
            next[s] = if phi2[s] {
                1.0
            } else if !phi1[s] {
                0.0
            } else {
                (0..mdp.n_actions())
                    .map(|a| expected(mdp, s, a, &x))
                    .fold(f64::INFINITY, f64::min)
            };
        }
        std::mem::swap(&mut x, &mut next);
    }
    let rule = greedy(mdp, phi1, phi2, &x, None);
    let s0 = mdp.initial_state();
    let optimum = if phi2[s0] {
        1.0
    } else if !phi1[s0] {
        0.0
    } else {
        expected(mdp, s0, rule.action(s0), &x)
    };
    (rule, optimum)
}

/// Optimal memoryless policy for minimum unbounded reachability.
fn min_reach_unbounded(mdp: &Mdp, phi1: &[bool], phi2: &[bool]) -> Result<Policy, SynthError> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let transient = |s: usize| phi1[s] && !phi2[s];

    // states that reach φ2 with positive probability under every policy
    let mut forced = phi2.to_vec();
    loop {
        let mut changed = false;
        for s in 0..n {
            if transient(s) && !forced[s] && (0..m).all(|a| mdp.row(s, a).iter().any(|&(t, _)| forced[t])) {
                forced[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut x: Vec<f64> = phi2.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let maybe: Vec<usize> = (0..n).filter(|&s| transient(s) && forced[s]).collect();
    for _ in 0..MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for &s in &maybe {
            let v = (0..m).map(|a| expected(mdp, s, a, &x)).fold(f64::INFINITY, f64::min);
            change = change.max((v - x[s]).abs());
            x[s] = v;
        }
        if change < VALUE_TOLERANCE {
            break;
        }
    }

    let mut actions = vec![0; n];
    for s in 0..n {
        if transient(s) && !forced[s] {
            // some action keeps all mass among avoiding states
            actions[s] = (0..m)
                .find(|&a| mdp.row(s, a).iter().all(|&(t, _)| !forced[t]))
                .unwrap_or(0);
        }
    }
    for &s in &maybe {
        actions[s] = argmin(mdp, s, &x);
    }

    // policy iteration on exact values removes residual tie errors
    for _ in 0..POLISH_ROUNDS {
        let values = check_unbounded_until(&induce_dtmc(mdp, &Policy::new(actions.clone()))?, phi1, phi2);
        let mut improved = false;
        for &s in &maybe {
            let current = expected(mdp, s, actions[s], &values);
            let a = argmin(mdp, s, &values);
            if expected(mdp, s, a, &values) < current - VALUE_TOLERANCE {
                actions[s] = a;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(Policy::new(actions))
}

/// Lowest-index action minimizing the expected value, up to tolerance.
fn argmin(mdp: &Mdp, s: usize, values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for a in 0..mdp.n_actions() {
        let v = expected(mdp, s, a, values);
        if v < best_value - VALUE_TOLERANCE {
            best = a;
            best_value = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pctl::parse_pctl;
    use crate::testutil::random_mdp;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_policies(mdp: &Mdp) -> Vec<Policy> {
        let mut out = Vec::new();
        let mut actions = vec![0; mdp.n_states()];
        loop {
            out.push(Policy::new(actions.clone()));
            if !odometer(&mut actions, mdp.n_actions()) {
                return out;
            }
        }
    }

    fn brute_force(mdp: &Mdp, formula: &StateFormula) -> f64 {
        all_policies(mdp)
            .iter()
            .map(|p| verify(&induce_dtmc(mdp, p).unwrap(), formula).unwrap().probability)
            .fold(f64::INFINITY, f64::min)
    }

    fn labelled(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mdp {
        let base = random_mdp(rng, n, m, 0.9);
        let mut b = Mdp::builder(n, m, 0.9);
        for s in 0..n {
            for a in 0..m {
                for &(t, p) in base.row(s, a) {
                    b.add_transition(s, a, t, p);
                }
            }
            if s > 0 && rng.gen_bool(0.3) {
                b.add_label("unsafe", s);
            }
        }
        b.label("unsafe", []).build().unwrap()
    }

    #[test]
    fn no_unsafe_states_means_zero() {
        let mdp = Mdp::builder(2, 2, 0.9)
            .transition(0, 0, 1, 1.0)
            .transition(0, 1, 0, 1.0)
            .transition(1, 0, 1, 1.0)
            .transition(1, 1, 0, 1.0)
            .label("unsafe", [])
            .build()
            .unwrap();
        let phi = parse_pctl(r#"P<=0.1 [ true U<=5 "unsafe" ]"#).unwrap();
        let r = synthesize_min_reach_policy(&mdp, &phi).unwrap();
        assert_eq!(r.probability, 0.0);
        assert_eq!(r.policy.actions(), &[0, 0]);
    }

    #[test]
    fn dominant_action_is_chosen() {
        let mdp = Mdp::builder(2, 2, 0.9)
            .transition(0, 0, 1, 0.9)
            .transition(0, 0, 0, 0.1)
            .transition(0, 1, 1, 0.1)
            .transition(0, 1, 0, 0.9)
            .transition(1, 0, 1, 1.0)
            .transition(1, 1, 1, 1.0)
            .label("unsafe", [1])
            .build()
            .unwrap();
        let phi = parse_pctl(r#"P<=0.5 [ true U<=1 "unsafe" ]"#).unwrap();
        let r = synthesize_min_reach_policy(&mdp, &phi).unwrap();
        assert_eq!(r.policy.action(0), 1);
        assert_abs_diff_eq!(r.probability, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn matches_enumeration_on_three_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mdp = labelled(&mut rng, 3, 2);
            for text in [r#"P<=0.1 [ true U "unsafe" ]"#, r#"P<=0.1 [ true U<=4 "unsafe" ]"#] {
                let phi = parse_pctl(text).unwrap();
                let r = synthesize_min_reach_policy(&mdp, &phi).unwrap();
                assert_abs_diff_eq!(r.probability, brute_force(&mdp, &phi), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn unbounded_matches_enumeration_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=3);
            let mdp = labelled(&mut rng, n, m);
            let phi = parse_pctl(r#"P<=0.5 [ true U "unsafe" ]"#).unwrap();
            let r = synthesize_min_reach_policy(&mdp, &phi).unwrap();
            assert_abs_diff_eq!(r.probability, brute_force(&mdp, &phi), epsilon = 1e-9);
            let check = verify(&induce_dtmc(&mdp, &r.policy).unwrap(), &phi).unwrap().probability;
            assert_abs_diff_eq!(check, r.probability, epsilon = 1e-10);
        }
    }

    #[test]
    fn lower_bounds_random_policies_on_larger_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = labelled(&mut rng, 12, 3);
        let phi = parse_pctl(r#"P<=0.5 [ true U<=6 "unsafe" ]"#).unwrap();
        let r = synthesize_min_reach_policy(&mdp, &phi).unwrap();
        assert!(r.lower_bound <= r.probability + 1e-12);
        for _ in 0..100 {
            let policy = Policy::new((0..12).map(|_| rng.gen_range(0..3)).collect());
            let p = verify(&induce_dtmc(&mdp, &policy).unwrap(), &phi).unwrap().probability;
            assert!(r.probability <= p + 1e-12);
        }
    }

    #[test]
    fn avoidable_states_get_probability_zero() {
        // state 0 can stay forever (action 1) or gamble (action 0)
        let mdp = Mdp::builder(2, 2, 0.9)
            .transition(0, 0, 1, 0.5)
            .transition(0, 0, 0, 0.5)
            .transition(0, 1, 0, 1.0)
            .transition(1, 0, 1, 1.0)
            .transition(1, 1, 1, 1.0)
            .label("unsafe", [1])
            .build()
            .unwrap();
        let phi = parse_pctl(r#"P<=0.0 [ true U "unsafe" ]"#).unwrap();
        let r = synthesize_min_reach_policy(&mdp, &phi).unwrap();
        assert_eq!(r.policy.action(0), 1);
        assert_eq!(r.probability, 0.0);
    }

    #[test]
    fn infeasible_stationary_projection() {
        // s0: a0 risks 0.1 and stays; a1 risks 0.15 and otherwise takes a
        // five-step detour back to s0. Over seven steps the best plan is a1
        // first and a0 on return, which no stationary policy can express.
        let (s0, unsafe_state, detour) = (0, 1, 2..7);
        let mut b = Mdp::builder(7, 2, 0.9)
            .transition(s0, 0, unsafe_state, 0.1)
            .transition(s0, 0, s0, 0.9)
            .transition(s0, 1, unsafe_state, 0.15)
            .transition(s0, 1, 2, 0.85)
            .label("unsafe", [unsafe_state]);
        for a in 0..2 {
            b.add_transition(unsafe_state, a, unsafe_state, 1.0);
            for d in detour.clone() {
                b.add_transition(d, a, if d == 6 { s0 } else { d + 1 }, 1.0);
            }
        }
        let mdp = b.build().unwrap();
        let phi = parse_pctl(r#"P<=0.25 [ true U<=7 "unsafe" ]"#).unwrap();
        match synthesize_min_reach_policy(&mdp, &phi) {
            Err(SynthError::InfeasibleStationary { stationary, optimum, .. }) => {
                assert_abs_diff_eq!(optimum, 0.235, epsilon = 1e-12);
                assert_abs_diff_eq!(stationary, 0.15 + 0.85 * 0.15, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let loose = parse_pctl(r#"P<=0.3 [ true U<=7 "unsafe" ]"#).unwrap();
        let r = synthesize_min_reach_policy(&mdp, &loose).unwrap();
        assert_eq!(r.policy.action(s0), 1);
        assert_abs_diff_eq!(r.lower_bound, 0.235, epsilon = 1e-12);
    }

    #[test]
    fn lower_bound_formulas_are_rejected() {
        let mdp = Mdp::builder(1, 1, 0.9).transition(0, 0, 0, 1.0).label("u", []).build().unwrap();
        let phi = parse_pctl(r#"P>=0.5 [ true U "u" ]"#).unwrap();
        assert_eq!(synthesize_min_reach_policy(&mdp, &phi), Err(SynthError::LowerBound));
    }
}
