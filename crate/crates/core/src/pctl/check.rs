use std::collections::VecDeque;

use thiserror::Error;

use super::{Comparison, PathFormula, StateFormula};
use crate::mdp::{Dtmc, Labels};

/// Gauss–Seidel stops once no entry moves by more than this.
pub const UNTIL_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error("label `{0}` is not defined in the model")]
    UnknownLabel(String),
    #[error("unsupported formula: {0}")]
    UnsupportedFormula(String),
}

/// Outcome of checking a top-level probability operator at the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub satisfied: bool,
    pub probability: f64,
    pub formula: StateFormula,
}

/// Decomposed `P⋈p [ left U<=bound right ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UntilQuery {
    pub comparison: Comparison,
    pub threshold: f64,
    pub left: StateFormula,
    pub right: StateFormula,
    pub bound: Option<u32>,
}

impl UntilQuery {
    /// Whether `probability` violates the bound.
    pub fn violated_by(&self, probability: f64) -> bool {
        !self.comparison.holds(probability, self.threshold)
    }
}

/// Splits a top-level `P⋈p [ φ1 U φ2 ]` into its parts.
pub fn until_operands(formula: &StateFormula) -> Result<UntilQuery, CheckError> {
    match formula {
        StateFormula::Prob {
            comparison,
            threshold,
            path,
        } => match path.as_ref() {
            PathFormula::Until { left, right, bound } => Ok(UntilQuery {
                comparison: *comparison,
                threshold: *threshold,
                left: left.clone(),
                right: right.clone(),
                bound: *bound,
            }),
            PathFormula::Next(_) => Err(CheckError::UnsupportedFormula(
                "next-step path formulas are not checked".into(),
            )),
        },
        _ => Err(CheckError::UnsupportedFormula(
            "top level must be a probability operator".into(),
        )),
    }
}

/// States satisfying a propositional state formula.
pub fn satisfaction_set(dtmc: &Dtmc, phi: &StateFormula) -> Result<Vec<bool>, CheckError> {
    satisfaction_in(dtmc.labels(), dtmc.n_states(), phi)
}

/// States among `0..n` satisfying `phi` under the given labelling.
pub(crate) fn satisfaction_in(labels: &Labels, n: usize, phi: &StateFormula) -> Result<Vec<bool>, CheckError> {
    Ok(match phi {
        StateFormula::True => vec![true; n],
        StateFormula::Atom(label) => {
            let states = labels
                .get(label)
                .ok_or_else(|| CheckError::UnknownLabel(label.clone()))?;
            (0..n).map(|s| states.contains(&s)).collect()
        }
        StateFormula::Not(inner) => satisfaction_in(labels, n, inner)?.into_iter().map(|b| !b).collect(),
        StateFormula::And(a, b) => {
            let a = satisfaction_in(labels, n, a)?;
            let b = satisfaction_in(labels, n, b)?;
            a.into_iter().zip(b).map(|(x, y)| x && y).collect()
        }
        StateFormula::Prob { .. } => {
            return Err(CheckError::UnsupportedFormula(
                "nested probability operators".into(),
            ))
        }
    })
}

/// Probability of `φ1 U<=t φ2` from every state.
pub fn check_bounded_until(dtmc: &Dtmc, phi1: &[bool], phi2: &[bool], t: u32) -> Vec<f64> {
    let n = dtmc.n_states();
    let mut x: Vec<f64> = phi2.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut next = x.clone();
    for _ in 0..t {
        for s in 0..n {
            next[s] = if phi2[s] {
                1.0
            } else if !phi1[s] {
                0.0
            } else {
                dtmc.row(s).iter().map(|&(t, p)| p * x[t]).sum()
            };
        }
        std::mem::swap(&mut x, &mut next);
    }
    x
}

/// Backward closure of `targets` through predecessors accepted by `through`.
fn backward_reach(
    preds: &[Vec<(usize, f64)>],
    targets: &[bool],
    through: impl Fn(usize) -> bool,
) -> Vec<bool> {
    let mut seen = targets.to_vec();
    let mut queue: VecDeque<usize> = (0..targets.len()).filter(|&s| targets[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &(s, _) in &preds[t] {
            if !seen[s] && through(s) {
                seen[s] = true;
                queue.push_back(s);
            }
        }
    }
    seen
}

/// Probability of `φ1 U φ2` from every state.
///
/// States with probability 0 and 1 are found by graph search; the remaining
/// linear system is solved by Gauss–Seidel iteration.
pub fn check_unbounded_until(dtmc: &Dtmc, phi1: &[bool], phi2: &[bool]) -> Vec<f64> {
    let n = dtmc.n_states();
    let preds = dtmc.predecessors();
    let transient = |s: usize| phi1[s] && !phi2[s];
    let can_reach = backward_reach(&preds, phi2, transient);
    let prob0: Vec<bool> = can_reach.iter().map(|&b| !b).collect();
    let reaches_prob0 = backward_reach(&preds, &prob0, transient);

    let mut x: Vec<f64> = (0..n).map(|s| if reaches_prob0[s] { 0.0 } else { 1.0 }).collect();
    let maybe: Vec<usize> = (0..n).filter(|&s| reaches_prob0[s] && !prob0[s]).collect();
    for _ in 0..MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for &s in &maybe {
            let v: f64 = dtmc.row(s).iter().map(|&(t, p)| p * x[t]).sum();
            change = change.max((v - x[s]).abs());
            x[s] = v;
        }
        if change < UNTIL_TOLERANCE {
            break;
        }
    }
    x
}

/// Per-state probabilities of the path formula inside `query`.
pub(crate) fn until_probabilities(dtmc: &Dtmc, query: &UntilQuery) -> Result<Vec<f64>, CheckError> {
    let phi1 = satisfaction_set(dtmc, &query.left)?;
    let phi2 = satisfaction_set(dtmc, &query.right)?;
    Ok(match query.bound {
        Some(t) => check_bounded_until(dtmc, &phi1, &phi2, t),
        None => check_unbounded_until(dtmc, &phi1, &phi2),
    })
}

/// Checks a top-level `P⋈p [ φ1 U(<=t) φ2 ]` at the initial state.
pub fn verify(dtmc: &Dtmc, formula: &StateFormula) -> Result<Verdict, CheckError> {
    let query = until_operands(formula)?;
    let probability = until_probabilities(dtmc, &query)?[dtmc.initial_state()];
    Ok(Verdict {
        satisfied: query.comparison.holds(probability, query.threshold),
        probability,
        formula: formula.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pctl::parse_pctl;
    use approx::assert_abs_diff_eq;

    fn labels(entries: &[(&str, &[usize])]) -> Labels {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().copied().collect()))
            .collect()
    }

    fn half_chain() -> Dtmc {
        Dtmc::new(
            vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
            0,
            labels(&[("unsafe", &[1])]),
        )
        .unwrap()
    }

    #[test]
    fn initial_goal_state_has_probability_one() {
        let dtmc = Dtmc::new(vec![vec![(0, 1.0)]], 0, labels(&[("g", &[0])])).unwrap();
        for t in 1..5 {
            assert_eq!(check_bounded_until(&dtmc, &[true], &[true], t), vec![1.0]);
        }
    }

    #[test]
    fn two_step_bounded_reach() {
        let x = check_bounded_until(&half_chain(), &[true, true], &[false, true], 2);
        assert_abs_diff_eq!(x[0], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn unreachable_target_is_zero() {
        let dtmc = Dtmc::new(
            vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            0,
            labels(&[("t", &[1])]),
        )
        .unwrap();
        assert_eq!(check_unbounded_until(&dtmc, &[true, true], &[false, true])[0], 0.0);
    }

    #[test]
    fn certain_target_is_one() {
        let x = check_unbounded_until(&half_chain(), &[true, true], &[false, true]);
        assert_eq!(x[0], 1.0);
    }

    #[test]
    fn gambler_chain_matches_closed_form() {
        // states 0 (broke), 1, 2, 3 (win); win w.p. p from the middle states
        let p = 0.4;
        let dtmc = Dtmc::new(
            vec![
                vec![(0, 1.0)],
                vec![(0, 1.0 - p), (2, p)],
                vec![(1, 1.0 - p), (3, p)],
                vec![(3, 1.0)],
            ],
            1,
            labels(&[("win", &[3])]),
        )
        .unwrap();
        let x = check_unbounded_until(&dtmc, &[true; 4], &[false, false, false, true]);
        let r: f64 = (1.0 - p) / p;
        let ruin = |i: i32| (1.0 - r.powi(i)) / (1.0 - r.powi(3));
        assert_abs_diff_eq!(x[1], ruin(1), epsilon = 1e-9);
        assert_abs_diff_eq!(x[2], ruin(2), epsilon = 1e-9);
    }

    #[test]
    fn verdict_against_threshold() {
        let dtmc = half_chain();
        let sat = verify(&dtmc, &parse_pctl(r#"P<=0.8 [ true U<=2 "unsafe" ]"#).unwrap()).unwrap();
        assert!(sat.satisfied);
        assert_abs_diff_eq!(sat.probability, 0.75, epsilon = 1e-15);
        let unsat = verify(&dtmc, &parse_pctl(r#"P<=0.7 [ true U<=2 "unsafe" ]"#).unwrap()).unwrap();
        assert!(!unsat.satisfied);
        let one = verify(&dtmc, &parse_pctl(r#"P<=1.0 [ true U "unsafe" ]"#).unwrap()).unwrap();
        assert!(one.satisfied);
    }

    #[test]
    fn unsat_verdict_reports_probability() {
        // a chain whose one-step violation probability is 0.246
        let dtmc = Dtmc::new(
            vec![vec![(1, 0.246), (2, 0.754)], vec![(1, 1.0)], vec![(2, 1.0)]],
            0,
            labels(&[("unsafe", &[1])]),
        )
        .unwrap();
        let v = verify(&dtmc, &StateFormula::bounded_reach(0.2, "unsafe", 64)).unwrap();
        assert!(!v.satisfied);
        assert_abs_diff_eq!(v.probability, 0.246, epsilon = 1e-15);
    }

    #[test]
    fn unsupported_and_unknown() {
        let dtmc = half_chain();
        assert!(matches!(
            verify(&dtmc, &parse_pctl(r#"P<=0.5 [ X "unsafe" ]"#).unwrap()),
            Err(CheckError::UnsupportedFormula(_))
        ));
        assert!(matches!(
            verify(&dtmc, &parse_pctl(r#"P<=0.5 [ true U P<=0.1 [ true U "unsafe" ] ]"#).unwrap()),
            Err(CheckError::UnsupportedFormula(_))
        ));
        assert_eq!(
            verify(&dtmc, &parse_pctl(r#"P<=0.5 [ true U "nope" ]"#).unwrap()),
            Err(CheckError::UnknownLabel("nope".into()))
        );
        assert!(verify(&dtmc, &StateFormula::True).is_err());
    }
}
