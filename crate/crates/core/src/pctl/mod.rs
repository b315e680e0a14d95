//! PCTL formulas over labelled Markov chains.
//!
//! The AST covers state formulas (`true`, labels, `!`, `&`, `P⋈p [ψ]`) and
//! path formulas (`X φ`, `φ U<=t φ`, `φ U φ`). Model checking is provided for
//! a top-level probability operator over until; nested operators and Next are
//! parsed but rejected by [`verify`].

mod check;
mod parse;

use std::fmt;

pub use check::{
    check_bounded_until, check_unbounded_until, satisfaction_set, until_operands, verify, CheckError,
    UntilQuery, Verdict, UNTIL_TOLERANCE,
};
pub(crate) use check::{satisfaction_in, until_probabilities};
pub use parse::{parse_pctl, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Le,
    Lt,
    Ge,
    Gt,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Le => value <= threshold,
            Comparison::Lt => value < threshold,
            Comparison::Ge => value >= threshold,
            Comparison::Gt => value > threshold,
        }
    }

    /// Upper-bound comparisons (`<=`, `<`) describe safety properties.
    pub fn is_upper_bound(self) -> bool {
        matches!(self, Comparison::Le | Comparison::Lt)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Le => "<=",
            Comparison::Lt => "<",
            Comparison::Ge => ">=",
            Comparison::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateFormula {
    True,
    Atom(String),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Prob {
        comparison: Comparison,
        threshold: f64,
        path: Box<PathFormula>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathFormula {
    Next(StateFormula),
    Until {
        left: StateFormula,
        right: StateFormula,
        /// Step bound; `None` for unbounded until.
        bound: Option<u32>,
    },
}

/// Alias for the top-level formula type.
pub type PctlFormula = StateFormula;

impl StateFormula {
    pub fn atom(label: &str) -> Self {
        StateFormula::Atom(label.to_string())
    }

    pub fn and(self, other: StateFormula) -> Self {
        StateFormula::And(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        StateFormula::Not(Box::new(self))
    }

    /// `P⋈p [ left U<=bound right ]`.
    pub fn prob_until(
        comparison: Comparison,
        threshold: f64,
        left: StateFormula,
        right: StateFormula,
        bound: Option<u32>,
    ) -> Self {
        StateFormula::Prob {
            comparison,
            threshold,
            path: Box::new(PathFormula::Until { left, right, bound }),
        }
    }

    /// The safety property `P<=p [ true U<=t "label" ]`.
    pub fn bounded_reach(threshold: f64, label: &str, bound: u32) -> Self {
        Self::prob_until(
            Comparison::Le,
            threshold,
            StateFormula::True,
            StateFormula::atom(label),
            Some(bound),
        )
    }

    /// Same formula with its top-level threshold replaced.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        match self {
            StateFormula::Prob { comparison, path, .. } => StateFormula::Prob {
                comparison: *comparison,
                threshold,
                path: path.clone(),
            },
            other => other.clone(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            StateFormula::And(..) => 1,
            _ => 2,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, phi: &StateFormula, min_prec: u8) -> fmt::Result {
    if phi.precedence() < min_prec {
        write!(f, "({phi})")
    } else {
        write!(f, "{phi}")
    }
}

/// Canonical text form; re-parses to an equal AST.
impl fmt::Display for StateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateFormula::True => f.write_str("true"),
            StateFormula::Atom(label) => write!(f, "\"{label}\""),
            StateFormula::Not(inner) => {
                f.write_str("!")?;
                write_operand(f, inner, 2)
            }
            StateFormula::And(a, b) => {
                write_operand(f, a, 1)?;
                f.write_str(" & ")?;
                write_operand(f, b, 2)
            }
            StateFormula::Prob {
                comparison,
                threshold,
                path,
            } => write!(f, "P{}{} [ {} ]", comparison.symbol(), threshold, path),
        }
    }
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Next(phi) => {
                f.write_str("X ")?;
                write_operand(f, phi, 2)
            }
            PathFormula::Until { left, right, bound } => {
                write!(f, "{left} U")?;
                if let Some(t) = bound {
                    write!(f, "<={t}")?;
                }
                write!(f, " {right}")
            }
        }
    }
}
