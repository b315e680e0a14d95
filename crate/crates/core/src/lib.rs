//! Counterexample-guided apprenticeship learning.
//!
//! The crate learns a policy for a tabular MDP from expert feature
//! expectations while keeping a PCTL safety property of the form
//! `P<=p [ φ1 U<=t φ2 ]` satisfied. Its pieces can also be used on their own:
//!
//! * [`mdp`]: models, dynamic programming and feature expectations
//! * [`pctl`]: formula parsing and DTMC model checking
//! * [`cex`]: counterexamples as sets of most-probable violating paths
//! * [`margin`]: max-margin reward weight optimization
//! * [`synth`]: minimum-reachability (maximally safe) policies
//! * [`learn`]: plain apprenticeship learning and the counterexample-guided loop
//! * [`envs`]: grid-world and mountain-car benchmark models
//! * [`io`]: plain-text file formats
//!
//! ```
//! use cegal::envs::GridWorldSpec;
//! use cegal::pctl::{parse_pctl, verify};
//! use cegal::mdp::{induce_dtmc, Policy};
//!
//! let spec = GridWorldSpec::preset(8);
//! let (mdp, _features) = spec.build().unwrap();
//! let stay = Policy::constant(mdp.n_states(), 0);
//! let phi = parse_pctl(r#"P<=0.2 [ true U<=64 "unsafe" ]"#).unwrap();
//! let verdict = verify(&induce_dtmc(&mdp, &stay).unwrap(), &phi).unwrap();
//! assert!(verdict.probability < 0.2);
//! ```

pub mod cex;
pub mod envs;
pub mod io;
pub mod learn;
pub mod margin;
pub mod mdp;
pub mod pctl;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mdps.md")]
    mod mdps {}
    #[doc = include_str!("../../../book/src/pctl.md")]
    mod pctl {}
    #[doc = include_str!("../../../book/src/counterexamples.md")]
    mod counterexamples {}
    #[doc = include_str!("../../../book/src/max-margin.md")]
    mod max_margin {}
    #[doc = include_str!("../../../book/src/safe-synthesis.md")]
    mod safe_synthesis {}
    #[doc = include_str!("../../../book/src/cegal.md")]
    mod cegal {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
