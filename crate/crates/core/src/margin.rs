//! Max-margin reward weights.
//!
//! Both objectives have the form `max_{‖ω‖≤1} min_{d∈D} ωᵀd` for a finite
//! vector set `D`. Its value is the distance from the origin to the convex
//! hull of `D` (zero when the origin lies inside), attained at the
//! normalized minimum-norm point of the hull. We compute that point exactly
//! with Wolfe's algorithm.
//!
//! The weighted objective ranges over triples `(π, π̃, cex)` independently,
//! so `D` is the Minkowski sum `k(μ_E − M) ⊕ (1−k)M ⊕ −(1−k)C` and linear
//! minimization over it splits into one argmin per factor. The sum is never
//! materialized.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mdp::{dot, norm, FeatureExpectation, RewardWeights};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarginError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight k = {0} outside [0, 1]")]
    InvalidK(f64),
    #[error("no candidate feature expectations")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginOptions {
    /// Bound on the objective gap at termination.
    pub tolerance: f64,
    /// Major iterations of the min-norm-point search.
    pub max_iters: usize,
}

impl Default for MarginOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Counterexample-weighted margin problem.
///
/// With no counterexamples the separation term is dropped and the problem
/// is the plain apprenticeship margin regardless of `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginProblem {
    pub mu_expert: FeatureExpectation,
    /// Feature expectations of the verified-safe candidates.
    pub safe_candidates: Vec<FeatureExpectation>,
    pub counterexamples: Vec<FeatureExpectation>,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginSolution {
    pub omega: RewardWeights,
    /// Inner minimum evaluated at `omega`.
    pub delta: f64,
    pub iterations: usize,
}

impl MarginProblem {
    pub fn new(
        mu_expert: FeatureExpectation,
        safe_candidates: Vec<FeatureExpectation>,
        counterexamples: Vec<FeatureExpectation>,
        k: f64,
    ) -> Result<Self, MarginError> {
        let problem = Self {
            mu_expert,
            safe_candidates,
            counterexamples,
            k,
        };
        problem.validate()?;
        Ok(problem)
    }

    fn validate(&self) -> Result<(), MarginError> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(MarginError::InvalidK(self.k));
        }
        if self.safe_candidates.is_empty() {
            return Err(MarginError::NoCandidates);
        }
        let dim = self.mu_expert.dim();
        for v in self.safe_candidates.iter().chain(&self.counterexamples) {
            if v.dim() != dim {
                return Err(MarginError::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
        }
        Ok(())
    }

    /// Whether the separation term takes part.
    fn weighted(&self) -> bool {
        !self.counterexamples.is_empty() && self.k < 1.0
    }

    /// `min` over all triples of `ωᵀ(k(μ_E−μ_π) + (1−k)(μ_π̃−μ_cex))`.
    pub fn inner_min(&self, omega: &[f64]) -> f64 {
        let e = dot(omega, self.mu_expert.as_slice());
        let max_pi = self
            .safe_candidates
            .iter()
            .map(|m| dot(omega, m.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        if !self.weighted() {
            return e - max_pi;
        }
        let min_pi = self
            .safe_candidates
            .iter()
            .map(|m| dot(omega, m.as_slice()))
            .fold(f64::INFINITY, f64::min);
        let max_cex = self
            .counterexamples
            .iter()
            .map(|m| dot(omega, m.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        self.k * (e - max_pi) + (1.0 - self.k) * (min_pi - max_cex)
    }

    fn factors(&self) -> Vec<Vec<Vec<f64>>> {
        let e = self.mu_expert.as_slice();
        let k = if self.weighted() { self.k } else { 1.0 };
        let mut factors = Vec::new();
        if k > 0.0 {
            factors.push(
                self.safe_candidates
                    .iter()
                    .map(|m| e.iter().zip(m.as_slice()).map(|(a, b)| k * (a - b)).collect())
                    .collect(),
            );
        }
        if k < 1.0 {
            let w = 1.0 - k;
            factors.push(
                self.safe_candidates
                    .iter()
                    .map(|m| m.as_slice().iter().map(|x| w * x).collect())
                    .collect(),
            );
            factors.push(
                self.counterexamples
                    .iter()
                    .map(|m| m.as_slice().iter().map(|x| -w * x).collect())
                    .collect(),
            );
        }
        factors
    }
}

/// Plain margin `max_{‖ω‖≤1} min_π ωᵀ(μ_E − μ_π)`.
pub fn solve_max_margin(
    mu_expert: &FeatureExpectation,
    candidates: &[FeatureExpectation],
) -> Result<MarginSolution, MarginError> {
    solve_max_margin_with(mu_expert, candidates, &MarginOptions::default())
}

pub fn solve_max_margin_with(
    mu_expert: &FeatureExpectation,
    candidates: &[FeatureExpectation],
    options: &MarginOptions,
) -> Result<MarginSolution, MarginError> {
    let problem = MarginProblem::new(mu_expert.clone(), candidates.to_vec(), Vec::new(), 1.0)?;
    solve_weighted_margin_with(&problem, options)
}

pub fn solve_weighted_margin(problem: &MarginProblem) -> Result<MarginSolution, MarginError> {
    solve_weighted_margin_with(problem, &MarginOptions::default())
}

pub fn solve_weighted_margin_with(
    problem: &MarginProblem,
    options: &MarginOptions,
) -> Result<MarginSolution, MarginError> {
    problem.validate()?;
    let factors = problem.factors();
    let (x, iterations) = min_norm_point(&factors, options);
    let len = norm(&x);
    let omega = if len > options.tolerance {
        x.iter().map(|v| v / len).collect()
    } else {
        vec![0.0; x.len()]
    };
    let delta = problem.inner_min(&omega);
    Ok(MarginSolution {
        omega: RewardWeights::new(omega).expect("unit vector"),
        delta,
        iterations,
    })
}

/// A vertex of the Minkowski sum: one index per factor plus its coordinates.
#[derive(Debug, Clone)]
struct Vertex {
    choice: Vec<usize>,
    point: Vec<f64>,
}

fn linear_minimizer(factors: &[Vec<Vec<f64>>], direction: &[f64]) -> Vertex {
    let dim = direction.len();
    let mut point = vec![0.0; dim];
    let mut choice = Vec::with_capacity(factors.len());
    for set in factors {
        let mut best = 0;
        let mut best_value = f64::INFINITY;
        for (i, v) in set.iter().enumerate() {
            let value = dot(direction, v);
            if value < best_value {
                best_value = value;
                best = i;
            }
        }
        choice.push(best);
        for (p, v) in point.iter_mut().zip(&set[best]) {
            *p += v;
        }
    }
    Vertex { choice, point }
}

/// Point of the affine hull of `corral` closest to the origin, as affine
/// coefficients.
fn affine_minimizer(corral: &[Vertex]) -> Vec<f64> {
    let m = corral.len();
    if m == 1 {
        return vec![1.0];
    }
    let dim = corral[0].point.len();
    let base = &corral[0].point;
    let a = DMatrix::from_fn(dim, m - 1, |r, c| corral[c + 1].point[r] - base[r]);
    let b = DVector::from_iterator(dim, base.iter().map(|v| -v));
    let beta = a
        .svd(true, true)
        .solve(&b, 1e-13)
        .expect("singular vectors were computed");
    let mut alpha = Vec::with_capacity(m);
    alpha.push(1.0 - beta.sum());
    alpha.extend(beta.iter());
    alpha
}

fn combine(corral: &[Vertex], weights: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; corral[0].point.len()];
    for (v, &w) in corral.iter().zip(weights) {
        for (xi, p) in x.iter_mut().zip(&v.point) {
            *xi += w * p;
        }
    }
    x
}

/// Wolfe's minimum-norm-point algorithm with a linear-minimization oracle.
/// Returns the point and the number of major iterations.
fn min_norm_point(factors: &[Vec<Vec<f64>>], options: &MarginOptions) -> (Vec<f64>, usize) {
    let dim = factors[0][0].len();
    let first = linear_minimizer(factors, &vec![0.0; dim]);
    let scale = factors
        .iter()
        .map(|set| set.iter().map(|v| norm(v)).fold(0.0, f64::max))
        .sum::<f64>()
        .max(1.0);
    let mut x = first.point.clone();
    let mut corral = vec![first];
    let mut lambda = vec![1.0];
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        let len = norm(&x);
        if len <= options.tolerance {
            break;
        }
        let q = linear_minimizer(factors, &x);
        // gap / ‖x‖ bounds the objective error of ω = x / ‖x‖
        let gap = dot(&x, &x) - dot(&x, &q.point);
        if gap <= options.tolerance * len || gap <= 1e-15 * scale * scale {
            break;
        }
        if corral.iter().any(|v| v.choice == q.choice) {
            break;
        }
        corral.push(q);
        lambda.push(0.0);
        loop {
            let alpha = affine_minimizer(&corral);
            if alpha.iter().all(|&a| a > 1e-14) {
                lambda = alpha;
                x = combine(&corral, &lambda);
                break;
            }
            // step from λ towards α until the first coefficient hits zero
            let theta = lambda
                .iter()
                .zip(&alpha)
                .filter(|(_, &a)| a <= 1e-14)
                .map(|(&l, &a)| if l - a > 0.0 { l / (l - a) } else { 0.0 })
                .fold(1.0, f64::min);
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            (corral, lambda) = corral
                .drain(..)
                .zip(lambda.drain(..))
                .filter(|(_, l)| *l > 1e-14)
                .unzip();
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            x = combine(&corral, &lambda);
            if corral.len() == 1 {
                break;
            }
        }
    }
    (x, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fe(v: &[f64]) -> FeatureExpectation {
        FeatureExpectation::new(v.to_vec())
    }

    /// Best value of the inner min over 10⁵ angles, refined by golden section.
    fn circle_oracle(problem: &MarginProblem) -> f64 {
        let f = |theta: f64| problem.inner_min(&[theta.cos(), theta.sin()]);
        let n = 100_000;
        let step = std::f64::consts::TAU / n as f64;
        let (best_i, mut best) = (0..n)
            .map(|i| (i, f(i as f64 * step)))
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let (mut a, mut b) = ((best_i as f64 - 1.0) * step, (best_i as f64 + 1.0) * step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best = best.max(f((a + b) / 2.0));
        best.max(0.0)
    }

    /// Distance from the origin to conv(points), by trying every affinely
    /// independent subset of at most `dim + 1` points.
    fn hull_distance_oracle(points: &[Vec<f64>]) -> f64 {
        let dim = points[0].len();
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if idx.len() > dim + 1 {
                continue;
            }
            // KKT system of min ‖Σ a_i p_i‖² subject to Σ a_i = 1
            let m = idx.len();
            let mut kkt = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    kkt[(r, c)] = 2.0 * points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum::<f64>();
                }
                kkt[(r, m)] = 1.0;
                kkt[(m, r)] = 1.0;
            }
            rhs[m] = 1.0;
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            if (0..m).any(|r| sol[r] < -1e-12) {
                continue;
            }
            let mut x = vec![0.0; dim];
            for (r, &i) in idx.iter().enumerate() {
                for (xd, p) in x.iter_mut().zip(&points[i]) {
                    *xd += sol[r] * p;
                }
            }
            best = best.min(norm(&x));
        }
        best
    }

    fn all_vertices(problem: &MarginProblem) -> Vec<Vec<f64>> {
        let factors = problem.factors();
        let mut out = vec![vec![0.0; problem.mu_expert.dim()]];
        for set in factors {
            out = out
                .iter()
                .flat_map(|p| {
                    set.iter()
                        .map(move |v| p.iter().zip(v).map(|(a, b)| a + b).collect::<Vec<f64>>())
                })
                .collect();
        }
        out
    }

    #[test]
    fn expert_among_candidates_gives_zero() {
        let s = solve_max_margin(&fe(&[0.3, 0.7]), &[fe(&[0.3, 0.7])]).unwrap();
        assert_eq!(s.delta, 0.0);
        assert_eq!(s.omega.norm(), 0.0);
    }

    #[test]
    fn single_candidate_axis() {
        let s = solve_max_margin(&fe(&[1.0, 0.0]), &[fe(&[0.0, 0.0])]).unwrap();
        assert_abs_diff_eq!(s.delta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega.as_slice()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega.as_slice()[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_candidate_diagonal() {
        let s = solve_max_margin(&fe(&[1.0, 1.0]), &[fe(&[0.0, 0.0])]).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(s.delta, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega.as_slice()[0], r, epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega.as_slice()[1], r, epsilon = 1e-12);
    }

    #[test]
    fn pure_separation_at_k_zero() {
        let p = MarginProblem::new(fe(&[5.0, 5.0]), vec![fe(&[1.0, 0.0])], vec![fe(&[0.0, 0.0])], 0.0).unwrap();
        let s = solve_weighted_margin(&p).unwrap();
        assert_abs_diff_eq!(s.delta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega.as_slice()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_triple_closed_form() {
        let p = MarginProblem::new(fe(&[2.0, 0.0]), vec![fe(&[0.0, 0.0])], vec![fe(&[0.0, 0.0])], 0.5).unwrap();
        let s = solve_weighted_margin(&p).unwrap();
        assert_abs_diff_eq!(s.delta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega.as_slice()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn k_one_and_empty_cex_reduce_to_plain_margin() {
        let mu_e = fe(&[1.0, 2.0, 0.5]);
        let cands = vec![fe(&[0.2, 0.1, 0.9]), fe(&[0.8, 0.4, 0.1])];
        let plain = solve_max_margin(&mu_e, &cands).unwrap();
        let k1 = MarginProblem::new(mu_e.clone(), cands.clone(), vec![fe(&[3.0, 3.0, 3.0])], 1.0).unwrap();
        let empty = MarginProblem::new(mu_e, cands, Vec::new(), 0.3).unwrap();
        for p in [k1, empty] {
            let s = solve_weighted_margin(&p).unwrap();
            assert_abs_diff_eq!(s.delta, plain.delta, epsilon = 1e-9);
            for (a, b) in s.omega.as_slice().iter().zip(plain.omega.as_slice()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn origin_inside_hull_is_not_an_error() {
        let s = solve_max_margin(&fe(&[0.0, 0.0]), &[fe(&[1.0, 0.0]), fe(&[-1.0, 1.0]), fe(&[-1.0, -1.0])]).unwrap();
        assert_eq!(s.delta, 0.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            solve_max_margin(&fe(&[1.0]), &[fe(&[1.0, 2.0])]),
            Err(MarginError::DimensionMismatch { expected: 1, got: 2 })
        );
        assert_eq!(solve_max_margin(&fe(&[1.0]), &[]), Err(MarginError::NoCandidates));
        assert_eq!(
            MarginProblem::new(fe(&[1.0]), vec![fe(&[0.0])], vec![], 1.5),
            Err(MarginError::InvalidK(1.5))
        );
    }

    #[test]
    fn matches_circle_search_in_two_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let mut v = || fe(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let mu_e = v();
            let cands: Vec<_> = (0..3).map(|_| v()).collect();
            let cexs: Vec<_> = (0..2).map(|_| v()).collect();
            let k = rng.gen_range(0.0..1.0);
            let p = MarginProblem::new(mu_e, cands, cexs, k).unwrap();
            let s = solve_weighted_margin(&p).unwrap();
            assert_abs_diff_eq!(s.delta, circle_oracle(&p), epsilon = 1e-5);
        }
    }

    #[test]
    fn matches_hull_distance_in_three_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for round in 0..40 {
            let mut v = || fe(&[rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)]);
            let mu_e = v();
            let cands: Vec<_> = (0..4).map(|_| v()).collect();
            let cexs: Vec<_> = if round % 2 == 0 { Vec::new() } else { vec![v()] };
            let k = if round % 2 == 0 { 1.0 } else { 0.5 };
            let p = MarginProblem::new(mu_e, cands, cexs, k).unwrap();
            let s = solve_weighted_margin(&p).unwrap();
            assert_abs_diff_eq!(s.delta, hull_distance_oracle(&all_vertices(&p)), epsilon = 1e-5);
        }
    }

    #[test]
    fn delta_is_the_inner_min_at_omega() {
        let p = MarginProblem::new(
            fe(&[1.0, 0.2, 0.4, 0.9]),
            vec![fe(&[0.1, 0.5, 0.3, 0.2]), fe(&[0.4, 0.4, 0.1, 0.0])],
            vec![fe(&[0.9, 0.9, 0.9, 0.1])],
            0.4,
        )
        .unwrap();
        let s = solve_weighted_margin(&p).unwrap();
        assert_eq!(s.delta, p.inner_min(s.omega.as_slice()));
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..5.0, dim)
    }

    proptest! {
        #[test]
        fn weights_lie_in_unit_ball(e in arb_vec(4), c in proptest::collection::vec(arb_vec(4), 1..5)) {
            let cands: Vec<_> = c.iter().map(|v| fe(v)).collect();
            let s = solve_max_margin(&fe(&e), &cands).unwrap();
            prop_assert!(s.omega.norm() <= 1.0 + 1e-9);
            prop_assert!(s.delta >= -1e-9);
        }

        #[test]
        fn adding_candidates_never_raises_delta(
            e in arb_vec(3),
            c in proptest::collection::vec(arb_vec(3), 1..4),
            extra in arb_vec(3),
        ) {
            let cands: Vec<_> = c.iter().map(|v| fe(v)).collect();
            let before = solve_max_margin(&fe(&e), &cands).unwrap().delta;
            let mut more = cands.clone();
            more.push(fe(&extra));
            let after = solve_max_margin(&fe(&e), &more).unwrap().delta;
            prop_assert!(after <= before + 1e-9);
        }

        #[test]
        fn scaling_inputs_scales_delta(
            e in arb_vec(3),
            c in proptest::collection::vec(arb_vec(3), 1..4),
            scale in 0.1f64..10.0,
        ) {
            let cands: Vec<_> = c.iter().map(|v| fe(v)).collect();
            let base = solve_max_margin(&fe(&e), &cands).unwrap();
            let scaled_e: Vec<f64> = e.iter().map(|x| x * scale).collect();
            let scaled: Vec<_> = c.iter().map(|v| fe(&v.iter().map(|x| x * scale).collect::<Vec<_>>())).collect();
            let s = solve_max_margin(&fe(&scaled_e), &scaled).unwrap();
            prop_assert!((s.delta - scale * base.delta).abs() <= 1e-7 * scale.max(1.0));
            if base.delta > 1e-3 {
                for (a, b) in s.omega.as_slice().iter().zip(base.omega.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }
}
