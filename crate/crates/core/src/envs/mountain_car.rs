use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, GOAL, UNSAFE};
use crate::mdp::{FeatureMap, Labels, Mdp};
use crate::pctl::StateFormula;

/// Where the continuous start points of each (cell, action) row come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Uniform,
    CellCenter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCarSpec {
    pub n_pos: usize,
    pub n_vel: usize,
    pub pos_range: (f64, f64),
    pub vel_range: (f64, f64),
    /// Unsafe when `position <= .0 && velocity <= .1`.
    pub unsafe_low: (f64, f64),
    /// Unsafe when `position >= .0 && velocity >= .1`.
    pub unsafe_high: (f64, f64),
    /// Cells whose center lies at or past this position are absorbing goals.
    pub goal_position: f64,
    pub initial: (f64, f64),
    /// Step bound of the speed-limit property.
    pub horizon: u32,
    pub sampling: Sampling,
    /// Simulator steps per MDP step, all with the same action.
    pub frame_skip: usize,
    pub gamma: f64,
}

impl Default for MountainCarSpec {
    fn default() -> Self {
        Self {
            n_pos: 40,
            n_vel: 40,
            pos_range: (-1.2, 0.6),
            vel_range: (-0.07, 0.07),
            unsafe_low: (-1.1, -0.04),
            unsafe_high: (0.5, 0.04),
            goal_position: 0.5,
            initial: (-0.5, 0.0),
            horizon: 66,
            sampling: Sampling::Uniform,
            frame_skip: 3,
            gamma: 0.99,
        }
    }
}

const EXPONENTIAL_FEATURES: usize = 2;
const RBF_POSITIONS: usize = 6;
const RBF_VELOCITIES: usize = 3;
const RBF_BANDWIDTH: f64 = 0.15;

impl MountainCarSpec {
    pub fn n_states(&self) -> usize {
        self.n_pos * self.n_vel
    }

    fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Spec(msg));
        if self.n_pos < 2 || self.n_vel < 2 {
            return bad(format!("resolution {}×{} below 2 per axis", self.n_pos, self.n_vel));
        }
        let (p0, p1) = self.pos_range;
        let (v0, v1) = self.vel_range;
        if self.frame_skip == 0 {
            return bad("frame_skip must be at least 1".into());
        }
        if !(p0 < p1) || !(v0 < v1) {
            return bad("empty position or velocity range".into());
        }
        let inside = |(p, v): (f64, f64)| p0 <= p && p <= p1 && v0 <= v && v <= v1;
        if !inside(self.unsafe_low) || !inside(self.unsafe_high) || !inside(self.initial) {
            return bad("thresholds and initial point must lie inside the ranges".into());
        }
        Ok(())
    }

    fn bin(value: f64, (lo, hi): (f64, f64), n: usize) -> usize {
        let i = ((value - lo) / (hi - lo) * n as f64).floor();
        (i.max(0.0) as usize).min(n - 1)
    }

    /// State of the cell containing `(position, velocity)`.
    pub fn state_of(&self, position: f64, velocity: f64) -> usize {
        Self::bin(position, self.pos_range, self.n_pos) * self.n_vel + Self::bin(velocity, self.vel_range, self.n_vel)
    }

    fn cell_bounds(&self, state: usize) -> ((f64, f64), (f64, f64)) {
        let (ip, iv) = (state / self.n_vel, state % self.n_vel);
        let (p0, p1) = self.pos_range;
        let (v0, v1) = self.vel_range;
        let dp = (p1 - p0) / self.n_pos as f64;
        let dv = (v1 - v0) / self.n_vel as f64;
        let p = p0 + ip as f64 * dp;
        let v = v0 + iv as f64 * dv;
        ((p, p + dp), (v, v + dv))
    }

    pub fn cell_center(&self, state: usize) -> (f64, f64) {
        let ((p0, p1), (v0, v1)) = self.cell_bounds(state);
        ((p0 + p1) / 2.0, (v0 + v1) / 2.0)
    }

    pub fn is_unsafe(&self, position: f64, velocity: f64) -> bool {
        (position <= self.unsafe_low.0 && velocity <= self.unsafe_low.1)
            || (position >= self.unsafe_high.0 && velocity >= self.unsafe_high.1)
    }

    /// One step of the standard dynamics with action 0 (push left),
    /// 1 (coast) or 2 (push right).
    pub fn step(&self, position: f64, velocity: f64, action: usize) -> (f64, f64) {
        let (p0, p1) = self.pos_range;
        let (v0, v1) = self.vel_range;
        let mut v = velocity + 0.001 * (action as f64 - 1.0) - 0.0025 * (3.0 * position).cos();
        v = v.clamp(v0, v1);
        let p = (position + v).clamp(p0, p1);
        if p == p0 && v < 0.0 {
            v = 0.0;
        }
        (p, v)
    }

    /// `frame_skip` applications of [`MountainCarSpec::step`], stopping
    /// early once the goal position is reached.
    pub fn advance(&self, mut position: f64, mut velocity: f64, action: usize) -> (f64, f64) {
        for _ in 0..self.frame_skip {
            (position, velocity) = self.step(position, velocity, action);
            if position >= self.goal_position {
                break;
            }
        }
        (position, velocity)
    }

    /// `P<=threshold [ true U<=horizon "unsafe" ]`.
    pub fn safety_formula(&self, threshold: f64) -> StateFormula {
        StateFormula::bounded_reach(threshold, UNSAFE, self.horizon)
    }

    /// Reward 1 on goal cells, 0 elsewhere.
    pub fn goal_reward(&self) -> Vec<f64> {
        (0..self.n_states())
            .map(|s| if self.cell_center(s).0 >= self.goal_position { 1.0 } else { 0.0 })
            .collect()
    }

    /// Two exponential features of normalized position and speed, then RBFs
    /// on a 6×3 lattice over the normalized (position, velocity) square.
    pub fn features(&self) -> Result<FeatureMap, EnvError> {
        let (p0, p1) = self.pos_range;
        let (v0, v1) = self.vel_range;
        let vmax = v0.abs().max(v1.abs());
        let rows = (0..self.n_states())
            .map(|s| {
                let (p, v) = self.cell_center(s);
                let pn = (p - p0) / (p1 - p0);
                let vn = (v - v0) / (v1 - v0);
                let mut row = Vec::with_capacity(EXPONENTIAL_FEATURES + RBF_POSITIONS * RBF_VELOCITIES);
                row.push((pn - 1.0).exp());
                row.push((v.abs() / vmax - 1.0).exp());
                for i in 0..RBF_POSITIONS {
                    for j in 0..RBF_VELOCITIES {
                        let cp = i as f64 / (RBF_POSITIONS - 1) as f64;
                        let cv = j as f64 / (RBF_VELOCITIES - 1) as f64;
                        let d2 = (pn - cp).powi(2) + (vn - cv).powi(2);
                        row.push((-d2 / (2.0 * RBF_BANDWIDTH * RBF_BANDWIDTH)).exp());
                    }
                }
                row
            })
            .collect();
        Ok(FeatureMap::new(rows)?)
    }
}

/// Discretized mountain car whose transition rows are empirical successor
/// distributions of `samples_per_cell` points per (cell, action).
///
/// Every cell draws from its own random stream, so the model does not
/// depend on the order cells are processed in.
pub fn build_mountain_car(
    spec: &MountainCarSpec,
    samples_per_cell: usize,
    seed: u64,
) -> Result<(Mdp, FeatureMap), EnvError> {
    spec.validate()?;
    if samples_per_cell == 0 {
        return Err(EnvError::Spec("samples_per_cell must be positive".into()));
    }
    let n = spec.n_states();
    let goal: Vec<bool> = (0..n).map(|s| spec.cell_center(s).0 >= spec.goal_position).collect();
    let mut rows = Vec::with_capacity(n * 3);
    for s in 0..n {
        if goal[s] {
            rows.extend((0..3).map(|_| vec![(s, 1.0)]));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let ((p0, p1), (v0, v1)) = spec.cell_bounds(s);
        for action in 0..3 {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for _ in 0..samples_per_cell {
                let (p, v) = match spec.sampling {
                    Sampling::Uniform => (rng.gen_range(p0..p1), rng.gen_range(v0..v1)),
                    Sampling::CellCenter => spec.cell_center(s),
                };
                let (p, v) = spec.advance(p, v, action);
                *counts.entry(spec.state_of(p, v)).or_default() += 1;
            }
            rows.push(
                counts
                    .into_iter()
                    .map(|(t, c)| (t, c as f64 / samples_per_cell as f64))
                    .collect(),
            );
        }
    }
    let mut labels = Labels::new();
    labels.insert(
        UNSAFE.to_string(),
        (0..n)
            .filter(|&s| {
                let (p, v) = spec.cell_center(s);
                spec.is_unsafe(p, v)
            })
            .collect(),
    );
    labels.insert(GOAL.to_string(), (0..n).filter(|&s| goal[s]).collect());
    let initial = spec.state_of(spec.initial.0, spec.initial.1);
    let mdp = Mdp::new(n, 3, spec.gamma, initial, rows, labels)?;
    Ok((mdp, spec.features()?))
}
