use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, GOAL, UNSAFE};
use crate::mdp::{FeatureMap, Labels, Mdp};

/// Grid coordinates `(x, y)`, with `y` growing downwards.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right];

    fn offset(self) -> (isize, isize) {
        match self {
            Action::Stay => (0, 0),
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    /// Absorbing cells labelled `goal`.
    pub goals: Vec<Cell>,
    pub unsafe_cells: Vec<Cell>,
    /// Probability mass spread uniformly over all five actions.
    pub noise: f64,
    pub rbf_centers: Vec<Cell>,
    pub rbf_bandwidth: f64,
    /// Ground-truth reward per state, used only to build experts.
    pub reward: Vec<f64>,
    pub gamma: f64,
}

/// 8×8 layout behind [`GridWorldSpec::preset`]: `S` start, `G` goal,
/// `U` unsafe, `L` low reward.
const PRESET: [&str; 8] = [
    "S.......",
    ".L......",
    "........",
    "..L.....",
    "U.......",
    "U..UUU..",
    "U......G",
    ".......G",
];

/// One feature per goal cell and per low-reward cell.
const PRESET_CENTERS: [Cell; 4] = [(7, 6), (7, 7), (1, 1), (2, 3)];

impl GridWorldSpec {
    /// Navigation task with two goal cells in the lower right, low-reward
    /// cells and unsafe bands between them and the start in the upper
    /// left. Sizes other than 8 rescale the 8×8 layout.
    pub fn preset(size: usize) -> Self {
        let size = size.max(1);
        let template = |x: usize, y: usize| PRESET[y * 8 / size].as_bytes()[x * 8 / size];
        let mut goals = Vec::new();
        let mut unsafe_cells = Vec::new();
        let mut reward = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                match template(x, y) {
                    b'G' => {
                        goals.push((x, y));
                        reward[y * size + x] = 1.0;
                    }
                    b'U' => unsafe_cells.push((x, y)),
                    b'L' => reward[y * size + x] = -1.0,
                    _ => {}
                }
            }
        }
        let scale = |c: usize| ((c * 2 + 1) * size / 16).min(size - 1);
        Self {
            width: size,
            height: size,
            start: (0, 0),
            goals,
            unsafe_cells,
            noise: 0.2,
            rbf_centers: PRESET_CENTERS.iter().map(|&(x, y)| (scale(x), scale(y))).collect(),
            rbf_bandwidth: size as f64 / 4.0,
            reward,
            gamma: 0.99,
        }
    }

    /// Randomized variant of [`GridWorldSpec::preset`]: goals in the
    /// bottom-right corner, two or three short unsafe bands and two
    /// low-reward cells, all kept at least `size / 2` steps (Manhattan)
    /// from the start so a safe policy exists. Features are centered on
    /// the goal and low-reward cells.
    pub fn random(size: usize, seed: u64) -> Self {
        let size = size.max(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goals = vec![(size - 1, size - 2), (size - 1, size - 1)];
        let clear = |x: usize, y: usize| x + y >= size / 2 && !(x + 2 >= size && y + 3 >= size);
        let mut unsafe_cells = Vec::new();
        for _ in 0..rng.gen_range(2..=3) {
            let horizontal = rng.gen_bool(0.5);
            let len = rng.gen_range(2..=size / 2);
            let (x0, y0) = (rng.gen_range(0..size), rng.gen_range(0..size));
            for i in 0..len {
                let (x, y) = if horizontal { (x0 + i, y0) } else { (x0, y0 + i) };
                if x < size && y < size && clear(x, y) && !unsafe_cells.contains(&(x, y)) {
                    unsafe_cells.push((x, y));
                }
            }
        }
        let mut lows = Vec::new();
        while lows.len() < 2 {
            let c = (rng.gen_range(0..size), rng.gen_range(0..size));
            if c.0 + c.1 > 1 && !goals.contains(&c) && !unsafe_cells.contains(&c) && !lows.contains(&c) {
                lows.push(c);
            }
        }
        let mut reward = vec![0.0; size * size];
        for &(x, y) in &goals {
            reward[y * size + x] = 1.0;
        }
        for &(x, y) in &lows {
            reward[y * size + x] = -1.0;
        }
        Self {
            width: size,
            height: size,
            start: (0, 0),
            rbf_centers: goals.iter().chain(&lows).copied().collect(),
            goals,
            unsafe_cells,
            noise: 0.2,
            rbf_bandwidth: size as f64 / 4.0,
            reward,
            gamma: 0.99,
        }
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, state: usize) -> Cell {
        (state % self.width, state / self.width)
    }

    fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Spec(msg));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be at least 1×1".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1)", self.noise));
        }
        if !(self.rbf_bandwidth > 0.0) {
            return bad(format!("bandwidth {} must be positive", self.rbf_bandwidth));
        }
        if self.reward.len() != self.n_states() {
            return bad(format!("reward has {} entries for {} cells", self.reward.len(), self.n_states()));
        }
        let cells = std::iter::once(&self.start)
            .chain(&self.goals)
            .chain(&self.unsafe_cells)
            .chain(&self.rbf_centers);
        for &(x, y) in cells {
            if x >= self.width || y >= self.height {
                return bad(format!("cell ({x}, {y}) outside {}×{} grid", self.width, self.height));
            }
        }
        Ok(())
    }

    fn target(&self, (x, y): Cell, action: Action) -> usize {
        let (dx, dy) = action.offset();
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            self.index((x, y))
        } else {
            self.index((nx as usize, ny as usize))
        }
    }

    /// RBF features `exp(−‖s − c‖² / (2·bandwidth²))` per center.
    pub fn features(&self) -> Result<FeatureMap, EnvError> {
        let two_bw2 = 2.0 * self.rbf_bandwidth * self.rbf_bandwidth;
        let rows = (0..self.n_states())
            .map(|s| {
                let (x, y) = self.cell(s);
                self.rbf_centers
                    .iter()
                    .map(|&(cx, cy)| {
                        let dx = x as f64 - cx as f64;
                        let dy = y as f64 - cy as f64;
                        (-(dx * dx + dy * dy) / two_bw2).exp()
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureMap::new(rows)?)
    }

    pub fn build(&self) -> Result<(Mdp, FeatureMap), EnvError> {
        build_gridworld(self)
    }
}

pub fn build_gridworld(spec: &GridWorldSpec) -> Result<(Mdp, FeatureMap), EnvError> {
    spec.validate()?;
    let n = spec.n_states();
    let mut goal = vec![false; n];
    for &c in &spec.goals {
        goal[spec.index(c)] = true;
    }
    let residual = spec.noise / Action::ALL.len() as f64;
    let mut rows = Vec::with_capacity(n * Action::ALL.len());
    for s in 0..n {
        let cell = spec.cell(s);
        for chosen in Action::ALL {
            if goal[s] {
                rows.push(vec![(s, 1.0)]);
                continue;
            }
            let mut row: Vec<(usize, f64)> = Vec::new();
            for executed in Action::ALL {
                let p = if executed == chosen { 1.0 - spec.noise + residual } else { residual };
                if p > 0.0 {
                    row.push((spec.target(cell, executed), p));
                }
            }
            rows.push(row);
        }
    }
    let mut labels = Labels::new();
    labels.insert(UNSAFE.to_string(), spec.unsafe_cells.iter().map(|&c| spec.index(c)).collect());
    labels.insert(GOAL.to_string(), spec.goals.iter().map(|&c| spec.index(c)).collect());
    let mdp = Mdp::new(n, Action::ALL.len(), spec.gamma, spec.index(spec.start), rows, labels)?;
    Ok((mdp, spec.features()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eight_by_eight_has_64_states() {
        let (mdp, features) = GridWorldSpec::preset(8).build().unwrap();
        assert_eq!(mdp.n_states(), 64);
        assert_eq!(mdp.n_actions(), 5);
        assert_eq!(features.n_states(), 64);
    }

    #[test]
    fn single_cell_grid_self_loops() {
        let spec = GridWorldSpec {
            width: 1,
            height: 1,
            start: (0, 0),
            goals: Vec::new(),
            unsafe_cells: Vec::new(),
            noise: 0.2,
            rbf_centers: vec![(0, 0)],
            rbf_bandwidth: 1.0,
            reward: vec![0.0],
            gamma: 0.9,
        };
        let (mdp, _) = spec.build().unwrap();
        for a in 0..5 {
            assert_abs_diff_eq!(mdp.probability(0, a, 0), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn corner_stay_keeps_off_grid_mass() {
        let (mdp, _) = GridWorldSpec::preset(8).build().unwrap();
        // upper-left corner: up and left bounce back
        assert_abs_diff_eq!(mdp.probability(0, Action::Stay as usize, 0), 0.92, epsilon = 1e-12);
        assert_abs_diff_eq!(mdp.probability(0, Action::Stay as usize, 1), 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(mdp.probability(0, Action::Right as usize, 1), 0.84, epsilon = 1e-12);
    }

    #[test]
    fn goals_are_absorbing_and_labelled() {
        let spec = GridWorldSpec::preset(8);
        let (mdp, _) = spec.build().unwrap();
        let g = spec.index((7, 7));
        assert!(mdp.labels()[GOAL].contains(&g));
        for a in 0..5 {
            assert_eq!(mdp.row(g, a), &[(g, 1.0)]);
        }
        assert!(!mdp.labels()[UNSAFE].is_empty());
    }

    #[test]
    fn features_peak_at_their_centers() {
        let spec = GridWorldSpec::preset(8);
        let features = spec.features().unwrap();
        for (i, &c) in spec.rbf_centers.iter().enumerate() {
            assert_eq!(features.get(spec.index(c))[i], 1.0);
        }
        for s in 0..spec.n_states() {
            assert!(features.get(s).iter().all(|&f| f > 0.0 && f <= 1.0));
        }
    }

    #[test]
    fn preset_scales() {
        for size in [8, 16, 32] {
            let spec = GridWorldSpec::preset(size);
            let (mdp, _) = spec.build().unwrap();
            assert_eq!(mdp.n_states(), size * size);
            assert_eq!(spec.goals.len(), 2 * (size / 8) * (size / 8));
        }
    }

    #[test]
    fn random_layouts_are_reproducible_and_keep_the_start_clear() {
        for seed in 0..50 {
            let spec = GridWorldSpec::random(8, seed);
            assert_eq!(spec, GridWorldSpec::random(8, seed));
            assert!(spec.build().is_ok());
            assert!(!spec.unsafe_cells.is_empty());
            assert!(spec.unsafe_cells.iter().all(|&(x, y)| x + y >= 4));
            assert!(spec.unsafe_cells.iter().all(|c| !spec.goals.contains(c)));
        }
        assert_ne!(GridWorldSpec::random(8, 0), GridWorldSpec::random(8, 1));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = GridWorldSpec::preset(8);
        let noisy = GridWorldSpec { noise: 1.0, ..base.clone() };
        assert!(matches!(noisy.build(), Err(EnvError::Spec(_))));
        let outside = GridWorldSpec {
            goals: vec![(8, 0)],
            ..base.clone()
        };
        assert!(matches!(outside.build(), Err(EnvError::Spec(_))));
        let short = GridWorldSpec {
            reward: vec![0.0],
            ..base
        };
        assert!(matches!(short.build(), Err(EnvError::Spec(_))));
    }
}
