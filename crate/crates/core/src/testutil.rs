use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Dtmc, Labels, Mdp, SparseRow};

fn random_row(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SparseRow {
    let weights: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(density) { rng.gen::<f64>() + 0.01 } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return vec![(rng.gen_range(0..n), 1.0)];
    }
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, w)| (t, w / total))
        .collect()
}

pub(crate) fn random_mdp(rng: &mut ChaCha8Rng, n: usize, m: usize, gamma: f64) -> Mdp {
    let rows = (0..n * m).map(|_| random_row(rng, n, 0.6)).collect();
    Mdp::new(n, m, gamma, 0, rows, Labels::new()).unwrap()
}

/// Random chain with labels `a` and `b` drawn independently per state.
pub(crate) fn random_dtmc(rng: &mut ChaCha8Rng, n: usize) -> Dtmc {
    let rows = (0..n).map(|_| random_row(rng, n, 0.5)).collect();
    let mut labels = Labels::new();
    labels.insert("a".into(), (0..n).filter(|_| rng.gen_bool(0.7)).collect());
    labels.insert("b".into(), (0..n).filter(|_| rng.gen_bool(0.3)).collect());
    Dtmc::new(rows, rng.gen_range(0..n), labels).unwrap()
}
