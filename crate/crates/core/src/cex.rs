//! Counterexamples for upper-bounded until properties.
//!
//! A counterexample for `P<=p [ φ1 U<=t φ2 ]` is a set of minimally
//! satisfying paths (only the last state satisfies `φ2`, every earlier state
//! satisfies `φ1`, at most `t` transitions) whose probabilities sum past `p`.
//! Paths are produced most-probable first by a k-shortest-paths search over a
//! graph whose edge weights are `−ln T(s, s')`; taking them greedily until
//! the mass is exceeded yields a counterexample of minimum cardinality.
//!
//! For bounded until the graph is expanded into `(state, step)` layers so
//! that every source-to-sink path respects the hop bound.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use thiserror::Error;

use crate::mdp::{axpy, Dtmc, FeatureExpectation, FeatureMap, Trajectory};
use crate::pctl::{satisfaction_set, until_operands, until_probabilities, CheckError, StateFormula, UntilQuery};

pub const DEFAULT_MAX_PATHS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CexError {
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("formula holds (probability {probability}); no counterexample exists")]
    FormulaSatisfied { probability: f64 },
    #[error("path budget exhausted after {} paths with mass {}", partial.paths.len(), partial.total_probability)]
    BudgetExhausted { partial: Counterexample },
    #[error("counterexamples are only defined for upper-bounded probability operators")]
    LowerBound,
    #[error("counterexample has no paths")]
    EmptyCounterexample,
}

/// What a returned path set certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evidence {
    /// Mass exceeds the formula's own threshold.
    Counterexample,
    /// Mass exceeds a smaller enumeration threshold only.
    SubThreshold,
    /// Path budget or path supply ran out first.
    Partial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// Paths in non-increasing probability order, each with `probability` set.
    pub paths: Vec<Trajectory>,
    pub total_probability: f64,
    pub formula: StateFormula,
    /// Threshold the enumeration had to exceed.
    pub target: f64,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    pub state: usize,
    /// Number of transitions taken; `None` in the unexpanded (unbounded) graph.
    pub step: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEdge {
    pub target: usize,
    pub probability: f64,
    /// `−ln probability`.
    pub weight: f64,
}

/// Weighted digraph whose source-to-sink paths are exactly the minimally
/// satisfying paths of an until formula.
#[derive(Debug, Clone)]
pub struct PathGraph {
    nodes: Vec<PathNode>,
    edges: Vec<Vec<PathEdge>>,
    source: Option<usize>,
}

impl PathGraph {
    /// Index of the virtual sink collecting all `φ2` nodes.
    pub fn sink(&self) -> usize {
        self.nodes.len()
    }

    pub fn source(&self) -> Option<usize> {
        self.source
    }

    pub fn nodes(&self) -> &[PathNode] {
        &self.nodes
    }

    /// Outgoing edges of `node`; the sink has none.
    pub fn edges(&self, node: usize) -> &[PathEdge] {
        self.edges.get(node).map_or(&[], Vec::as_slice)
    }

    /// Weight of the first edge found between nodes carrying the given states.
    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (n.state == from)
                .then(|| {
                    self.edges[i]
                        .iter()
                        .find(|e| e.target != self.sink() && self.nodes[e.target].state == to)
                        .map(|e| e.weight)
                })
                .flatten()
        })
    }

    /// Lazily enumerates source-to-sink paths, most probable first.
    pub fn paths(&self) -> PathEnumerator<'_> {
        PathEnumerator {
            search: Rea::new(self),
            produced: 0,
        }
    }

    /// Most probable satisfying path and its total weight `−ln P(τ)`.
    pub fn shortest_path(&self) -> Option<(f64, Trajectory)> {
        self.paths().next().map(|tau| {
            let weight = -tau.probability.unwrap_or(0.0).ln();
            (weight, tau)
        })
    }
}

/// Builds the path graph of `φ1 U(<=t) φ2`.
///
/// Edges leaving `φ2` states are dropped, states satisfying neither operand
/// are excluded, and every `φ2` node gets a zero-weight edge to the sink.
/// Nodes that cannot reach the sink are pruned.
pub fn build_path_graph(dtmc: &Dtmc, phi1: &[bool], phi2: &[bool], bound: Option<u32>) -> PathGraph {
    let n = dtmc.n_states();
    let s0 = dtmc.initial_state();
    if !phi1[s0] && !phi2[s0] {
        return PathGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            source: None,
        };
    }
    let layers = bound.map_or(1, |t| t as usize + 1);
    let key = |state: usize, step: u32| -> usize {
        if bound.is_some() {
            step as usize * n + state
        } else {
            state
        }
    };
    let mut index = vec![usize::MAX; n * layers];
    let mut nodes = Vec::new();
    // successor lists use usize::MAX for the sink until it is known
    let mut succ: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut queue = VecDeque::new();

    let start = PathNode {
        state: s0,
        step: bound.map(|_| 0),
    };
    index[key(s0, 0)] = 0;
    nodes.push(start);
    succ.push(Vec::new());
    queue.push_back(0);
    while let Some(i) = queue.pop_front() {
        let PathNode { state, step } = nodes[i];
        if phi2[state] {
            succ[i].push((usize::MAX, 1.0));
            continue;
        }
        let next_step = match (step, bound) {
            (Some(j), Some(t)) if j >= t => continue,
            (Some(j), _) => j + 1,
            (None, _) => 0,
        };
        for &(target, p) in dtmc.row(state) {
            if !phi1[target] && !phi2[target] {
                continue;
            }
            let k = key(target, next_step);
            if index[k] == usize::MAX {
                index[k] = nodes.len();
                nodes.push(PathNode {
                    state: target,
                    step: step.map(|_| next_step),
                });
                succ.push(Vec::new());
                queue.push_back(index[k]);
            }
            succ[i].push((index[k], p));
        }
    }

    // prune nodes that cannot reach the sink
    let mut preds = vec![Vec::new(); nodes.len()];
    let mut alive = vec![false; nodes.len()];
    let mut stack = Vec::new();
    for (i, out) in succ.iter().enumerate() {
        for &(t, _) in out {
            if t == usize::MAX {
                alive[i] = true;
                stack.push(i);
            } else {
                preds[t].push(i);
            }
        }
    }
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !alive[s] {
                alive[s] = true;
                stack.push(s);
            }
        }
    }
    if !alive[0] {
        return PathGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            source: None,
        };
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut kept = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        if alive[i] {
            remap[i] = kept.len();
            kept.push(*node);
        }
    }
    let sink = kept.len();
    let edges = succ
        .iter()
        .enumerate()
        .filter(|(i, _)| alive[*i])
        .map(|(_, out)| {
            out.iter()
                .filter(|(t, _)| *t == usize::MAX || alive[*t])
                .map(|&(t, p)| PathEdge {
                    target: if t == usize::MAX { sink } else { remap[t] },
                    probability: p,
                    weight: -p.ln(),
                })
                .collect()
        })
        .collect();
    PathGraph {
        nodes: kept,
        edges,
        source: Some(0),
    }
}

#[derive(Debug, Clone, Copy)]
struct Found {
    probability: f64,
    /// Predecessor node, index of its path, and the connecting edge probability.
    pred: Option<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    probability: f64,
    pred: usize,
    index: usize,
    edge: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap on probability; ties prefer lower (pred, index)
    fn cmp(&self, other: &Self) -> Ordering {
        self.probability
            .total_cmp(&other.probability)
            .then_with(|| other.pred.cmp(&self.pred))
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Recursive enumeration of k most probable paths (Jiménez–Marzal REA).
struct Rea<'g> {
    graph: &'g PathGraph,
    preds: Vec<Vec<(usize, f64)>>,
    found: Vec<Vec<Found>>,
    heaps: Vec<BinaryHeap<Candidate>>,
    initialized: Vec<bool>,
    exhausted: Vec<bool>,
}

impl<'g> Rea<'g> {
    fn new(graph: &'g PathGraph) -> Self {
        let size = graph.nodes.len() + 1;
        let mut preds = vec![Vec::new(); size];
        for (u, out) in graph.edges.iter().enumerate() {
            for e in out {
                preds[e.target].push((u, e.probability));
            }
        }
        let mut rea = Self {
            graph,
            preds,
            found: vec![Vec::new(); size],
            heaps: vec![BinaryHeap::new(); size],
            initialized: vec![false; size],
            exhausted: vec![false; size],
        };
        rea.most_probable_tree();
        rea
    }

    /// Dijkstra on `−ln p`, run as a max-product search.
    fn most_probable_tree(&mut self) {
        let Some(source) = self.graph.source else { return };
        let size = self.found.len();
        let mut best = vec![0.0f64; size];
        let mut pred: Vec<Option<(usize, usize, f64)>> = vec![None; size];
        let mut done = vec![false; size];
        let mut heap = BinaryHeap::new();
        best[source] = 1.0;
        heap.push(Candidate {
            probability: 1.0,
            pred: source,
            index: 0,
            edge: 1.0,
        });
        while let Some(Candidate { probability, pred: u, .. }) = heap.pop() {
            if done[u] || probability < best[u] {
                continue;
            }
            done[u] = true;
            for e in self.graph.edges(u) {
                let p = probability * e.probability;
                if !done[e.target] && p > best[e.target] {
                    best[e.target] = p;
                    pred[e.target] = Some((u, 0, e.probability));
                    heap.push(Candidate {
                        probability: p,
                        pred: e.target,
                        index: 0,
                        edge: 1.0,
                    });
                }
            }
        }
        for v in 0..size {
            if done[v] {
                self.found[v].push(Found {
                    probability: best[v],
                    pred: pred[v],
                });
            }
        }
    }

    /// Computes the next path to `v` given all better ones. Returns false
    /// when no further path exists.
    fn next_path(&mut self, v: usize) -> bool {
        if self.exhausted[v] || self.found[v].is_empty() {
            return false;
        }
        if !self.initialized[v] {
            self.initialized[v] = true;
            let first = self.found[v][0].pred.map(|(u, _, _)| u);
            for i in 0..self.preds[v].len() {
                let (u, p) = self.preds[v][i];
                if Some(u) == first {
                    continue;
                }
                if let Some(f) = self.found[u].first() {
                    self.heaps[v].push(Candidate {
                        probability: f.probability * p,
                        pred: u,
                        index: 0,
                        edge: p,
                    });
                }
            }
        }
        let last = *self.found[v].last().expect("nonempty");
        if let Some((u, j, p)) = last.pred {
            if self.found[u].len() == j + 1 {
                self.next_path(u);
            }
            if let Some(f) = self.found[u].get(j + 1) {
                self.heaps[v].push(Candidate {
                    probability: f.probability * p,
                    pred: u,
                    index: j + 1,
                    edge: p,
                });
            }
        }
        match self.heaps[v].pop() {
            Some(c) => {
                self.found[v].push(Found {
                    probability: c.probability,
                    pred: Some((c.pred, c.index, c.edge)),
                });
                true
            }
            None => {
                self.exhausted[v] = true;
                false
            }
        }
    }

    fn states_of(&self, mut node: usize, mut index: usize) -> Vec<usize> {
        let sink = self.graph.sink();
        let mut states = Vec::new();
        loop {
            if node != sink {
                states.push(self.graph.nodes[node].state);
            }
            match self.found[node][index].pred {
                Some((u, j, _)) => {
                    node = u;
                    index = j;
                }
                None => break,
            }
        }
        states.reverse();
        states
    }
}

/// Iterator over satisfying paths in non-increasing probability order.
pub struct PathEnumerator<'g> {
    search: Rea<'g>,
    produced: usize,
}

impl Iterator for PathEnumerator<'_> {
    type Item = Trajectory;

    fn next(&mut self) -> Option<Trajectory> {
        let sink = self.search.graph.sink();
        if self.produced > 0 && self.search.found[sink].len() <= self.produced && !self.search.next_path(sink) {
            return None;
        }
        let found = self.search.found[sink].get(self.produced)?;
        let probability = found.probability;
        let states = self.search.states_of(sink, self.produced);
        self.produced += 1;
        Some(Trajectory::with_probability(states, probability))
    }
}

fn upper_bound_query(formula: &StateFormula) -> Result<UntilQuery, CexError> {
    let query = until_operands(formula)?;
    if !query.comparison.is_upper_bound() {
        return Err(CexError::LowerBound);
    }
    Ok(query)
}

/// Smallest set of most probable violating paths whose mass exceeds the
/// formula's threshold.
pub fn enumerate_counterexample(
    dtmc: &Dtmc,
    formula: &StateFormula,
    max_paths: usize,
) -> Result<Counterexample, CexError> {
    let threshold = upper_bound_query(formula)?.threshold;
    enumerate_with_threshold(dtmc, formula, max_paths, threshold)
}

/// Like [`enumerate_counterexample`] but stops once the mass exceeds
/// `target`, which may be smaller than the formula's threshold. Such sets
/// are marked [`Evidence::SubThreshold`].
pub fn enumerate_with_threshold(
    dtmc: &Dtmc,
    formula: &StateFormula,
    max_paths: usize,
    target: f64,
) -> Result<Counterexample, CexError> {
    let query = upper_bound_query(formula)?;
    let probability = until_probabilities(dtmc, &query)?[dtmc.initial_state()];
    if !query.violated_by(probability) {
        return Err(CexError::FormulaSatisfied { probability });
    }
    let target = target.min(query.threshold);
    let enough = |mass: f64| !query.comparison.holds(mass, target);

    let phi1 = satisfaction_set(dtmc, &query.left)?;
    let phi2 = satisfaction_set(dtmc, &query.right)?;
    let graph = build_path_graph(dtmc, &phi1, &phi2, query.bound);
    let mut paths = Vec::new();
    let mut mass = 0.0;
    for tau in graph.paths().take(max_paths) {
        mass += tau.probability.unwrap_or(0.0);
        paths.push(tau);
        if enough(mass) {
            break;
        }
    }
    // ties are reported in lexicographic state order
    paths.sort_by(|a, b| {
        b.probability
            .unwrap_or(0.0)
            .total_cmp(&a.probability.unwrap_or(0.0))
            .then_with(|| a.states.cmp(&b.states))
    });
    let complete = enough(mass);
    let evidence = match (complete, target < query.threshold) {
        (false, _) => Evidence::Partial,
        (true, true) => Evidence::SubThreshold,
        (true, false) => Evidence::Counterexample,
    };
    let cex = Counterexample {
        paths,
        total_probability: mass,
        formula: formula.clone(),
        target,
        evidence,
    };
    if complete {
        Ok(cex)
    } else {
        Err(CexError::BudgetExhausted { partial: cex })
    }
}

/// Probability-weighted mean of the paths' discounted feature sums,
/// normalized by the total mass of the set.
pub fn counterexample_features(
    cex: &Counterexample,
    features: &FeatureMap,
    gamma: f64,
) -> Result<FeatureExpectation, CexError> {
    let total: f64 = cex.paths.iter().map(|p| p.probability.unwrap_or(0.0)).sum();
    if cex.paths.is_empty() || total <= 0.0 {
        return Err(CexError::EmptyCounterexample);
    }
    let mut mu = vec![0.0; features.dim()];
    for tau in &cex.paths {
        let weight = tau.probability.unwrap_or(0.0) / total;
        axpy(&mut mu, weight, &tau.discounted_features(features, gamma));
    }
    Ok(FeatureExpectation::new(mu))
}
