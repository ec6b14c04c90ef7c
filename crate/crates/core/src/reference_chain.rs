//! The reference state–action chain and the episodic embedding.
//!
//! The reference chain on `S x A` has kernel
//! `K((s,a),(t,b)) = M^{(a)}_{s,t} pi(b|t)`; its stationary distribution is
//! the occupation measure `p_s^{(a)}` that normalises `Lambda_bar`.

use std::collections::VecDeque;

use crate::cmc::{EpisodicDataset, Policy, StateActionSpace, Transition, TransitionKernel, ROW_SUM_TOL};
use crate::counting::CountStatistics;
use crate::error::{Error, Result};

/// Residual target for [`stationary_distribution`].
pub const STATIONARY_TOL: f64 = 1e-12;
pub const STATIONARY_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceChain {
    space: StateActionSpace,
    matrix: Vec<f64>,
}

impl ReferenceChain {
    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.pairs()
    }

    /// Entry `K((s,a),(t,b))`.
    pub fn entry(&self, (s, a): (usize, usize), (t, b): (usize, usize)) -> f64 {
        self.matrix[self.space.pair_index(s, a) * self.dim() + self.space.pair_index(t, b)]
    }

    /// Row-major `SA x SA` matrix in pair order.
    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }
}

pub fn build_reference_chain(kernel: &TransitionKernel, policy: &Policy) -> Result<ReferenceChain> {
    let space = kernel.space();
    if policy.space() != space {
        return Err(Error::Shape("kernel and policy spaces differ".into()));
    }
    let dim = space.pairs();
    let mut matrix = vec![0.0; dim * dim];
    for from in 0..dim {
        let (s, a) = space.pair_of(from);
        for t in 0..space.states {
            let m = kernel.prob(s, a, t);
            for b in 0..space.actions {
                matrix[from * dim + space.pair_index(t, b)] = m * policy.prob(t, b);
            }
        }
    }
    Ok(ReferenceChain { space, matrix })
}

fn reachable(dim: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    let mut level = vec![None; dim];
    let mut queue = VecDeque::from([0]);
    level[0] = Some(0);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for v in 0..dim {
            if level[v].is_none() && edge(u, v) {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Checks irreducibility (strong connectivity of the positive-entry graph)
/// and returns the period.
pub fn period(matrix: &[f64], dim: usize) -> Result<usize> {
    let forward = reachable(dim, |u, v| matrix[u * dim + v] > 0.0);
    let backward = reachable(dim, |u, v| matrix[v * dim + u] > 0.0);
    if forward.iter().chain(&backward).any(Option::is_none) {
        return Err(Error::Reducible);
    }
    let mut d = 0;
    for u in 0..dim {
        for v in 0..dim {
            if matrix[u * dim + v] > 0.0 {
                let (lu, lv) = (forward[u].unwrap(), forward[v].unwrap());
                d = gcd(d, (lu + 1).abs_diff(lv));
            }
        }
    }
    Ok(d)
}

/// Stationary distribution of a row-stochastic `dim x dim` matrix by power
/// iteration, stopped when `max |pK - p| <= STATIONARY_TOL`.
pub fn stationary_of(matrix: &[f64], dim: usize) -> Result<Vec<f64>> {
    if matrix.len() != dim * dim || dim == 0 {
        return Err(Error::Shape(format!("expected a {dim}x{dim} matrix")));
    }
    for (i, row) in matrix.chunks(dim).enumerate() {
        let residual = row.iter().sum::<f64>() - 1.0;
        if residual.abs() > ROW_SUM_TOL || row.iter().any(|&x| x < 0.0) {
            return Err(Error::RowSum { s: i, a: 0, residual });
        }
    }
    match period(matrix, dim)? {
        1 => {}
        d => return Err(Error::Periodic(d)),
    }
    let mut p = vec![1.0 / dim as f64; dim];
    let mut next = vec![0.0; dim];
    for _ in 0..STATIONARY_MAX_ITER {
        next.fill(0.0);
        for (u, &pu) in p.iter().enumerate() {
            if pu != 0.0 {
                for (v, &k) in matrix[u * dim..(u + 1) * dim].iter().enumerate() {
                    next[v] += pu * k;
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let residual = next.iter().zip(&p).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut p, &mut next);
        if residual <= STATIONARY_TOL {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence { max_iter: STATIONARY_MAX_ITER })
}

/// Stationary distribution of the reference chain, in pair order.
pub fn stationary_distribution(chain: &ReferenceChain) -> Result<Vec<f64>> {
    stationary_of(&chain.matrix, chain.dim())
}

/// Expected occupation `(1/T) sum_{i<T} P(X_i = s) pi(a|s)` of one episode of
/// length `len` started at `start`, in pair order.
pub fn episode_occupation(kernel: &TransitionKernel, policy: &Policy, start: usize, len: usize) -> Vec<f64> {
    let space = kernel.space();
    let mut dist = vec![0.0; space.states];
    dist[start] = 1.0;
    let mut occ = vec![0.0; space.pairs()];
    for _ in 0..len {
        let mut next = vec![0.0; space.states];
        for s in 0..space.states {
            for a in 0..space.actions {
                let w = dist[s] * policy.prob(s, a);
                occ[space.pair_index(s, a)] += w / len as f64;
                for (t, p) in kernel.row(s, a).iter().enumerate() {
                    next[t] += w * p;
                }
            }
        }
        dist = next;
    }
    occ
}

/// Episodic data concatenated into one trajectory, with a dummy reset action
/// (index `A`) between episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedChain {
    space: StateActionSpace,
    states: Vec<usize>,
    actions: Vec<usize>,
    reset_kernel: Vec<Vec<f64>>,
}

impl EmbeddedChain {
    /// Index of the dummy reset action.
    pub fn dagger(&self) -> usize {
        self.space.actions
    }

    /// Original (un-extended) space.
    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    /// Extended action count `A + 1`.
    pub fn extended_actions(&self) -> usize {
        self.space.actions + 1
    }

    /// Number of transitions `n' = K(T+1) - 1`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn reset_kernel(&self) -> &[Vec<f64>] {
        &self.reset_kernel
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(|i| Transition::new(self.states[i], self.actions[i], self.states[i + 1]))
    }

    /// Counts over transitions with a real action; reset steps are skipped.
    pub fn counts_restricted(&self) -> CountStatistics {
        let mut counts = CountStatistics::zeros(self.space);
        self.transitions().filter(|tr| tr.action != self.dagger()).for_each(|tr| counts.record(tr));
        counts
    }

    /// `N^{(a)}_s / n'` for real actions `a`, in pair order.
    pub fn occupation_restricted(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.counts_restricted().pair_counts().iter().map(|&c| c as f64 / n).collect()
    }
}

pub fn uniform_reset_kernel(states: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / states as f64; states]; states]
}

/// Concatenates the episodes, inserting a reset step from `X_T^{(k)}` to
/// `X_0^{(k+1)}` after every episode but the last.
pub fn embed_episodic(dataset: &EpisodicDataset, reset_kernel: &[Vec<f64>]) -> Result<EmbeddedChain> {
    let space = dataset.space();
    if reset_kernel.len() != space.states || reset_kernel.iter().any(|r| r.len() != space.states) {
        return Err(Error::Shape("reset kernel must be S x S".into()));
    }
    for (s, row) in reset_kernel.iter().enumerate() {
        if let Some(t) = row.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::NonPositiveResetKernel { s, t });
        }
        let residual = row.iter().sum::<f64>() - 1.0;
        if residual.abs() > ROW_SUM_TOL {
            return Err(Error::RowSum { s, a: space.actions, residual });
        }
    }
    let k = dataset.num_episodes();
    let t = dataset.episode_len();
    let mut states = Vec::with_capacity(k * (t + 1));
    let mut actions = Vec::with_capacity(k * (t + 1) - 1);
    for (idx, episode) in dataset.episodes().iter().enumerate() {
        if idx > 0 {
            actions.push(space.actions);
        }
        for tr in episode {
            states.push(tr.state);
            actions.push(tr.action);
        }
        states.push(episode[t - 1].next_state);
    }
    Ok(EmbeddedChain { space, states, actions, reset_kernel: reset_kernel.to_vec() })
}
