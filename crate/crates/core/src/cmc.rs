//! Core types for finite controlled Markov chains.
//!
//! States and actions are dense 0-based indices. A kernel is stored flat in
//! the order `(s, a, t) -> s*A*S + a*S + t`, which is also the order of
//! `vec(M)` used by the covariance code (see [`StateActionSpace::vec_index`]).

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of kernels and policies must equal one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateActionSpace {
    pub states: usize,
    pub actions: usize,
}

impl StateActionSpace {
    pub fn new(states: usize, actions: usize) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(Error::InvalidArgument(format!(
                "state-action space needs S >= 1 and A >= 1, got S={states}, A={actions}"
            )));
        }
        Ok(Self { states, actions })
    }

    /// Number of state–action pairs, `S*A`.
    pub fn pairs(&self) -> usize {
        self.states * self.actions
    }

    /// Length of `vec(M)`, `S*A*S`.
    pub fn vec_len(&self) -> usize {
        self.states * self.actions * self.states
    }

    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.actions + a
    }

    pub fn pair_of(&self, index: usize) -> (usize, usize) {
        (index / self.actions, index % self.actions)
    }

    /// Position of `M^{(a)}_{s,t}` in `vec(M)`. Zero-based form of
    /// `(s-1)SA + (a-1)S + t`.
    pub fn vec_index(&self, s: usize, a: usize, t: usize) -> usize {
        (s * self.actions + a) * self.states + t
    }

    /// Inverse of [`vec_index`](Self::vec_index).
    pub fn unvec(&self, index: usize) -> (usize, usize, usize) {
        let t = index % self.states;
        let pair = index / self.states;
        (pair / self.actions, pair % self.actions, t)
    }

    fn check_state(&self, s: usize, what: &str) -> Result<()> {
        if s >= self.states {
            return Err(Error::InvalidArgument(format!("{what} {s} out of range for S={}", self.states)));
        }
        Ok(())
    }
}

fn check_row(row: &[f64], s: usize, a: usize, location: impl Fn(usize) -> String) -> Result<()> {
    for (t, &p) in row.iter().enumerate() {
        if !p.is_finite() || p < 0.0 || p > 1.0 {
            return Err(Error::NegativeEntry { location: location(t), value: p });
        }
    }
    let residual = row.iter().sum::<f64>() - 1.0;
    if residual.abs() > ROW_SUM_TOL {
        return Err(Error::RowSum { s, a, residual });
    }
    Ok(())
}

/// Transition kernel `M^{(a)}_{s,t}` over a finite state–action space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    space: StateActionSpace,
    probs: Vec<f64>,
}

impl TransitionKernel {
    /// Validates a flat `S*A*S` array in `vec(M)` order.
    pub fn new(space: StateActionSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.vec_len() {
            return Err(Error::Shape(format!(
                "kernel needs {} entries for S={}, A={}, got {}",
                space.vec_len(),
                space.states,
                space.actions,
                probs.len()
            )));
        }
        let kernel = Self { space, probs };
        for s in 0..space.states {
            for a in 0..space.actions {
                check_row(kernel.row(s, a), s, a, |t| format!("kernel[{s}][{a}][{t}]"))?;
            }
        }
        Ok(kernel)
    }

    /// Validates a nested `probs[s][a][t]` array.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let states = nested.len();
        let actions = nested.first().map_or(0, Vec::len);
        let space = StateActionSpace::new(states, actions)?;
        let mut probs = Vec::with_capacity(space.vec_len());
        for (s, per_action) in nested.iter().enumerate() {
            if per_action.len() != actions {
                return Err(Error::Shape(format!("kernel[{s}] has {} actions, expected {actions}", per_action.len())));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != states {
                    return Err(Error::Shape(format!("kernel[{s}][{a}] has {} entries, expected {states}", row.len())));
                }
                probs.extend_from_slice(row);
            }
        }
        Self::new(space, probs)
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.space.vec_index(s, a, 0);
        &self.probs[start..start + self.space.states]
    }

    pub fn prob(&self, s: usize, a: usize, t: usize) -> f64 {
        self.probs[self.space.vec_index(s, a, t)]
    }

    /// `vec(M)` in the crate's index convention.
    pub fn as_vec(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.space.states).map(|s| (0..self.space.actions).map(|a| self.row(s, a).to_vec()).collect()).collect()
    }
}

/// Stationary Markov policy `pi(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    space: StateActionSpace,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(space: StateActionSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.pairs() {
            return Err(Error::Shape(format!("policy needs {} entries, got {}", space.pairs(), probs.len())));
        }
        let policy = Self { space, probs };
        for s in 0..space.states {
            check_row(policy.row(s), s, 0, |a| format!("policy[{s}][{a}]"))?;
        }
        Ok(policy)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let space = StateActionSpace::new(rows.len(), rows.first().map_or(0, Vec::len))?;
        if rows.iter().any(|r| r.len() != space.actions) {
            return Err(Error::Shape("policy rows have unequal lengths".into()));
        }
        Self::new(space, rows.concat())
    }

    pub fn uniform(space: StateActionSpace) -> Self {
        let p = 1.0 / space.actions as f64;
        Self { space, probs: vec![p; space.pairs()] }
    }

    /// Point-mass policy choosing `actions[s]` in state `s`.
    pub fn deterministic(space: StateActionSpace, actions: &[usize]) -> Result<Self> {
        if actions.len() != space.states {
            return Err(Error::Shape(format!(
                "deterministic policy needs {} actions, got {}",
                space.states,
                actions.len()
            )));
        }
        let mut probs = vec![0.0; space.pairs()];
        for (s, &a) in actions.iter().enumerate() {
            if a >= space.actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            probs[space.pair_index(s, a)] = 1.0;
        }
        Ok(Self { space, probs })
    }

    /// Two-action policy with `pi(1|s) = p` in every state.
    pub fn action_one_prob(space: StateActionSpace, p: f64) -> Result<Self> {
        if space.actions != 2 {
            return Err(Error::InvalidArgument(format!(
                "action-one probability policy needs A=2, got A={}",
                space.actions
            )));
        }
        let probs = (0..space.states).flat_map(|_| [1.0 - p, p]).collect();
        Self::new(space, probs)
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let a = self.space.actions;
        &self.probs[s * a..(s + 1) * a]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[self.space.pair_index(s, a)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.space.states).map(|s| self.row(s).to_vec()).collect()
    }
}

/// Known reward function and discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    space: StateActionSpace,
    rewards: Vec<f64>,
    gamma: f64,
}

impl RewardTable {
    pub fn new(space: StateActionSpace, rewards: Vec<f64>, gamma: f64) -> Result<Self> {
        if rewards.len() != space.pairs() {
            return Err(Error::Shape(format!("reward table needs {} entries, got {}", space.pairs(), rewards.len())));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Validation {
                location: "gamma".into(),
                message: format!("discount must lie in (0, 1), got {gamma}"),
            });
        }
        if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
            let (s, a) = space.pair_of(i);
            return Err(Error::Validation {
                location: format!("rewards[{s}][{a}]"),
                message: "reward is not finite".into(),
            });
        }
        Ok(Self { space, rewards, gamma })
    }

    pub fn from_rows(rows: &[Vec<f64>], gamma: f64) -> Result<Self> {
        let space = StateActionSpace::new(rows.len(), rows.first().map_or(0, Vec::len))?;
        if rows.iter().any(|r| r.len() != space.actions) {
            return Err(Error::Shape("reward rows have unequal lengths".into()));
        }
        Self::new(space, rows.concat(), gamma)
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[self.space.pair_index(s, a)]
    }

    /// Rewards as a length-`S*A` vector indexed by [`StateActionSpace::pair_index`].
    pub fn as_slice(&self) -> &[f64] {
        &self.rewards
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rewards.chunks(self.space.actions).map(<[f64]>::to_vec).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `g(s) = sum_a pi(a|s) r(s,a)`.
    pub fn policy_reward(&self, policy: &Policy) -> Vec<f64> {
        (0..self.space.states)
            .map(|s| (0..self.space.actions).map(|a| policy.prob(s, a) * self.reward(s, a)).sum())
            .collect()
    }
}

/// One observed transition `(state, action, next_state)`. Serialises as a
/// three-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

impl Transition {
    pub fn new(state: usize, action: usize, next_state: usize) -> Self {
        Self { state, action, next_state }
    }
}

impl From<[usize; 3]> for Transition {
    fn from([state, action, next_state]: [usize; 3]) -> Self {
        Self { state, action, next_state }
    }
}

impl From<Transition> for [usize; 3] {
    fn from(t: Transition) -> Self {
        [t.state, t.action, t.next_state]
    }
}

pub type Episode = Vec<Transition>;

/// `K` episodes of equal length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicDataset {
    space: StateActionSpace,
    episodes: Vec<Episode>,
}

impl EpisodicDataset {
    pub fn new(space: StateActionSpace, episodes: Vec<Episode>) -> Result<Self> {
        if episodes.is_empty() || episodes[0].is_empty() {
            return Err(Error::EmptyDataset);
        }
        let len = episodes[0].len();
        for (k, episode) in episodes.iter().enumerate() {
            if episode.len() != len {
                return Err(Error::Validation {
                    location: format!("episode {k}"),
                    message: format!("length {} differs from {len}", episode.len()),
                });
            }
            for (i, tr) in episode.iter().enumerate() {
                if tr.state >= space.states || tr.next_state >= space.states || tr.action >= space.actions {
                    return Err(Error::Validation {
                        location: format!("episode {k}, step {i}"),
                        message: format!(
                            "transition {:?} outside S={}, A={}",
                            <[usize; 3]>::from(*tr),
                            space.states,
                            space.actions
                        ),
                    });
                }
            }
            for (i, pair) in episode.windows(2).enumerate() {
                if pair[0].next_state != pair[1].state {
                    return Err(Error::Validation {
                        location: format!("episode {k}, step {i}"),
                        message: "next_state does not match the following state".into(),
                    });
                }
            }
        }
        Ok(Self { space, episodes })
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode_len(&self) -> usize {
        self.episodes[0].len()
    }

    /// Total number of transitions `n = K*T`.
    pub fn len(&self) -> usize {
        self.num_episodes() * self.episode_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.episodes.iter().map(|e| e[0].state)
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.episodes.iter().flatten()
    }

    /// Writes one episode per line as `[[s,a,s'],...]`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for episode in &self.episodes {
            serde_json::to_writer(&mut out, episode)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(space: StateActionSpace, input: R) -> Result<Self> {
        let mut episodes = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            episodes.push(serde_json::from_str::<Episode>(&line)?);
        }
        Self::new(space, episodes)
    }

    pub fn load_jsonl(space: StateActionSpace, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(space, std::io::BufReader::new(file))
    }
}

/// Draws from a discrete distribution given its cumulative sums. Never
/// returns an index with zero probability.
#[derive(Debug, Clone)]
struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Self { cdf, last_positive }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.iter().position(|&c| u < c).map_or(self.last_positive, |i| i.min(self.last_positive))
    }
}

/// Precomputed samplers for a kernel and a policy.
#[derive(Debug, Clone)]
pub struct Simulator {
    space: StateActionSpace,
    next_state: Vec<Categorical>,
    action: Vec<Categorical>,
}

impl Simulator {
    pub fn new(kernel: &TransitionKernel, policy: &Policy) -> Result<Self> {
        let space = kernel.space();
        if policy.space() != space {
            return Err(Error::Shape("kernel and policy spaces differ".into()));
        }
        let next_state = (0..space.pairs())
            .map(|i| {
                let (s, a) = space.pair_of(i);
                Categorical::new(kernel.row(s, a))
            })
            .collect();
        let action = (0..space.states).map(|s| Categorical::new(policy.row(s))).collect();
        Ok(Self { space, next_state, action })
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Transition {
        let action = self.action[state].sample(rng);
        let next_state = self.next_state[self.space.pair_index(state, action)].sample(rng);
        Transition { state, action, next_state }
    }

    /// Runs `len` steps from `start`, feeding each transition to `sink`.
    pub fn run<R: Rng + ?Sized>(&self, start: usize, len: usize, rng: &mut R, mut sink: impl FnMut(Transition)) {
        let mut state = start;
        for _ in 0..len {
            let tr = self.step(state, rng);
            state = tr.next_state;
            sink(tr);
        }
    }
}

/// Samples one episode of `len` transitions: action from the policy row of
/// the current state, next state from the kernel row of (state, action).
pub fn simulate_episode<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    policy: &Policy,
    start_state: usize,
    len: usize,
    rng: &mut R,
) -> Result<Episode> {
    kernel.space().check_state(start_state, "start state")?;
    if len == 0 {
        return Err(Error::InvalidArgument("episode length must be >= 1".into()));
    }
    let sim = Simulator::new(kernel, policy)?;
    let mut episode = Vec::with_capacity(len);
    sim.run(start_state, len, rng, |tr| episode.push(tr));
    Ok(episode)
}

/// Simulates `episodes` episodes of length `len` from `start_state`, each on
/// its own stream `seeds.stream(Data, rep, NO_REPLICATE, k)`.
pub fn simulate_dataset(
    kernel: &TransitionKernel,
    policy: &Policy,
    start_state: usize,
    episodes: usize,
    len: usize,
    seeds: &crate::rng::SeedSpec,
    rep: u64,
) -> Result<EpisodicDataset> {
    use crate::rng::{Purpose, NO_REPLICATE};
    kernel.space().check_state(start_state, "start state")?;
    if len == 0 || episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode of length >= 1".into()));
    }
    let sim = Simulator::new(kernel, policy)?;
    let data = (0..episodes)
        .map(|k| {
            let mut rng = seeds.stream(Purpose::Data, rep, NO_REPLICATE, k as u64);
            let mut episode = Vec::with_capacity(len);
            sim.run(start_state, len, &mut rng, |tr| episode.push(tr));
            episode
        })
        .collect();
    EpisodicDataset::new(kernel.space(), data)
}
