//! Visit counts and the count-based estimators built from them.

use crate::cmc::{EpisodicDataset, Policy, StateActionSpace, Transition, TransitionKernel};
use crate::error::{Error, Result};

/// Tallies `N^{(a)}_{s,t}`, `N^{(a)}_s`, `N_s` and `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountStatistics {
    space: StateActionSpace,
    n_sat: Vec<u64>,
    n_sa: Vec<u64>,
    n_s: Vec<u64>,
    n_total: u64,
}

impl CountStatistics {
    pub fn zeros(space: StateActionSpace) -> Self {
        Self {
            space,
            n_sat: vec![0; space.vec_len()],
            n_sa: vec![0; space.pairs()],
            n_s: vec![0; space.states],
            n_total: 0,
        }
    }

    /// Builds counts from a flat `N^{(a)}_{s,t}` array; marginals are derived.
    pub fn from_transition_counts(space: StateActionSpace, n_sat: Vec<u64>) -> Result<Self> {
        if n_sat.len() != space.vec_len() {
            return Err(Error::Shape(format!("expected {} transition counts, got {}", space.vec_len(), n_sat.len())));
        }
        let n_sa: Vec<u64> = n_sat.chunks(space.states).map(|c| c.iter().sum()).collect();
        let n_s: Vec<u64> = n_sa.chunks(space.actions).map(|c| c.iter().sum()).collect();
        let n_total = n_s.iter().sum();
        Ok(Self { space, n_sat, n_sa, n_s, n_total })
    }

    #[inline]
    pub fn record(&mut self, tr: Transition) {
        let pair = self.space.pair_index(tr.state, tr.action);
        self.n_sat[pair * self.space.states + tr.next_state] += 1;
        self.n_sa[pair] += 1;
        self.n_s[tr.state] += 1;
        self.n_total += 1;
    }

    /// Adds `times` copies of `other` into `self`.
    pub fn add_scaled(&mut self, other: &CountStatistics, times: u64) {
        debug_assert_eq!(self.space, other.space);
        let add = |dst: &mut [u64], src: &[u64]| {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * times);
        };
        add(&mut self.n_sat, &other.n_sat);
        add(&mut self.n_sa, &other.n_sa);
        add(&mut self.n_s, &other.n_s);
        self.n_total += other.n_total * times;
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn n_sat(&self, s: usize, a: usize, t: usize) -> u64 {
        self.n_sat[self.space.vec_index(s, a, t)]
    }

    pub fn n_sa(&self, s: usize, a: usize) -> u64 {
        self.n_sa[self.space.pair_index(s, a)]
    }

    pub fn n_s(&self, s: usize) -> u64 {
        self.n_s[s]
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn transition_counts(&self) -> &[u64] {
        &self.n_sat
    }

    pub fn pair_counts(&self) -> &[u64] {
        &self.n_sa
    }
}

/// Exact tallies over every transition of the dataset.
pub fn count(dataset: &EpisodicDataset) -> CountStatistics {
    let mut counts = CountStatistics::zeros(dataset.space());
    dataset.transitions().for_each(|&tr| counts.record(tr));
    counts
}

/// Count-based kernel and behaviour-policy estimates. Rows with a zero
/// denominator are left undefined and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedModel {
    counts: CountStatistics,
    kernel: Vec<f64>,
    kernel_defined: Vec<bool>,
    policy: Vec<f64>,
    policy_defined: Vec<bool>,
}

/// `M_hat^{(a)}_{s,t} = N^{(a)}_{s,t} / N^{(a)}_s` and `pi_hat(a|s) = N^{(a)}_s / N_s`.
pub fn estimate(counts: &CountStatistics) -> EstimatedModel {
    let space = counts.space();
    let mut kernel = vec![0.0; space.vec_len()];
    let mut kernel_defined = vec![false; space.pairs()];
    for pair in 0..space.pairs() {
        let denom = counts.n_sa[pair];
        if denom > 0 {
            kernel_defined[pair] = true;
            let start = pair * space.states;
            for t in 0..space.states {
                kernel[start + t] = counts.n_sat[start + t] as f64 / denom as f64;
            }
        }
    }
    let mut policy = vec![0.0; space.pairs()];
    let mut policy_defined = vec![false; space.states];
    for s in 0..space.states {
        let denom = counts.n_s[s];
        if denom > 0 {
            policy_defined[s] = true;
            for a in 0..space.actions {
                let i = space.pair_index(s, a);
                policy[i] = counts.n_sa[i] as f64 / denom as f64;
            }
        }
    }
    EstimatedModel { counts: counts.clone(), kernel, kernel_defined, policy, policy_defined }
}

impl EstimatedModel {
    pub fn space(&self) -> StateActionSpace {
        self.counts.space()
    }

    pub fn counts(&self) -> &CountStatistics {
        &self.counts
    }

    /// Estimated row `(s, a)`, or `None` when `N^{(a)}_s = 0`.
    pub fn kernel_row(&self, s: usize, a: usize) -> Option<&[f64]> {
        let space = self.space();
        let pair = space.pair_index(s, a);
        self.kernel_defined[pair].then(|| &self.kernel[pair * space.states..(pair + 1) * space.states])
    }

    pub fn policy_row(&self, s: usize) -> Option<&[f64]> {
        let a = self.space().actions;
        self.policy_defined[s].then(|| &self.policy[s * a..(s + 1) * a])
    }

    pub fn kernel_defined(&self, s: usize, a: usize) -> bool {
        self.kernel_defined[self.space().pair_index(s, a)]
    }

    pub fn policy_defined(&self, s: usize) -> bool {
        self.policy_defined[s]
    }

    /// True when at least one kernel row is undefined.
    pub fn needs_kernel_repair(&self) -> bool {
        self.kernel_defined.iter().any(|d| !d)
    }

    pub fn needs_policy_repair(&self) -> bool {
        self.policy_defined.iter().any(|d| !d)
    }

    /// Kernel with undefined rows replaced by a self-loop.
    pub fn repaired_kernel(&self) -> TransitionKernel {
        let space = self.space();
        let mut probs = self.kernel.clone();
        for pair in 0..space.pairs() {
            if !self.kernel_defined[pair] {
                let (s, _) = space.pair_of(pair);
                probs[pair * space.states + s] = 1.0;
            }
        }
        TransitionKernel::new(space, probs).expect("count-based rows are stochastic")
    }

    /// Behaviour policy with undefined rows replaced by the uniform distribution.
    pub fn repaired_policy(&self) -> Policy {
        let space = self.space();
        let mut probs = self.policy.clone();
        let uniform = 1.0 / space.actions as f64;
        for s in 0..space.states {
            if !self.policy_defined[s] {
                probs[s * space.actions..(s + 1) * space.actions].fill(uniform);
            }
        }
        Policy::new(space, probs).expect("count-based rows are stochastic")
    }
}

/// Kernel and behaviour policy used to simulate bootstrap data: unvisited
/// pairs become self-loops and unvisited states get a uniform policy.
pub fn repair_for_simulation(model: &EstimatedModel) -> (TransitionKernel, Policy) {
    (model.repaired_kernel(), model.repaired_policy())
}

/// Empirical occupation `N^{(a)}_s / n`, flat in pair order.
pub fn occupation_estimate(counts: &CountStatistics) -> Result<Vec<f64>> {
    if counts.n_total == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = counts.n_total as f64;
    Ok(counts.n_sa.iter().map(|&c| c as f64 / n).collect())
}
