//! Fixed-policy and optimal Bellman solvers.
//!
//! OPE targets come from dense linear solves of
//! `(I - gamma Pi M) V = g` and `(I - gamma M Pi) Q = r`; OPR targets come from
//! value iteration on `Q`. Matrices use the block layout of [`kernel_matrix`]
//! (`SA x S`) and [`policy_matrix`] (`S x SA`).

use nalgebra::{DMatrix, DVector};

use crate::bootstrap::{map_indexed, BootstrapEnsemble};
use crate::cmc::{Policy, RewardTable, StateActionSpace, TransitionKernel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    space: StateActionSpace,
    values: Vec<f64>,
}

impl QFunction {
    pub fn new(space: StateActionSpace, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), space.pairs());
        Self { space, values }
    }

    pub fn zeros(space: StateActionSpace) -> Self {
        Self::new(space, vec![0.0; space.pairs()])
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[self.space.pair_index(s, a)]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let a = self.space.actions;
        &self.values[s * a..(s + 1) * a]
    }

    /// Values in pair order `s*A + a`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub q_star: QFunction,
    pub v_star: ValueFunction,
    pub pi_star: Policy,
    /// Greedy action per state, lowest index on ties.
    pub greedy: Vec<usize>,
    /// `min_s` of the gap between the best and second-best action values.
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OprOptions {
    /// Target sup-norm distance to the fixed point.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OprOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000 }
    }
}

fn check_spaces(kernel: &TransitionKernel, policy: Option<&Policy>, rewards: &RewardTable) -> Result<()> {
    let space = kernel.space();
    if rewards.space() != space || policy.is_some_and(|p| p.space() != space) {
        return Err(Error::Shape("kernel, policy and rewards must share one state-action space".into()));
    }
    Ok(())
}

/// The `SA x S` stacked kernel matrix, row `s*A + a` holding `M^{(a)}_{s,.}`.
pub fn kernel_matrix(kernel: &TransitionKernel) -> DMatrix<f64> {
    let space = kernel.space();
    DMatrix::from_row_slice(space.pairs(), space.states, kernel.as_vec())
}

/// The `S x SA` block-diagonal policy matrix `Pi = diag(pi_1, ..., pi_S)`.
pub fn policy_matrix(policy: &Policy) -> DMatrix<f64> {
    let space = policy.space();
    let mut pi = DMatrix::zeros(space.states, space.pairs());
    for s in 0..space.states {
        for a in 0..space.actions {
            pi[(s, space.pair_index(s, a))] = policy.prob(s, a);
        }
    }
    pi
}

fn solve_dense(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let lu = lhs.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    // one round of iterative refinement
    let residual = &rhs - &lhs * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}

/// `V_pi` and `Q_pi` by direct linear solves.
pub fn solve_ope(
    kernel: &TransitionKernel,
    policy: &Policy,
    rewards: &RewardTable,
) -> Result<(ValueFunction, QFunction)> {
    check_spaces(kernel, Some(policy), rewards)?;
    let space = kernel.space();
    let gamma = rewards.gamma();
    let m = kernel_matrix(kernel);
    let pi = policy_matrix(policy);

    let lhs_v = DMatrix::identity(space.states, space.states) - (&pi * &m) * gamma;
    let g = DVector::from_vec(rewards.policy_reward(policy));
    let v = solve_dense(lhs_v, g)?;

    let lhs_q = DMatrix::identity(space.pairs(), space.pairs()) - (&m * &pi) * gamma;
    let r = DVector::from_column_slice(rewards.as_slice());
    let q = solve_dense(lhs_q, r)?;

    Ok((ValueFunction(v.as_slice().to_vec()), QFunction::new(space, q.as_slice().to_vec())))
}

/// Fixed-policy value iteration `V <- g + gamma Pi M V`, stopped once the
/// successive change guarantees `|V - V_pi| <= tol`.
pub fn evaluate_policy_iterative(
    kernel: &TransitionKernel,
    policy: &Policy,
    rewards: &RewardTable,
    tol: f64,
    max_iter: usize,
) -> Result<ValueFunction> {
    check_spaces(kernel, Some(policy), rewards)?;
    let space = kernel.space();
    let gamma = rewards.gamma();
    let g = rewards.policy_reward(policy);
    let mut transition = vec![0.0; space.states * space.states];
    for s in 0..space.states {
        for a in 0..space.actions {
            let w = policy.prob(s, a);
            for (t, p) in kernel.row(s, a).iter().enumerate() {
                transition[s * space.states + t] += w * p;
            }
        }
    }
    let threshold = tol * (1.0 - gamma) / gamma;
    let mut v = vec![0.0; space.states];
    for _ in 0..max_iter {
        let next: Vec<f64> = (0..space.states)
            .map(|s| {
                let row = &transition[s * space.states..(s + 1) * space.states];
                g[s] + gamma * row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
            })
            .collect();
        let change = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if change <= threshold {
            return Ok(ValueFunction(v));
        }
    }
    Err(Error::NoConvergence { max_iter })
}

/// Optimal `Q_*`, `V_*`, `pi_*` by value iteration from `Q = 0`.
pub fn solve_opr(kernel: &TransitionKernel, rewards: &RewardTable, opts: OprOptions) -> Result<OptimalSolution> {
    solve_opr_from(kernel, rewards, opts, None)
}

/// Value iteration started from `init` (or zero). Iterates until the
/// successive sup-norm change is at most `tol (1-gamma) / (2 gamma)`, which
/// bounds the distance to `Q_*` by `tol`.
pub fn solve_opr_from(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    opts: OprOptions,
    init: Option<&QFunction>,
) -> Result<OptimalSolution> {
    check_spaces(kernel, None, rewards)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let space = kernel.space();
    let gamma = rewards.gamma();
    let threshold = opts.tol * (1.0 - gamma) / (2.0 * gamma);
    let mut q = match init {
        Some(init) if init.space() == space => init.as_slice().to_vec(),
        _ => vec![0.0; space.pairs()],
    };
    let mut v = vec![0.0; space.states];
    let mut next = vec![0.0; space.pairs()];
    let probs = kernel.as_vec();
    let r = rewards.as_slice();
    for iter in 1..=opts.max_iter {
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = q[s * space.actions..(s + 1) * space.actions].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let mut change = 0.0f64;
        for pair in 0..space.pairs() {
            let row = &probs[pair * space.states..(pair + 1) * space.states];
            let value = r[pair] + gamma * row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
            change = change.max((value - q[pair]).abs());
            next[pair] = value;
        }
        std::mem::swap(&mut q, &mut next);
        if change <= threshold {
            return Ok(greedy_solution(QFunction::new(space, q), iter));
        }
    }
    Err(Error::NoConvergence { max_iter: opts.max_iter })
}

fn greedy_solution(q_star: QFunction, iterations: usize) -> OptimalSolution {
    let space = q_star.space();
    let mut greedy = Vec::with_capacity(space.states);
    let mut v = Vec::with_capacity(space.states);
    let mut gap = f64::INFINITY;
    for s in 0..space.states {
        let row = q_star.row(s);
        let mut best = 0;
        for a in 1..space.actions {
            if row[a] > row[best] {
                best = a;
            }
        }
        let runner_up =
            row.iter().enumerate().filter(|&(a, _)| a != best).map(|(_, &x)| x).fold(f64::NEG_INFINITY, f64::max);
        gap = gap.min(row[best] - runner_up);
        greedy.push(best);
        v.push(row[best]);
    }
    let pi_star = Policy::deterministic(space, &greedy).expect("greedy actions are in range");
    OptimalSolution { q_star, v_star: ValueFunction(v), pi_star, greedy, gap, iterations }
}

/// `max |Q(s,a) - r(s,a) - gamma sum_t M^{(a)}_{s,t} max_a' Q(t,a')|`.
pub fn optimal_bellman_residual(kernel: &TransitionKernel, rewards: &RewardTable, q: &QFunction) -> f64 {
    let space = kernel.space();
    let v: Vec<f64> = (0..space.states).map(|s| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    (0..space.pairs())
        .map(|pair| {
            let (s, a) = space.pair_of(pair);
            let backup = rewards.reward(s, a)
                + rewards.gamma() * kernel.row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
            (q.get(s, a) - backup).abs()
        })
        .fold(0.0, f64::max)
}

/// Per-replicate OPE and OPR targets.
#[derive(Debug, Clone)]
pub struct BootstrapTargets {
    pub ope: Option<Vec<(ValueFunction, QFunction)>>,
    pub opr: Vec<OptimalSolution>,
    /// Whether replicate `j` had undefined kernel rows that were repaired.
    pub repaired: Vec<bool>,
}

/// Solves every replicate kernel (repaired with self-loops where a row is
/// undefined) for OPE under `target_policy`, if given, and for OPR.
pub fn bootstrap_targets(
    ensemble: &BootstrapEnsemble,
    rewards: &RewardTable,
    target_policy: Option<&Policy>,
    opts: OprOptions,
) -> Result<BootstrapTargets> {
    let solved = map_indexed(ensemble.len(), ensemble.config.threads, |j| {
        let model = &ensemble.replicates[j];
        let kernel = model.repaired_kernel();
        let tag = |e| Error::Replicate { index: j, source: Box::new(e) };
        let ope = target_policy.map(|pi| solve_ope(&kernel, pi, rewards)).transpose().map_err(tag)?;
        let opr = solve_opr(&kernel, rewards, opts).map_err(tag)?;
        Ok::<_, Error>((ope, opr, model.needs_kernel_repair()))
    })?;
    let mut ope = target_policy.map(|_| Vec::with_capacity(solved.len()));
    let mut opr = Vec::with_capacity(solved.len());
    let mut repaired = Vec::with_capacity(solved.len());
    for item in solved {
        let (o, star, flag) = item?;
        if let (Some(list), Some(pair)) = (ope.as_mut(), o) {
            list.push(pair);
        }
        opr.push(star);
        repaired.push(flag);
    }
    Ok(BootstrapTargets { ope, opr, repaired })
}
