//! Independent oracles shared by the integration tests. Nothing here calls the
//! crate's solvers or covariance code.
#![allow(dead_code)]

use cmc_bootstrap::cmc::{Policy, RewardTable, StateActionSpace, TransitionKernel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_simplex<R: Rng>(rng: &mut R, len: usize, sparse: bool) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> =
            (0..len).map(|_| if sparse && rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() + 1e-3 }).collect();
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
            return row;
        }
    }
}

pub struct Instance {
    pub kernel: TransitionKernel,
    pub policy: Policy,
    pub rewards: RewardTable,
}

/// Random MDP with `S, A` drawn from `2..=max_dim` (or 1 action allowed).
pub fn random_instance<R: Rng>(rng: &mut R, max_dim: usize, sparse: bool) -> Instance {
    let states = rng.random_range(1..=max_dim);
    let actions = rng.random_range(1..=max_dim);
    let space = StateActionSpace::new(states, actions).unwrap();
    let kernel: Vec<f64> = (0..states * actions).flat_map(|_| random_simplex(rng, states, sparse)).collect();
    let policy: Vec<f64> = (0..states).flat_map(|_| random_simplex(rng, actions, sparse)).collect();
    let rewards: Vec<f64> = (0..states * actions).map(|_| rng.random_range(-1.0..2.0)).collect();
    let gamma = rng.random_range(0.5..0.95);
    Instance {
        kernel: TransitionKernel::new(space, kernel).unwrap(),
        policy: Policy::new(space, policy).unwrap(),
        rewards: RewardTable::new(space, rewards, gamma).unwrap(),
    }
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// `(V, Q)` for a raw flat kernel `m[(s*A+a)*S+t]`, with no stochasticity
/// checks so that finite-difference probes may leave the simplex.
pub fn raw_values(m: &[f64], pi: &[f64], r: &[f64], gamma: f64, states: usize, actions: usize) -> (Vec<f64>, Vec<f64>) {
    // (I - gamma * P_pi) V = r_pi, P_pi[s][t] = sum_a pi(a|s) M^(a)_{s,t}
    let mut a = vec![vec![0.0; states]; states];
    let mut b = vec![0.0; states];
    for s in 0..states {
        a[s][s] = 1.0;
        for act in 0..actions {
            let w = pi[s * actions + act];
            b[s] += w * r[s * actions + act];
            for t in 0..states {
                a[s][t] -= gamma * w * m[(s * actions + act) * states + t];
            }
        }
    }
    let v = gauss_solve(a, b);
    let q = (0..states * actions)
        .map(|sa| r[sa] + gamma * (0..states).map(|t| m[sa * states + t] * v[t]).sum::<f64>())
        .collect();
    (v, q)
}

/// Fixed-policy value iteration to sup-norm change below `tol`.
pub fn value_iteration(kernel: &TransitionKernel, policy: &Policy, rewards: &RewardTable, tol: f64) -> Vec<f64> {
    let space = kernel.space();
    let (states, actions) = (space.states, space.actions);
    let mut v = vec![0.0; states];
    loop {
        let next: Vec<f64> = (0..states)
            .map(|s| {
                (0..actions)
                    .map(|a| {
                        let cont: f64 = (0..states).map(|t| kernel.prob(s, a, t) * v[t]).sum();
                        policy.prob(s, a) * (rewards.reward(s, a) + rewards.gamma() * cont)
                    })
                    .sum()
            })
            .collect();
        let change = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if change <= tol * (1.0 - rewards.gamma()) / 2.0 {
            return v;
        }
    }
}

/// Dense `Lambda_bar` straight from its block formula.
pub fn lambda_oracle(kernel: &TransitionKernel, occupation: &[f64]) -> Vec<Vec<f64>> {
    let space = kernel.space();
    let (states, pairs) = (space.states, space.pairs());
    let dim = pairs * states;
    let mut out = vec![vec![0.0; dim]; dim];
    for sa in 0..pairs {
        let (s, a) = (sa / space.actions, sa % space.actions);
        for t in 0..states {
            for u in 0..states {
                let mt = kernel.prob(s, a, t);
                let mu = kernel.prob(s, a, u);
                let delta = if t == u { mt } else { 0.0 };
                out[sa * states + t][sa * states + u] = (delta - mt * mu) / occupation[sa];
            }
        }
    }
    out
}

/// `raw_values` in double-double arithmetic, so that finite differences
/// at small steps are not swamped by roundoff.
fn raw_values_dd(
    m: &[TwoFloat],
    pi: &[f64],
    r: &[f64],
    gamma: f64,
    states: usize,
    actions: usize,
) -> (Vec<TwoFloat>, Vec<TwoFloat>) {
    let zero = TwoFloat::from(0.0);
    let mut a = vec![vec![zero; states]; states];
    let mut b = vec![zero; states];
    for s in 0..states {
        a[s][s] = TwoFloat::from(1.0);
        for act in 0..actions {
            let w = pi[s * actions + act];
            b[s] += TwoFloat::from(w) * r[s * actions + act];
            for t in 0..states {
                a[s][t] -= m[(s * actions + act) * states + t] * (gamma * w);
            }
        }
    }
    for col in 0..states {
        let pivot = (col..states).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..states {
            let f = a[row][col] / a[col][col];
            for k in col..states {
                let d = f * a[col][k];
                a[row][k] -= d;
            }
            let d = f * b[col];
            b[row] -= d;
        }
    }
    let mut v = vec![zero; states];
    for row in (0..states).rev() {
        let mut acc = b[row];
        for k in row + 1..states {
            acc -= a[row][k] * v[k];
        }
        v[row] = acc / a[row][row];
    }
    let q = (0..states * actions)
        .map(|sa| {
            let mut cont = zero;
            for t in 0..states {
                cont += m[sa * states + t] * v[t];
            }
            cont * gamma + r[sa]
        })
        .collect();
    (v, q)
}

fn to_f64(x: TwoFloat) -> f64 {
    x.hi() + x.lo()
}

/// Central-difference Jacobians of `vec(M) -> V` and `vec(M) -> Q`, with
/// each probe moving mass between `t` and the row's largest entry `t0` so
/// that rows stay on the simplex. Column `t0` of each row is left zero.
/// Returned as `[output][vec index]`.
pub fn fd_jacobians(
    kernel: &TransitionKernel,
    policy: &Policy,
    rewards: &RewardTable,
    h: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let space = kernel.space();
    let (states, actions) = (space.states, space.actions);
    let dim = space.pairs() * states;
    let base: Vec<TwoFloat> = kernel.as_vec().iter().map(|&x| TwoFloat::from(x)).collect();
    let mut jv = vec![vec![0.0; dim]; states];
    let mut jq = vec![vec![0.0; dim]; space.pairs()];
    for sa in 0..space.pairs() {
        let row = &kernel.as_vec()[sa * states..(sa + 1) * states];
        let t0 = (0..states).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        assert!(row[t0] >= h);
        for t in (0..states).filter(|&t| t != t0) {
            let probe = |sign: f64| {
                let mut m = base.clone();
                m[sa * states + t] += sign * h;
                m[sa * states + t0] -= sign * h;
                raw_values_dd(&m, policy.as_slice(), rewards.as_slice(), rewards.gamma(), states, actions)
            };
            let (vp, qp) = probe(1.0);
            let (vm, qm) = probe(-1.0);
            let col = sa * states + t;
            for s in 0..states {
                jv[s][col] = to_f64((vp[s] - vm[s]) / (2.0 * h));
            }
            for i in 0..space.pairs() {
                jq[i][col] = to_f64((qp[i] - qm[i]) / (2.0 * h));
            }
        }
    }
    (jv, jq)
}

/// `J L J^T` for dense row-major `J` and `L`.
pub fn sandwich(j: &[Vec<f64>], l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let jl: Vec<Vec<f64>> =
        j.iter().map(|row| (0..l.len()).map(|c| row.iter().zip(l).map(|(x, lr)| x * lr[c]).sum()).collect()).collect();
    jl.iter().map(|a| j.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &nalgebra::DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            worst = worst.max((x - b[(i, j)]).abs());
        }
    }
    worst
}

/// Sample mean, variance (unbiased), skewness and excess kurtosis.
pub fn moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    (mean, m2 * n / (n - 1.0), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}
