//! Asymptotic covariances of the kernel estimator and of the plug-in
//! OPE/OPR targets, plus the plug-in CLT (Wald) interval.
//!
//! All matrices indexed by kernel entries use the `vec(M)` order of
//! [`StateActionSpace::vec_index`]: entry `(s, a, t)` sits at
//! `(s*A + a)*S + t`. Under that order the Jacobian of `V_pi` with respect to
//! `vec(M)` is `gamma * kron((I - gamma Pi M)^{-1} Pi, V_pi^T)` and that of
//! `Q_pi` is `gamma * kron((I - gamma M Pi)^{-1}, (Pi Q_pi)^T)`.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bellman::{kernel_matrix, policy_matrix, solve_ope, solve_opr, OprOptions, OptimalSolution};
use crate::cmc::{Policy, RewardTable, StateActionSpace, TransitionKernel};
use crate::error::{Error, Result};
use crate::intervals::{CiMethod, ConfidenceInterval};

/// Default gap below which an optimal policy is reported as degenerate.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1e-8;

/// How zero (or tiny) occupation entries are handled in `1/p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FloorRule {
    /// `p <- max(p, 1/n)`, i.e. `max(N, 1)/n` for an empirical occupation.
    PerSample { n: u64 },
    /// `p <- max(p, floor)`.
    Fixed(f64),
}

impl FloorRule {
    fn floor(self) -> f64 {
        match self {
            FloorRule::PerSample { n } => 1.0 / n.max(1) as f64,
            FloorRule::Fixed(f) => f,
        }
    }
}

/// `Lambda_bar`, block diagonal over state–action pairs.
#[derive(Debug, Clone)]
pub struct LambdaBar {
    space: StateActionSpace,
    matrix: DMatrix<f64>,
    floored: Vec<bool>,
}

impl LambdaBar {
    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Whether the occupation of pair `s*A + a` was raised by the floor rule.
    pub fn floored(&self) -> &[bool] {
        &self.floored
    }

    pub fn any_floored(&self) -> bool {
        self.floored.iter().any(|&f| f)
    }

    /// Entry `Lambda_{sat, s'a't'}`.
    pub fn entry(&self, (s, a, t): (usize, usize, usize), (s2, a2, t2): (usize, usize, usize)) -> f64 {
        self.matrix[(self.space.vec_index(s, a, t), self.space.vec_index(s2, a2, t2))]
    }
}

/// `Lambda_{sat,s'a't'} = 1{(s,a)=(s',a')} (1{t=t'} M_{s,t} - M_{s,t} M_{s,t'}) / p_s^{(a)}`.
pub fn lambda_bar(kernel: &TransitionKernel, occupation: &[f64], floor_rule: FloorRule) -> Result<LambdaBar> {
    let space = kernel.space();
    if occupation.len() != space.pairs() {
        return Err(Error::Shape(format!("occupation needs {} entries, got {}", space.pairs(), occupation.len())));
    }
    let floor = floor_rule.floor();
    let dim = space.vec_len();
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut floored = vec![false; space.pairs()];
    for pair in 0..space.pairs() {
        let (s, a) = space.pair_of(pair);
        let mut p = occupation[pair];
        if !(p >= floor) {
            p = floor;
            floored[pair] = true;
        }
        let row = kernel.row(s, a);
        let base = pair * space.states;
        for t in 0..space.states {
            for t2 in 0..space.states {
                let diag = if t == t2 { row[t] } else { 0.0 };
                matrix[(base + t, base + t2)] = (diag - row[t] * row[t2]) / p;
            }
        }
    }
    Ok(LambdaBar { space, matrix, floored })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyWarning {
    pub gap: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct TargetCovariance {
    /// `Sigma_V`, `S x S`.
    pub sigma_v: DMatrix<f64>,
    /// `Sigma_Q`, `SA x SA` in pair order.
    pub sigma_q: DMatrix<f64>,
    /// Policy the covariance was evaluated at.
    pub policy: Policy,
    pub degeneracy: Option<DegeneracyWarning>,
}

impl TargetCovariance {
    pub fn var_v(&self, s: usize) -> f64 {
        self.sigma_v[(s, s)]
    }

    pub fn var_q(&self, s: usize, a: usize) -> f64 {
        let i = self.policy.space().pair_index(s, a);
        self.sigma_q[(i, i)]
    }
}

fn kron(lhs: &DMatrix<f64>, rhs_row: &[f64]) -> DMatrix<f64> {
    lhs.kronecker(&DMatrix::from_row_slice(1, rhs_row.len(), rhs_row))
}

fn sandwich(jac: &DMatrix<f64>, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let full = jac * lambda * jac.transpose();
    (&full + full.transpose()) * 0.5
}

/// Closed-form Jacobians `(dV/dvec(M), dQ/dvec(M))` at `(M, pi)`.
pub fn target_jacobians(
    kernel: &TransitionKernel,
    policy: &Policy,
    rewards: &RewardTable,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let space = kernel.space();
    if policy.space() != space || rewards.space() != space {
        return Err(Error::IndexConvention("kernel, policy and rewards disagree on (S, A)".into()));
    }
    let gamma = rewards.gamma();
    let (v, q) = solve_ope(kernel, policy, rewards)?;
    let m = kernel_matrix(kernel);
    let pi = policy_matrix(policy);

    let lhs_v = DMatrix::identity(space.states, space.states) - (&pi * &m) * gamma;
    let resolvent_pi = lhs_v.lu().solve(&pi).ok_or(Error::SingularSystem)?;
    let jac_v = kron(&resolvent_pi, v.as_slice()) * gamma;

    let lhs_q = DMatrix::identity(space.pairs(), space.pairs()) - (&m * &pi) * gamma;
    let resolvent_q =
        lhs_q.lu().solve(&DMatrix::identity(space.pairs(), space.pairs())).ok_or(Error::SingularSystem)?;
    let pi_q = &pi * nalgebra::DVector::from_column_slice(q.as_slice());
    let jac_q = kron(&resolvent_q, pi_q.as_slice()) * gamma;

    let expected = (space.states, space.vec_len());
    if jac_v.shape() != expected || jac_q.shape() != (space.pairs(), space.vec_len()) {
        return Err(Error::IndexConvention(format!(
            "Jacobian shapes {:?}/{:?} do not match vec(M) length {}",
            jac_v.shape(),
            jac_q.shape(),
            space.vec_len()
        )));
    }
    Ok((jac_v, jac_q))
}

/// `Sigma_V^pi` and `Sigma_Q^pi`.
pub fn sigma_ope(
    kernel: &TransitionKernel,
    policy: &Policy,
    rewards: &RewardTable,
    lambda: &LambdaBar,
) -> Result<TargetCovariance> {
    if lambda.space() != kernel.space() {
        return Err(Error::IndexConvention(format!(
            "Lambda built for {:?}, kernel is {:?}",
            lambda.space(),
            kernel.space()
        )));
    }
    let (jac_v, jac_q) = target_jacobians(kernel, policy, rewards)?;
    Ok(TargetCovariance {
        sigma_v: sandwich(&jac_v, lambda.matrix()),
        sigma_q: sandwich(&jac_q, lambda.matrix()),
        policy: policy.clone(),
        degeneracy: None,
    })
}

/// `Sigma_V^{pi_*}`, `Sigma_Q^{pi_*}` at an already computed optimal solution.
pub fn sigma_opr_at(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    lambda: &LambdaBar,
    solution: &OptimalSolution,
    gap_threshold: f64,
) -> Result<TargetCovariance> {
    let mut cov = sigma_ope(kernel, &solution.pi_star, rewards, lambda)?;
    if solution.gap < gap_threshold {
        cov.degeneracy = Some(DegeneracyWarning { gap: solution.gap, threshold: gap_threshold });
    }
    Ok(cov)
}

/// Solves the optimal Bellman equations and evaluates the OPE covariance at
/// the greedy policy.
pub fn sigma_opr(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    lambda: &LambdaBar,
    opts: OprOptions,
    gap_threshold: f64,
) -> Result<(TargetCovariance, OptimalSolution)> {
    let solution = solve_opr(kernel, rewards, opts)?;
    let cov = sigma_opr_at(kernel, rewards, lambda, &solution, gap_threshold)?;
    Ok((cov, solution))
}

/// `Phi^{-1}(p)` for the standard normal.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Wald interval `estimate ± z_{1-alpha/2} sqrt(variance / n)`.
pub fn clt_interval(estimate: f64, variance: f64, n: u64, alpha: f64) -> Result<ConfidenceInterval> {
    if variance < 0.0 || variance.is_nan() {
        return Err(Error::NegativeVariance(variance));
    }
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 {
        return Err(Error::InvalidArgument(format!("need 0 < alpha < 1 and n > 0, got alpha={alpha}, n={n}")));
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * (variance / n as f64).sqrt();
    Ok(ConfidenceInterval::new(estimate - half, estimate + half, 1.0 - alpha, CiMethod::Clt))
}
