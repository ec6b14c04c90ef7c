//! Model-based bootstrap for the transition kernel of a finite controlled
//! Markov chain (CMC), with downstream off-policy evaluation (OPE) and
//! optimal policy recovery (OPR) confidence intervals.
//!
//! The crate is organised bottom-up:
//!
//! - [`cmc`]: state–action spaces, kernels, policies, rewards, episodic data.
//! - [`counting`]: visit counts, the count-based kernel estimator and the
//!   zero-count repair used during simulation.
//! - [`bootstrap`]: model-based and episodic bootstrap ensembles.
//! - [`bellman`]: fixed-policy and optimal Bellman solvers.
//! - [`covariance`]: closed-form asymptotic covariances and the plug-in CLT interval.
//! - [`intervals`]: empirical quantiles, percentile and pivot intervals.
//! - [`reference_chain`]: the state–action reference chain, its stationary
//!   distribution and the episodic-to-single-chain embedding.
//! - [`env`]: the RiverSwim benchmark and the JSON MDP format.
//! - [`harness`]: Monte Carlo coverage studies and CSV/JSON reporting.

pub mod bellman;
pub mod bootstrap;
pub mod cmc;
pub mod counting;
pub mod covariance;
pub mod env;
pub mod error;
pub mod harness;
pub mod intervals;
pub mod reference_chain;
pub mod rng;

pub use error::{Error, Result};
