//! Policy gradients for factorized stochastic policies with action-dependent
//! baselines.
//!
//! When a policy factorizes as `π(a|s) = ∏ π(aⁱ|s, a^{f(i)})`, each factor's
//! score can be paired with its own baseline `bᵢ`, which may depend on the
//! state and on every factor that `aⁱ` does not influence. The crate provides:
//!
//! - [`env`]: episodic environments, including the single-state target
//!   matching task and enumerable tabular MDPs.
//! - [`policy`]: factored Gaussian / categorical policies with per-factor
//!   scores on disjoint parameter blocks, independent or DAG-structured.
//! - [`features`]: random Fourier features and closed-form ridge regression.
//! - [`baselines`]: state-value, optimal state, marginalized-Q, optimal
//!   action-dependent and per-factor DAG baselines.
//! - [`estimator`]: returns-to-go, advantages (Monte Carlo and GAE), gradient
//!   estimates and variance diagnostics.
//! - [`optimizer`]: Fisher-vector products, natural gradient steps and the
//!   training loop.
//! - [`oracle`]: exact enumeration of small problems for ground truth.
//! - [`harness`]: experiment configs, run directories, solve-time tables and
//!   λ sweeps.

pub mod baselines;
pub mod env;
pub mod error;
pub mod estimator;
pub mod features;
pub mod harness;
pub mod optimizer;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};

pub use baselines::{BaselineKind, FactorBaseline};
pub use env::{Environment, MdpSpec, Step, Trajectory};
pub use estimator::{Batch, GradientReport};
pub use policy::FactoredPolicy;
