//! Privacy accounting for iterative Gaussian mechanisms.
//!
//! Two accountants share one machinery. The moments accountant charges each
//! step the worst-case cost implied by a clip bound. The Bayesian accountant
//! charges a high-probability upper bound on the expected cost over the
//! observed data distribution, estimated from sampled neighbour distances.
//! Both accumulate per-order log-moments and convert to `(ε, δ)` by a
//! Chernoff bound.

pub mod accountant;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod mechanisms;
pub mod numerics;
pub mod pipeline;
pub mod simulator;

pub use accountant::{attack_success_probability, default_lambda_grid, Ledger, Mode, PrivacyReport};
pub use error::{Error, Result};
pub use estimator::{bernoulli_mean_upper, estimate_privacy_cost, EstimatorConfig, MomentSampleBatch};
pub use mechanisms::{log_moment_subsampled, ma_privacy_cost, DirectionalMoment, MechanismConfig};
pub use pipeline::{joint_reports, DualAccountant};
pub use simulator::{run_simulation, PrivacyTrace, SimulationPlan};
