//! Simulation and weighted least-squares estimation for integer-valued
//! autoregressive processes indexed by a binary tree, together with a Monte
//! Carlo harness that verifies the estimators' asymptotic behavior
//! (consistency rates, the quadratic strong law, and central limit theorems)
//! against closed-form limit objects.
//!
//! The crate is organized along the pipeline:
//!
//! - [`model`]: parameter families, derived moments, assumption checks;
//! - [`rng`]: splittable deterministic random streams, thinning and
//!   immigration sampling;
//! - [`tree`]: tree simulation, the induced single-branch process, the limit
//!   variable, and CSV interchange;
//! - [`linalg`]: fixed-size 2x2/4x4 kernels and the Kronecker product;
//! - [`estimators`]: the weighted least-squares estimators and the
//!   martingale diagnostic;
//! - [`limits`]: limit matrices by Monte Carlo and by tree averaging;
//! - [`experiments`]: replicated verification checks and report emission.

pub mod estimators;
pub mod experiments;
pub mod limits;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tree;

pub use estimators::{
    estimate_all, increasing_process, residuals, rho_hat, sweep_estimates, wls_eta, wls_theta,
    wls_zeta, EstimateSet, MartingaleDiagnostic, ThetaHat, VarianceEstimates,
};
pub use experiments::{
    clt_check, qsl_check, rate_check, run_replicates, run_verify, variance_consistency_check,
    CheckKind, CltKind, ExperimentConfig, ReplicateTrajectory, Tolerances, VerifyReport,
};
pub use limits::{
    limit_matrices_mc, limit_matrices_tree, mean_t, qsl_target, second_moment_t, sigma_rho_sq,
    theta_clt_cov, LimitObjects,
};
pub use linalg::{kron2, regularize_if_singular, Mat2, Mat4, Vec2, Vec4};
pub use model::{
    derive_moments, validate_hypotheses, DerivedMoments, HypothesisReport, ImmigrationSpec,
    ModelParams, OffspringFamily,
};
pub use rng::{sample_immigration_pair, thin, RngStream};
pub use tree::{sample_t, simulate_branch, simulate_tree, BinarTree, BranchPath};
