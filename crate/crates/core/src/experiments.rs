//! Monte Carlo harness checking the asymptotic claims at desk scale:
//! error-rate boundedness for the mean estimator, the quadratic strong law,
//! variance/covariance estimator consistency, and the central limit theorems
//! against their limit covariances.
//!
//! Replicates are embarrassingly parallel; each replicate owns a seed-derived
//! stream and results are collected in replicate order, so the whole report
//! is a pure function of the configuration whatever the thread count.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{sweep_estimates, EstimatorError};
use crate::limits::{LimitObjects, LimitsError};
use crate::linalg::Mat2;
use crate::model::{
    derive_moments, validate_hypotheses, DerivedMoments, HypothesisReport, ModelParams,
};
use crate::rng::RngStream;
use crate::stats::{
    ks_test_standard_normal, median, relative_frobenius, sample_covariance, KsResult,
};
use crate::tree::{simulate_tree, subtree_size, TreeError, MAX_DEPTH};

/// Stream-id namespaces under the master seed.
pub mod stream_domain {
    /// Replicate trees: substream(REPLICATES).substream(replicate index).
    pub const REPLICATES: u64 = 1;
    /// Limit-object Monte Carlo draws.
    pub const LIMITS: u64 = 2;
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(
        "generation range must satisfy 1 <= n_min <= n_max <= {MAX_DEPTH}, got {n_min}..{n_max}"
    )]
    BadGenerationRange { n_min: u32, n_max: u32 },
    #[error("need at least {min} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        min: u64,
        got: u64,
    },
    #[error("quadratic-error averages were not accumulated (no design limit supplied)")]
    MissingQslAverages,
    #[error("theoretical covariance is singular")]
    SingularTheory,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Limits(#[from] LimitsError),
}

/// Statistical pass thresholds. Defaults were calibrated over repeated
/// master seeds to keep false failures rare; they live in configuration so
/// a run can tighten or relax them explicitly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Rate statistic at the last generation may exceed the early-range
    /// median by at most this factor.
    pub rate_factor: f64,
    /// Sup-norm error threshold at the last generation...
    pub sup_error_threshold: f64,
    /// ...and the fraction of replicates that must meet it.
    pub sup_error_fraction: f64,
    /// Relative tolerance on the quadratic-strong-law running average.
    pub qsl_rel_tol: f64,
    /// Relative Frobenius tolerance between empirical and theoretical CLT
    /// covariances (vector estimators).
    pub clt_frobenius_tol: f64,
    /// Relative tolerance on the scalar covariance-estimator variance.
    pub rho_var_rel_tol: f64,
    /// Significance level for the per-component normality tests.
    pub ks_alpha: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rate_factor: 3.0,
            sup_error_threshold: 0.1,
            sup_error_fraction: 0.9,
            qsl_rel_tol: 0.25,
            clt_frobenius_tol: 0.15,
            rho_var_rel_tol: 0.20,
            ks_alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Rate,
    Variance,
    Qsl,
    Clt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    /// First generation entering the check statistics.
    pub n_min: u32,
    /// Deepest generation simulated and estimated.
    pub n_max: u32,
    pub replicates: u32,
    pub seed: u64,
    pub checks: Vec<CheckKind>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Draws for the limit-object Monte Carlo backing qsl/clt checks.
    #[serde(default = "default_limit_draws")]
    pub limit_draws: u64,
}

fn default_limit_draws() -> u64 {
    1_000_000
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(1 <= self.n_min && self.n_min <= self.n_max && self.n_max <= MAX_DEPTH) {
            return Err(ExperimentError::BadGenerationRange {
                n_min: self.n_min,
                n_max: self.n_max,
            });
        }
        if self.replicates == 0 {
            return Err(ExperimentError::InsufficientData {
                what: "replicates",
                min: 1,
                got: 0,
            });
        }
        Ok(())
    }
}

/// Estimates and error statistics for one replicate at one generation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GenerationRecord {
    pub n: u32,
    pub theta: [f64; 4],
    pub eta: [f64; 2],
    pub zeta: [f64; 2],
    pub rho: f64,
    pub s_regularized: bool,
    pub q_regularized: bool,
    pub theta_err_sq: f64,
    pub theta_err_sup: f64,
    pub eta_err_sq: f64,
    pub zeta_err_sq: f64,
    pub rho_err_sq: f64,
    /// Running average (1/n) sum_k |T_{k-1}| err_k' Lambda err_k; NaN when
    /// no design limit was supplied.
    pub qsl_avg: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateTrajectory {
    pub replicate: u32,
    /// One record per generation 1..=n_max.
    pub records: Vec<GenerationRecord>,
}

impl ReplicateTrajectory {
    pub fn at(&self, n: u32) -> &GenerationRecord {
        &self.records[(n - 1) as usize]
    }
}

/// Simulate and estimate all replicates. When the design limit `A` is given,
/// the quadratic-error running averages are accumulated along the way.
pub fn run_replicates(
    config: &ExperimentConfig,
    lambda_a: Option<&Mat2>,
) -> Result<Vec<ReplicateTrajectory>, ExperimentError> {
    config.validate()?;
    let truth = derive_moments(&config.params);
    let lambda = lambda_a.map(|a| crate::linalg::kron2(&Mat2::identity(), a));
    let root = RngStream::new(config.seed).substream(stream_domain::REPLICATES);
    (0..config.replicates)
        .into_par_iter()
        .map(|replicate| {
            let stream = root.substream(u64::from(replicate));
            let tree = simulate_tree(&config.params, config.n_max, stream)?;
            let estimates = sweep_estimates(&tree, config.n_max)?;
            let mut records = Vec::with_capacity(estimates.len());
            let mut qsl_sum = 0.0;
            for set in &estimates {
                let n = set.generation;
                let theta = set.theta.as_vec();
                let err: [f64; 4] = std::array::from_fn(|i| theta[i] - truth.theta()[i]);
                let theta_err_sq: f64 = err.iter().map(|e| e * e).sum();
                let theta_err_sup = err.iter().fold(0.0f64, |m, e| m.max(e.abs()));
                let eta_err_sq: f64 = set
                    .variances
                    .eta
                    .iter()
                    .zip(truth.eta())
                    .map(|(e, t)| (e - t) * (e - t))
                    .sum();
                let zeta_err_sq: f64 = set
                    .variances
                    .zeta
                    .iter()
                    .zip(truth.zeta())
                    .map(|(e, t)| (e - t) * (e - t))
                    .sum();
                let rho_err_sq = (set.variances.rho - truth.rho).powi(2);
                let qsl_avg = match &lambda {
                    Some(lambda) => {
                        qsl_sum += subtree_size(n - 1) as f64 * lambda.quadratic_form(&err);
                        qsl_sum / f64::from(n)
                    }
                    None => f64::NAN,
                };
                records.push(GenerationRecord {
                    n,
                    theta,
                    eta: set.variances.eta,
                    zeta: set.variances.zeta,
                    rho: set.variances.rho,
                    s_regularized: set.theta.regularized,
                    q_regularized: set.variances.regularized,
                    theta_err_sq,
                    theta_err_sup,
                    eta_err_sq,
                    zeta_err_sq,
                    rho_err_sq,
                    qsl_avg,
                });
            }
            Ok(ReplicateTrajectory { replicate, records })
        })
        .collect()
}

/// One boundedness verdict: the normalized statistic at the last generation
/// against its median over the first half of the generation range.
#[derive(Debug, Clone, Serialize)]
pub struct BoundednessReport {
    pub label: &'static str,
    pub end_median: f64,
    pub baseline_median: f64,
    pub bound_factor: f64,
    pub passed: bool,
}

fn boundedness(
    trajectories: &[ReplicateTrajectory],
    n_min: u32,
    n_max: u32,
    bound_factor: f64,
    label: &'static str,
    err_sq: impl Fn(&GenerationRecord) -> f64,
) -> BoundednessReport {
    let normalized = |record: &GenerationRecord| {
        err_sq(record) * subtree_size(record.n - 1) as f64 / f64::from(record.n)
    };
    let end: Vec<f64> = trajectories
        .iter()
        .map(|t| normalized(t.at(n_max)))
        .collect();
    let baseline_top = n_min + (n_max - n_min) / 2;
    let baseline: Vec<f64> = trajectories
        .iter()
        .flat_map(|t| (n_min..=baseline_top).map(|n| normalized(t.at(n))))
        .collect();
    let end_median = median(&end);
    let baseline_median = median(&baseline);
    BoundednessReport {
        label,
        end_median,
        baseline_median,
        bound_factor,
        passed: end_median <= bound_factor * baseline_median,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub bounded: BoundednessReport,
    /// Fraction of replicates whose sup-norm error at the last generation is
    /// below the threshold.
    pub sup_fraction: f64,
    pub sup_threshold: f64,
    pub sup_fraction_required: f64,
    pub passed: bool,
}

/// Consistency-rate check for the mean estimator: the squared error scaled
/// by node count over generation stays bounded, and the sup-norm error is
/// small in most replicates.
pub fn rate_check(
    trajectories: &[ReplicateTrajectory],
    config: &ExperimentConfig,
) -> Result<RateReport, ExperimentError> {
    require_rate_data(trajectories, config)?;
    let bounded = boundedness(
        trajectories,
        config.n_min,
        config.n_max,
        config.tolerances.rate_factor,
        "theta",
        |r| r.theta_err_sq,
    );
    let below = trajectories
        .iter()
        .filter(|t| t.at(config.n_max).theta_err_sup < config.tolerances.sup_error_threshold)
        .count();
    let sup_fraction = below as f64 / trajectories.len() as f64;
    let sup_passed = sup_fraction >= config.tolerances.sup_error_fraction;
    Ok(RateReport {
        passed: bounded.passed && sup_passed,
        bounded,
        sup_fraction,
        sup_threshold: config.tolerances.sup_error_threshold,
        sup_fraction_required: config.tolerances.sup_error_fraction,
    })
}

fn require_rate_data(
    trajectories: &[ReplicateTrajectory],
    config: &ExperimentConfig,
) -> Result<(), ExperimentError> {
    if trajectories.len() < 50 {
        return Err(ExperimentError::InsufficientData {
            what: "replicates",
            min: 50,
            got: trajectories.len() as u64,
        });
    }
    if config.n_max - config.n_min + 1 < 5 {
        return Err(ExperimentError::InsufficientData {
            what: "generations",
            min: 5,
            got: u64::from(config.n_max - config.n_min + 1),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub eta: BoundednessReport,
    pub zeta: BoundednessReport,
    pub rho: BoundednessReport,
    pub passed: bool,
}

/// Same boundedness scheme applied to the variance and covariance
/// estimators.
pub fn variance_consistency_check(
    trajectories: &[ReplicateTrajectory],
    config: &ExperimentConfig,
) -> Result<VarianceReport, ExperimentError> {
    require_rate_data(trajectories, config)?;
    let factor = config.tolerances.rate_factor;
    let eta = boundedness(
        trajectories,
        config.n_min,
        config.n_max,
        factor,
        "eta",
        |r| r.eta_err_sq,
    );
    let zeta = boundedness(
        trajectories,
        config.n_min,
        config.n_max,
        factor,
        "zeta",
        |r| r.zeta_err_sq,
    );
    let rho = boundedness(
        trajectories,
        config.n_min,
        config.n_max,
        factor,
        "rho",
        |r| r.rho_err_sq,
    );
    Ok(VarianceReport {
        passed: eta.passed && zeta.passed && rho.passed,
        eta,
        zeta,
        rho,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QslReport {
    pub target: f64,
    pub median_running_avg: f64,
    pub relative_error: f64,
    pub rel_tol: f64,
    pub passed: bool,
}

/// Quadratic strong law: the cross-replicate median of the running average
/// at the last generation against its limit trace.
pub fn qsl_check(
    trajectories: &[ReplicateTrajectory],
    objs: &LimitObjects,
    config: &ExperimentConfig,
) -> Result<QslReport, ExperimentError> {
    if !objs.lambda.is_positive_definite() {
        return Err(ExperimentError::Limits(LimitsError::NotPositiveDefinite {
            matrix: "Lambda",
        }));
    }
    let finals: Vec<f64> = trajectories
        .iter()
        .map(|t| t.at(config.n_max).qsl_avg)
        .collect();
    if finals.iter().any(|v| v.is_nan()) {
        return Err(ExperimentError::MissingQslAverages);
    }
    let median_running_avg = median(&finals);
    let relative_error = (median_running_avg - objs.qsl_target).abs() / objs.qsl_target;
    Ok(QslReport {
        target: objs.qsl_target,
        median_running_avg,
        relative_error,
        rel_tol: config.tolerances.qsl_rel_tol,
        passed: relative_error <= config.tolerances.qsl_rel_tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CltKind {
    Theta,
    Eta,
    Zeta,
    Rho,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub kind: CltKind,
    pub empirical_cov: Vec<Vec<f64>>,
    pub theoretical_cov: Vec<Vec<f64>>,
    pub relative_frobenius: f64,
    pub frobenius_tol: f64,
    pub ks: Vec<KsResult>,
    pub ks_alpha: f64,
    pub passed: bool,
}

/// Compare scaled estimator errors across replicates with the theoretical
/// limit covariance: relative Frobenius distance of the empirical covariance
/// plus a normality test per standardized component.
pub fn clt_check(
    samples: &[Vec<f64>],
    sigma_theory: &[Vec<f64>],
    kind: CltKind,
    tolerances: &Tolerances,
) -> Result<CltReport, ExperimentError> {
    if samples.len() < 500 {
        return Err(ExperimentError::InsufficientData {
            what: "replicate endpoint samples",
            min: 500,
            got: samples.len() as u64,
        });
    }
    let dim = sigma_theory.len();
    for (i, row) in sigma_theory.iter().enumerate() {
        if row.len() != dim || !row[i].is_finite() || row[i] <= 0.0 {
            return Err(ExperimentError::SingularTheory);
        }
    }
    let empirical = sample_covariance(samples);
    let relative = relative_frobenius(&empirical, sigma_theory);
    let frobenius_tol = if dim == 1 {
        tolerances.rho_var_rel_tol
    } else {
        tolerances.clt_frobenius_tol
    };
    let mut ks = Vec::with_capacity(dim);
    for component in 0..dim {
        let scale = sigma_theory[component][component].sqrt();
        let standardized: Vec<f64> = samples.iter().map(|s| s[component] / scale).collect();
        ks.push(ks_test_standard_normal(&standardized));
    }
    let ks_ok = ks.iter().all(|k| k.p_value > tolerances.ks_alpha);
    Ok(CltReport {
        kind,
        empirical_cov: empirical,
        theoretical_cov: sigma_theory.to_vec(),
        relative_frobenius: relative,
        frobenius_tol,
        ks,
        ks_alpha: tolerances.ks_alpha,
        passed: relative <= frobenius_tol && ks_ok,
    })
}

/// Scaled endpoint errors sqrt(|T_{n-1}|) (estimate - truth) for one
/// estimator kind, one row per replicate.
pub fn scaled_endpoint_errors(
    trajectories: &[ReplicateTrajectory],
    n: u32,
    truth: &DerivedMoments,
    kind: CltKind,
) -> Vec<Vec<f64>> {
    let scale = (subtree_size(n - 1) as f64).sqrt();
    trajectories
        .iter()
        .map(|t| {
            let r = t.at(n);
            match kind {
                CltKind::Theta => r
                    .theta
                    .iter()
                    .zip(truth.theta())
                    .map(|(e, t)| scale * (e - t))
                    .collect(),
                CltKind::Eta => r
                    .eta
                    .iter()
                    .zip(truth.eta())
                    .map(|(e, t)| scale * (e - t))
                    .collect(),
                CltKind::Zeta => r
                    .zeta
                    .iter()
                    .zip(truth.zeta())
                    .map(|(e, t)| scale * (e - t))
                    .collect(),
                CltKind::Rho => vec![scale * (r.rho - truth.rho)],
            }
        })
        .collect()
}

fn mat2_rows(m: &Mat2) -> Vec<Vec<f64>> {
    m.0.iter().map(|r| r.to_vec()).collect()
}

fn mat4_rows(m: &crate::linalg::Mat4) -> Vec<Vec<f64>> {
    m.0.iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CltSummary {
    pub theta: CltReport,
    pub eta: CltReport,
    pub zeta: CltReport,
    pub rho: CltReport,
    pub passed: bool,
}

/// Full verification report emitted by the `verify` command.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub n_min: u32,
    pub n_max: u32,
    pub replicates: u32,
    pub hypotheses: HypothesisReport,
    pub limits: Option<LimitObjects>,
    pub rate: Option<RateReport>,
    pub variance: Option<VarianceReport>,
    pub qsl: Option<QslReport>,
    pub clt: Option<CltSummary>,
    /// Conjunction of every check that ran.
    pub passed: bool,
}

/// Run the configured checks end to end. Limit objects are only estimated
/// when a check needs them; with an empty check list nothing is simulated.
pub fn run_verify(
    config: &ExperimentConfig,
) -> Result<(VerifyReport, Vec<ReplicateTrajectory>), ExperimentError> {
    config.validate()?;
    let truth = derive_moments(&config.params);
    let hypotheses = validate_hypotheses(&truth);
    let needs_limits = config
        .checks
        .iter()
        .any(|c| matches!(c, CheckKind::Qsl | CheckKind::Clt));
    let limits = if needs_limits {
        Some(crate::limits::limit_matrices_mc(
            &config.params,
            config.limit_draws,
            RngStream::new(config.seed).substream(stream_domain::LIMITS),
        )?)
    } else {
        None
    };
    let trajectories = if config.checks.is_empty() {
        Vec::new()
    } else {
        run_replicates(config, limits.as_ref().map(|l| &l.a))?
    };

    let mut passed = true;
    let mut rate = None;
    let mut variance = None;
    let mut qsl = None;
    let mut clt = None;
    for check in &config.checks {
        match check {
            CheckKind::Rate => {
                let report = rate_check(&trajectories, config)?;
                passed &= report.passed;
                rate = Some(report);
            }
            CheckKind::Variance => {
                let report = variance_consistency_check(&trajectories, config)?;
                passed &= report.passed;
                variance = Some(report);
            }
            CheckKind::Qsl => {
                let objs = limits.as_ref().expect("limits computed above");
                let report = qsl_check(&trajectories, objs, config)?;
                passed &= report.passed;
                qsl = Some(report);
            }
            CheckKind::Clt => {
                let objs = limits.as_ref().expect("limits computed above");
                let n = config.n_max;
                let theta = clt_check(
                    &scaled_endpoint_errors(&trajectories, n, &truth, CltKind::Theta),
                    &mat4_rows(&objs.theta_cov),
                    CltKind::Theta,
                    &config.tolerances,
                )?;
                let eta = clt_check(
                    &scaled_endpoint_errors(&trajectories, n, &truth, CltKind::Eta),
                    &mat2_rows(&objs.eta_cov),
                    CltKind::Eta,
                    &config.tolerances,
                )?;
                let zeta = clt_check(
                    &scaled_endpoint_errors(&trajectories, n, &truth, CltKind::Zeta),
                    &mat2_rows(&objs.zeta_cov),
                    CltKind::Zeta,
                    &config.tolerances,
                )?;
                let rho = clt_check(
                    &scaled_endpoint_errors(&trajectories, n, &truth, CltKind::Rho),
                    &[vec![crate::limits::sigma_rho_sq(&truth)]],
                    CltKind::Rho,
                    &config.tolerances,
                )?;
                let summary_passed = theta.passed && eta.passed && zeta.passed && rho.passed;
                passed &= summary_passed;
                clt = Some(CltSummary {
                    theta,
                    eta,
                    zeta,
                    rho,
                    passed: summary_passed,
                });
            }
        }
    }
    Ok((
        VerifyReport {
            seed: config.seed,
            n_min: config.n_min,
            n_max: config.n_max,
            replicates: config.replicates,
            hypotheses,
            limits,
            rate,
            variance,
            qsl,
            clt,
            passed,
        },
        trajectories,
    ))
}

/// Flat per-replicate trajectory table: `replicate,n,stat,value` rows,
/// suitable for external plotting.
pub fn write_trajectories_csv<W: Write>(
    trajectories: &[ReplicateTrajectory],
    mut w: W,
) -> io::Result<()> {
    w.write_all(b"replicate,n,stat,value\n")?;
    for t in trajectories {
        for r in &t.records {
            let stats: [(&str, f64); 15] = [
                ("a_hat", r.theta[0]),
                ("c_hat", r.theta[1]),
                ("b_hat", r.theta[2]),
                ("d_hat", r.theta[3]),
                ("sigma_a_sq_hat", r.eta[0]),
                ("sigma_c_sq_hat", r.eta[1]),
                ("sigma_b_sq_hat", r.zeta[0]),
                ("sigma_d_sq_hat", r.zeta[1]),
                ("rho_hat", r.rho),
                ("theta_err_sq", r.theta_err_sq),
                ("theta_err_sup", r.theta_err_sup),
                ("eta_err_sq", r.eta_err_sq),
                ("zeta_err_sq", r.zeta_err_sq),
                ("rho_err_sq", r.rho_err_sq),
                ("qsl_avg", r.qsl_avg),
            ];
            for (name, value) in stats {
                writeln!(w, "{},{},{},{}", t.replicate, r.n, name, value)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat4;
    use crate::model::{ImmigrationSpec, OffspringFamily};

    fn p1() -> ModelParams {
        ModelParams::new(
            OffspringFamily::bernoulli(0.5).unwrap(),
            OffspringFamily::bernoulli(0.5).unwrap(),
            ImmigrationSpec::new(0.3, 0.7, 0.7).unwrap(),
            1,
        )
        .unwrap()
    }

    fn small_config(checks: Vec<CheckKind>) -> ExperimentConfig {
        ExperimentConfig {
            params: p1(),
            n_min: 2,
            n_max: 6,
            replicates: 60,
            seed: 42,
            checks,
            tolerances: Tolerances::default(),
            limit_draws: 20_000,
        }
    }

    /// Trajectories whose squared errors follow a prescribed profile.
    fn synthetic_trajectories(
        replicates: u32,
        n_max: u32,
        err_sq: impl Fn(u32) -> f64,
    ) -> Vec<ReplicateTrajectory> {
        (0..replicates)
            .map(|replicate| ReplicateTrajectory {
                replicate,
                records: (1..=n_max)
                    .map(|n| {
                        let e = err_sq(n);
                        GenerationRecord {
                            n,
                            theta: [0.0; 4],
                            eta: [0.0; 2],
                            zeta: [0.0; 2],
                            rho: 0.0,
                            s_regularized: false,
                            q_regularized: false,
                            theta_err_sq: e,
                            theta_err_sup: e.sqrt(),
                            eta_err_sq: e,
                            zeta_err_sq: e,
                            rho_err_sq: e,
                            qsl_avg: 0.0,
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn replicates_deterministic_and_repeatable() {
        let config = ExperimentConfig {
            replicates: 1,
            n_max: 3,
            n_min: 1,
            ..small_config(vec![])
        };
        let a = run_replicates(&config, None).unwrap();
        let b = run_replicates(&config, None).unwrap();
        assert_eq!(a.len(), 1);
        for (ra, rb) in a[0].records.iter().zip(&b[0].records) {
            assert_eq!(ra.theta, rb.theta);
            assert_eq!(ra.eta, rb.eta);
            assert_eq!(ra.rho, rb.rho);
        }
    }

    #[test]
    fn qsl_running_average_finite_and_nonnegative() {
        let config = ExperimentConfig {
            replicates: 5,
            n_min: 1,
            n_max: 6,
            ..small_config(vec![])
        };
        let a = Mat2::sym(1.4, 0.6, 0.45);
        let trajs = run_replicates(&config, Some(&a)).unwrap();
        for t in &trajs {
            for r in &t.records {
                assert!(
                    r.qsl_avg.is_finite() && r.qsl_avg >= 0.0,
                    "n={} {:?}",
                    r.n,
                    r.qsl_avg
                );
            }
        }
    }

    #[test]
    fn rate_check_accepts_exact_rate_profile() {
        let config = small_config(vec![]);
        // errors exactly n / |T_{n-1}|: normalized statistic identically 1
        let trajs = synthetic_trajectories(60, 6, |n| f64::from(n) / subtree_size(n - 1) as f64);
        let report = rate_check(&trajs, &config).unwrap();
        assert!(report.bounded.passed);
        assert!((report.bounded.end_median - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_check_rejects_slow_decay() {
        let config = ExperimentConfig {
            n_min: 2,
            n_max: 10,
            ..small_config(vec![])
        };
        // errors ~ 1/n shrink far too slowly against the node count
        let trajs = synthetic_trajectories(60, 10, |n| 1.0 / f64::from(n));
        let report = rate_check(&trajs, &config).unwrap();
        assert!(!report.bounded.passed);
    }

    #[test]
    fn rate_check_requires_enough_data() {
        let config = small_config(vec![]);
        let trajs = synthetic_trajectories(10, 6, |_| 1.0);
        assert!(matches!(
            rate_check(&trajs, &config),
            Err(ExperimentError::InsufficientData { .. })
        ));
    }

    #[test]
    fn qsl_zero_error_trajectories_fail() {
        let config = small_config(vec![]);
        let objs = crate::limits::limit_matrices_mc(&p1(), 20_000, RngStream::new(3)).unwrap();
        let trajs = synthetic_trajectories(60, 6, |_| 0.0);
        let report = qsl_check(&trajs, &objs, &config).unwrap();
        assert!(!report.passed);
        assert!((report.relative_error - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clt_positive_control() {
        // samples drawn from the exact theoretical normal must pass
        let sigma = kron_cov();
        let chol = sigma.cholesky().unwrap();
        let mut rng = RngStream::new(99).rng();
        let samples: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let z: [f64; 4] = std::array::from_fn(|_| standard_normal(&mut rng));
                chol.mul_vec(&z).to_vec()
            })
            .collect();
        let theory = mat4_rows(&sigma);
        let report = clt_check(&samples, &theory, CltKind::Theta, &Tolerances::default()).unwrap();
        assert!(report.passed, "frob {}", report.relative_frobenius);
        assert!(report.relative_frobenius < 0.1);
        for k in &report.ks {
            assert!(k.p_value > 0.01);
        }
    }

    #[test]
    fn clt_negative_control() {
        let sigma = kron_cov();
        let samples: Vec<Vec<f64>> = (0..2000).map(|_| vec![0.0; 4]).collect();
        let theory = mat4_rows(&sigma);
        let report = clt_check(&samples, &theory, CltKind::Theta, &Tolerances::default()).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn clt_requires_enough_samples() {
        let theory = vec![vec![1.0]];
        let samples: Vec<Vec<f64>> = (0..100).map(|_| vec![0.0]).collect();
        assert!(matches!(
            clt_check(&samples, &theory, CltKind::Rho, &Tolerances::default()),
            Err(ExperimentError::InsufficientData { .. })
        ));
    }

    #[test]
    fn clt_rejects_singular_theory() {
        let theory = vec![vec![0.0]];
        let samples: Vec<Vec<f64>> = (0..600).map(|_| vec![1.0]).collect();
        assert!(matches!(
            clt_check(&samples, &theory, CltKind::Rho, &Tolerances::default()),
            Err(ExperimentError::SingularTheory)
        ));
    }

    #[test]
    fn empty_check_list_is_empty_report() {
        let config = small_config(vec![]);
        let (report, trajectories) = run_verify(&config).unwrap();
        assert!(report.passed);
        assert!(report.rate.is_none());
        assert!(report.qsl.is_none());
        assert!(report.clt.is_none());
        assert!(report.limits.is_none());
        assert!(trajectories.is_empty());
    }

    #[test]
    fn trajectory_csv_shape() {
        let config = ExperimentConfig {
            replicates: 2,
            n_max: 3,
            n_min: 1,
            ..small_config(vec![])
        };
        let trajs = run_replicates(&config, None).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&trajs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("replicate,n,stat,value"));
        // 2 replicates x 3 generations x 15 stats
        assert_eq!(lines.count(), 2 * 3 * 15);
    }

    fn kron_cov() -> Mat4 {
        crate::linalg::kron2(&Mat2::sym(1.0, 0.3, 0.8), &Mat2::sym(1.2, -0.2, 0.5))
    }

    fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
        // Box-Muller is plenty for test fixtures
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
