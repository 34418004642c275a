//! Limit objects of the asymptotic theory.
//!
//! Every covariance appearing in the central limit theorems is an
//! expectation of a fixed matrix function of the branch limit variable T.
//! The first two moments of T have closed forms; the matrix expectations do
//! not, so they are estimated two independent ways that cross-check each
//! other: Monte Carlo over draws of T, and averages of the same integrand
//! over the nodes of a deep simulated tree (tree averages of any polynomially
//! bounded function converge to the corresponding expectation in T).

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{kron2, LinalgError, Mat2, Mat4};
use crate::model::{derive_moments, DerivedMoments, ModelParams};
use crate::rng::RngStream;
use crate::stats::VecWelford;
use crate::tree::{generation_of, sample_t, BinarTree};

/// Neglected-tail mean used when sampling T by series truncation.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitsError {
    #[error(
        "{matrix} estimate is not positive definite (degenerate limit variable or too few draws)"
    )]
    NotPositiveDefinite { matrix: &'static str },
    #[error("need at least {min} draws, got {got}")]
    TooFewDraws { min: u64, got: u64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which estimation route produced a set of limit objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LimitRoute {
    MonteCarlo,
    TreeAverage,
}

/// The limit matrices and scalars, with per-entry standard errors on
/// everything estimated by averaging.
#[derive(Debug, Clone, Serialize)]
pub struct LimitObjects {
    pub route: LimitRoute,
    pub samples: u64,
    pub e_t: f64,
    pub e_t_se: f64,
    pub e_t2: f64,
    pub e_t2_se: f64,
    /// E[(1+T)^-1 (T,1)(T,1)'], the normalized design limit.
    pub a: Mat2,
    pub a_se: Mat2,
    /// E[(1+T)^-2 (T,1)(T,1)'].
    pub b: Mat2,
    pub b_se: Mat2,
    /// Limit of the normalized quadratic variation.
    pub l: Mat4,
    pub l_se: Mat4,
    pub m_ac: Mat2,
    pub m_ac_se: Mat2,
    pub m_bd: Mat2,
    pub m_bd_se: Mat2,
    /// I2 (x) A.
    pub lambda: Mat4,
    /// Asymptotic covariance of the scaled mean-parameter error.
    pub theta_cov: Mat4,
    /// Asymptotic covariance of the scaled even variance-pair error.
    pub eta_cov: Mat2,
    /// Asymptotic covariance of the scaled odd variance-pair error.
    pub zeta_cov: Mat2,
    /// Asymptotic variance of the scaled covariance-estimator error.
    pub sigma_rho_sq: f64,
    /// Limit of the running quadratic-error average.
    pub qsl_target: f64,
}

/// Closed-form E[T] = c_bar / (1 - a_bar).
pub fn mean_t(m: &DerivedMoments) -> f64 {
    m.c_bar / (1.0 - m.a_bar)
}

/// Closed-form E[T^2]; the third term carries the squared mean a_bar^2,
/// distinct from the mean of squares a_sq_bar in the second term.
pub fn second_moment_t(m: &DerivedMoments) -> f64 {
    let ab = m.a_bar;
    m.upsilon * m.c_bar / (1.0 - ab)
        + (m.c_sq_bar - m.upsilon * m.c_bar) / (1.0 - m.a_sq_bar)
        + 2.0 * ab * m.c_bar * m.c_bar / ((1.0 - ab) * (1.0 - ab * ab))
}

/// Asymptotic variance of the scaled covariance estimator.
pub fn sigma_rho_sq(m: &DerivedMoments) -> f64 {
    sigma_rho_sq_from_t_moments(m, mean_t(m), second_moment_t(m))
}

fn sigma_rho_sq_from_t_moments(m: &DerivedMoments, e_t: f64, e_t2: f64) -> f64 {
    m.sigma_a_sq * m.sigma_b_sq * e_t2
        + (m.sigma_a_sq * m.sigma_d_sq + m.sigma_b_sq * m.sigma_c_sq) * e_t
        + m.nu_sq
        - m.rho * m.rho
}

/// (T, 1)(T, 1)' scaled by (1+T)^-1.
fn a_integrand(t: f64) -> Mat2 {
    let w = 1.0 / (1.0 + t);
    Mat2::sym(t * t * w, t * w, w)
}

fn b_integrand(t: f64) -> Mat2 {
    let w = 1.0 / (1.0 + t);
    Mat2::sym(t * t * w, t * w, w).scale(w)
}

fn l_integrand(t: f64, m: &DerivedMoments) -> Mat4 {
    let w = 1.0 / (1.0 + t);
    kron2(
        &Mat2::sym(
            m.sigma_a_sq * t + m.sigma_c_sq,
            m.rho,
            m.sigma_b_sq * t + m.sigma_d_sq,
        ),
        &Mat2::sym(t * t, t, 1.0),
    )
    .scale(w * w)
}

fn m_ac_integrand(t: f64, m: &DerivedMoments) -> Mat2 {
    let w = 1.0 / (1.0 + t);
    let numerator = 2.0 * m.sigma_a_sq * m.sigma_a_sq * t * t
        + (m.mu_a4 - 3.0 * m.sigma_a_sq * m.sigma_a_sq + 4.0 * m.sigma_a_sq * m.sigma_c_sq) * t
        + m.mu_c4
        - m.sigma_c_sq * m.sigma_c_sq;
    Mat2::sym(t * t, t, 1.0).scale(numerator * w.powi(4))
}

fn m_bd_integrand(t: f64, m: &DerivedMoments) -> Mat2 {
    let w = 1.0 / (1.0 + t);
    let numerator = 2.0 * m.sigma_b_sq * m.sigma_b_sq * t * t
        + (m.mu_b4 - 3.0 * m.sigma_b_sq * m.sigma_b_sq + 4.0 * m.sigma_b_sq * m.sigma_d_sq) * t
        + m.mu_d4
        - m.sigma_d_sq * m.sigma_d_sq;
    Mat2::sym(t * t, t, 1.0).scale(numerator * w.powi(4))
}

// Flattened integrand layout: t, t^2, A(4), B(4), L(16), M_ac(4), M_bd(4).
const DIM: usize = 34;

fn integrand_vector(t: f64, m: &DerivedMoments) -> [f64; DIM] {
    let mut out = [0.0; DIM];
    out[0] = t;
    out[1] = t * t;
    let mut idx = 2;
    for mat in [a_integrand(t), b_integrand(t)] {
        for row in mat.0 {
            for v in row {
                out[idx] = v;
                idx += 1;
            }
        }
    }
    for row in l_integrand(t, m).0 {
        for v in row {
            out[idx] = v;
            idx += 1;
        }
    }
    for mat in [m_ac_integrand(t, m), m_bd_integrand(t, m)] {
        for row in mat.0 {
            for v in row {
                out[idx] = v;
                idx += 1;
            }
        }
    }
    out
}

fn mat2_from(slice: &[f64]) -> Mat2 {
    Mat2([[slice[0], slice[1]], [slice[2], slice[3]]])
}

fn mat4_from(slice: &[f64]) -> Mat4 {
    let mut m = Mat4::zero();
    for i in 0..4 {
        for j in 0..4 {
            m.0[i][j] = slice[4 * i + j];
        }
    }
    m
}

/// Asymptotic covariance of the scaled mean-parameter error,
/// (I2 (x) A^-1) L (I2 (x) A^-1).
pub fn theta_clt_cov(a: &Mat2, l: &Mat4) -> Result<Mat4, LimitsError> {
    let a_inv = kron2(&Mat2::identity(), &a.inverse()?);
    Ok(a_inv.matmul(l).matmul(&a_inv))
}

/// Limit of the running quadratic-error average,
/// tr((I2 (x) A)^-1/2 L (I2 (x) A)^-1/2).
pub fn qsl_target(a: &Mat2, l: &Mat4) -> Result<f64, LimitsError> {
    let root = kron2(&Mat2::identity(), &a.sym_pow(-0.5)?);
    Ok(root.matmul(l).matmul(&root).trace())
}

fn assemble(
    route: LimitRoute,
    acc: &VecWelford,
    m: &DerivedMoments,
    se_override: Option<Vec<f64>>,
) -> Result<LimitObjects, LimitsError> {
    let mean = acc.mean();
    let se = se_override.unwrap_or_else(|| acc.standard_errors());
    let a = mat2_from(&mean[2..6]);
    let b = mat2_from(&mean[6..10]);
    let l = mat4_from(&mean[10..26]);
    let m_ac = mat2_from(&mean[26..30]);
    let m_bd = mat2_from(&mean[30..34]);
    if !a.is_positive_definite() {
        return Err(LimitsError::NotPositiveDefinite { matrix: "A" });
    }
    if !b.is_positive_definite() {
        return Err(LimitsError::NotPositiveDefinite { matrix: "B" });
    }
    if !l.is_positive_definite() {
        return Err(LimitsError::NotPositiveDefinite { matrix: "L" });
    }
    let lambda = kron2(&Mat2::identity(), &a);
    let theta_cov = theta_clt_cov(&a, &l)?;
    let b_inv = b.inverse()?;
    let eta_cov = b_inv.matmul(&m_ac).matmul(&b_inv);
    let zeta_cov = b_inv.matmul(&m_bd).matmul(&b_inv);
    Ok(LimitObjects {
        route,
        samples: acc.count(),
        e_t: mean[0],
        e_t_se: se[0],
        e_t2: mean[1],
        e_t2_se: se[1],
        a,
        a_se: mat2_from(&se[2..6]),
        b,
        b_se: mat2_from(&se[6..10]),
        l,
        l_se: mat4_from(&se[10..26]),
        m_ac,
        m_ac_se: mat2_from(&se[26..30]),
        m_bd,
        m_bd_se: mat2_from(&se[30..34]),
        lambda,
        theta_cov,
        eta_cov,
        zeta_cov,
        sigma_rho_sq: sigma_rho_sq_from_t_moments(m, mean[0], mean[1]),
        qsl_target: qsl_target(&a, &l)?,
    })
}

/// Estimate every limit object by Monte Carlo over draws of T.
///
/// Draws are tiled into fixed chunks scanned in parallel and merged in
/// chunk order, so the result is a pure function of (seed, draws) whatever
/// the thread count.
pub fn limit_matrices_mc(
    params: &ModelParams,
    draws: u64,
    stream: RngStream,
) -> Result<LimitObjects, LimitsError> {
    const MIN_DRAWS: u64 = 10_000;
    if draws < MIN_DRAWS {
        return Err(LimitsError::TooFewDraws {
            min: MIN_DRAWS,
            got: draws,
        });
    }
    let m = derive_moments(params);
    const CHUNK: u64 = 16_384;
    let chunks = draws.div_ceil(CHUNK);
    let partials: Vec<VecWelford> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = VecWelford::new(DIM);
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(draws);
            for draw in lo..hi {
                let t = sample_t(params, DEFAULT_TAIL_TOL, stream.substream(draw));
                acc.update(&integrand_vector(f64::from(t), &m));
            }
            acc
        })
        .collect();
    let mut acc = VecWelford::new(DIM);
    for partial in &partials {
        acc.merge(partial);
    }
    assemble(LimitRoute::MonteCarlo, &acc, &m, None)
}

/// Estimate the same limit objects as node averages over a simulated tree.
///
/// The point estimate averages the integrand over every node. Standard
/// errors cannot use the i.i.d. formula (nodes within one tree are
/// correlated through shared ancestry), so nodes are grouped into the
/// subtrees rooted at one early generation and the spread of the subtree
/// means across blocks supplies the error scale.
pub fn limit_matrices_tree(
    tree: &BinarTree,
    m: &DerivedMoments,
) -> Result<LimitObjects, LimitsError> {
    let block_generation = tree.depth().min(5);
    let n_blocks = 1u64 << block_generation;
    let mut total = VecWelford::new(DIM);
    let mut blocks: Vec<VecWelford> = (0..n_blocks).map(|_| VecWelford::new(DIM)).collect();
    for (label, value) in tree.nodes() {
        let v = integrand_vector(f64::from(value), m);
        total.update(&v);
        let gen = generation_of(label);
        if gen >= block_generation {
            let ancestor = label >> (gen - block_generation);
            let block = (ancestor - n_blocks) as usize;
            blocks[block].update(&v);
        }
    }
    // standard error of the overall mean from the across-block spread of
    // the block means
    let mut se = vec![0.0; DIM];
    if n_blocks >= 2 {
        for (i, entry) in se.iter_mut().enumerate() {
            let block_means: Vec<f64> = blocks.iter().map(|b| b.mean()[i]).collect();
            let spread = crate::stats::variance(&block_means);
            *entry = (spread / n_blocks as f64).sqrt();
        }
    } else {
        se = vec![f64::NAN; DIM];
    }
    assemble(LimitRoute::TreeAverage, &total, m, Some(se))
}
