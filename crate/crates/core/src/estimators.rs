//! Weighted least-squares estimation from an observed tree.
//!
//! Writing each child pair as a linear function of its mother plus noise,
//! the mean parameters solve two weighted 2x2 normal systems sharing the
//! same design matrix `S = sum 1/(1+X_k) (X_k,1)(X_k,1)'`; the even children
//! give (a, c) and the odd children (b, d). The noise variances are
//! estimated the same way from squared residuals with the heavier weight
//! `1/(1+X_k)^2`, and the sister covariance by the plain residual
//! cross-product average. Singular design matrices are shifted by the
//! identity and the shift is recorded, never silently applied.
//!
//! All node sums run in ascending label order with compensated accumulation,
//! so incremental (generation-by-generation) and from-scratch evaluation are
//! bit-identical.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{kron2, regularize_if_singular, Mat2, Mat4};
use crate::model::DerivedMoments;
use crate::stats::KahanSum;
use crate::tree::{subtree_size, BinarTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("estimation at generation {requested} needs tree depth >= {requested}, have {depth}")]
    DepthExceeded { requested: u32, depth: u32 },
    #[error("estimation generation must be at least 1")]
    GenerationZero,
}

/// Mean-parameter estimate at one generation, with the design matrix that
/// produced it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThetaHat {
    pub a_hat: f64,
    pub c_hat: f64,
    pub b_hat: f64,
    pub d_hat: f64,
    /// Weighted design matrix over the mothers (before regularization).
    pub s: Mat2,
    /// Whether the identity shift was required to invert `s`.
    pub regularized: bool,
    pub generation: u32,
}

impl ThetaHat {
    /// Estimate vector in the fixed ordering (a, c, b, d).
    pub fn as_vec(&self) -> [f64; 4] {
        [self.a_hat, self.c_hat, self.b_hat, self.d_hat]
    }
}

/// Variance and covariance estimates at one generation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VarianceEstimates {
    /// (sigma_a^2, sigma_c^2) estimate from even-child residuals.
    pub eta: [f64; 2],
    /// (sigma_b^2, sigma_d^2) estimate from odd-child residuals.
    pub zeta: [f64; 2],
    /// Sister residual covariance estimate.
    pub rho: f64,
    /// Weighted design matrix with the squared weights.
    pub q: Mat2,
    pub regularized: bool,
    pub generation: u32,
}

/// Predictable quadratic variation of the estimation martingale, raw and
/// normalized by the mother count.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MartingaleDiagnostic {
    pub bracket: Mat4,
    pub normalized: Mat4,
}

/// Everything the `estimate` command emits for one generation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimateSet {
    pub generation: u32,
    pub node_count: u64,
    pub theta: ThetaHat,
    pub variances: VarianceEstimates,
}

fn check_generation(tree: &BinarTree, n: u32) -> Result<(), EstimatorError> {
    if n == 0 {
        return Err(EstimatorError::GenerationZero);
    }
    if n > tree.depth() {
        return Err(EstimatorError::DepthExceeded {
            requested: n,
            depth: tree.depth(),
        });
    }
    Ok(())
}

/// Accumulators for the two design matrices and the even/odd cross sums,
/// mergeable and absorbing nodes in label order.
#[derive(Debug, Clone, Default)]
struct DesignSums {
    // S entries: sum x^2/c, x/c, 1/c
    s_xx: KahanSum,
    s_x1: KahanSum,
    s_11: KahanSum,
    // Q entries: same with weight 1/c^2
    q_xx: KahanSum,
    q_x1: KahanSum,
    q_11: KahanSum,
    // cross sums against even and odd children
    even_x: KahanSum,
    even_1: KahanSum,
    odd_x: KahanSum,
    odd_1: KahanSum,
}

impl DesignSums {
    fn absorb(&mut self, x: u32, even_child: u32, odd_child: u32) {
        let x = f64::from(x);
        let weight = 1.0 / (1.0 + x);
        let sq_weight = weight * weight;
        self.s_xx.add(x * x * weight);
        self.s_x1.add(x * weight);
        self.s_11.add(weight);
        self.q_xx.add(x * x * sq_weight);
        self.q_x1.add(x * sq_weight);
        self.q_11.add(sq_weight);
        let even = f64::from(even_child);
        let odd = f64::from(odd_child);
        self.even_x.add(x * even * weight);
        self.even_1.add(even * weight);
        self.odd_x.add(x * odd * weight);
        self.odd_1.add(odd * weight);
    }

    /// Combine partial sums from a node-range partition. Exercised by the
    /// partition-invariance tests; production sweeps stay sequential per
    /// tree because replicates are the parallel axis.
    #[allow(dead_code)]
    fn merge(&mut self, other: &DesignSums) {
        self.s_xx.merge(&other.s_xx);
        self.s_x1.merge(&other.s_x1);
        self.s_11.merge(&other.s_11);
        self.q_xx.merge(&other.q_xx);
        self.q_x1.merge(&other.q_x1);
        self.q_11.merge(&other.q_11);
        self.even_x.merge(&other.even_x);
        self.even_1.merge(&other.even_1);
        self.odd_x.merge(&other.odd_x);
        self.odd_1.merge(&other.odd_1);
    }

    fn s(&self) -> Mat2 {
        Mat2::sym(self.s_xx.value(), self.s_x1.value(), self.s_11.value())
    }

    fn q(&self) -> Mat2 {
        Mat2::sym(self.q_xx.value(), self.q_x1.value(), self.q_11.value())
    }

    fn theta(&self, generation: u32) -> ThetaHat {
        let s = self.s();
        let (s_reg, regularized) = regularize_if_singular(&s);
        let s_inv = s_reg.inverse().expect("regularized matrix is invertible");
        let even = s_inv.mul_vec(&[self.even_x.value(), self.even_1.value()]);
        let odd = s_inv.mul_vec(&[self.odd_x.value(), self.odd_1.value()]);
        ThetaHat {
            a_hat: even[0],
            c_hat: even[1],
            b_hat: odd[0],
            d_hat: odd[1],
            s,
            regularized,
            generation,
        }
    }
}

fn design_sums_up_to(tree: &BinarTree, n: u32) -> DesignSums {
    let mut sums = DesignSums::default();
    for k in 1..=subtree_size(n - 1) {
        sums.absorb(tree.value(k), tree.value(2 * k), tree.value(2 * k + 1));
    }
    sums
}

/// Mean-parameter WLS estimate from all mothers up to generation n-1.
pub fn wls_theta(tree: &BinarTree, n: u32) -> Result<ThetaHat, EstimatorError> {
    check_generation(tree, n)?;
    Ok(design_sums_up_to(tree, n).theta(n))
}

/// Residual pairs (even child, odd child) for every mother up to
/// generation n-1, in label order.
pub fn residuals(
    tree: &BinarTree,
    theta: &ThetaHat,
    n: u32,
) -> Result<Vec<(f64, f64)>, EstimatorError> {
    check_generation(tree, n)?;
    let mut out = Vec::with_capacity(subtree_size(n - 1) as usize);
    for k in 1..=subtree_size(n - 1) {
        let x = f64::from(tree.value(k));
        let even = f64::from(tree.value(2 * k)) - theta.a_hat * x - theta.c_hat;
        let odd = f64::from(tree.value(2 * k + 1)) - theta.b_hat * x - theta.d_hat;
        out.push((even, odd));
    }
    Ok(out)
}

fn variance_estimates_from(
    tree: &BinarTree,
    theta: &ThetaHat,
    q: Mat2,
    n: u32,
) -> VarianceEstimates {
    let (q_reg, regularized) = regularize_if_singular(&q);
    let q_inv = q_reg.inverse().expect("regularized matrix is invertible");
    let mut even_x = KahanSum::new();
    let mut even_1 = KahanSum::new();
    let mut odd_x = KahanSum::new();
    let mut odd_1 = KahanSum::new();
    let mut cross = KahanSum::new();
    for k in 1..=subtree_size(n - 1) {
        let x = f64::from(tree.value(k));
        let weight = 1.0 / (1.0 + x);
        let sq_weight = weight * weight;
        let v_even = f64::from(tree.value(2 * k)) - theta.a_hat * x - theta.c_hat;
        let v_odd = f64::from(tree.value(2 * k + 1)) - theta.b_hat * x - theta.d_hat;
        even_x.add(v_even * v_even * x * sq_weight);
        even_1.add(v_even * v_even * sq_weight);
        odd_x.add(v_odd * v_odd * x * sq_weight);
        odd_1.add(v_odd * v_odd * sq_weight);
        cross.add(v_even * v_odd);
    }
    let eta = q_inv.mul_vec(&[even_x.value(), even_1.value()]);
    let zeta = q_inv.mul_vec(&[odd_x.value(), odd_1.value()]);
    let rho = cross.value() / subtree_size(n - 1) as f64;
    VarianceEstimates {
        eta,
        zeta,
        rho,
        q,
        regularized,
        generation: n,
    }
}

/// Variance-pair estimate (sigma_a^2, sigma_c^2) at generation n.
pub fn wls_eta(tree: &BinarTree, n: u32) -> Result<[f64; 2], EstimatorError> {
    Ok(estimate_all(tree, n)?.variances.eta)
}

/// Variance-pair estimate (sigma_b^2, sigma_d^2) at generation n.
pub fn wls_zeta(tree: &BinarTree, n: u32) -> Result<[f64; 2], EstimatorError> {
    Ok(estimate_all(tree, n)?.variances.zeta)
}

/// Sister-covariance estimate at generation n.
pub fn rho_hat(tree: &BinarTree, n: u32) -> Result<f64, EstimatorError> {
    Ok(estimate_all(tree, n)?.variances.rho)
}

/// All estimates at one generation, computed from scratch.
pub fn estimate_all(tree: &BinarTree, n: u32) -> Result<EstimateSet, EstimatorError> {
    check_generation(tree, n)?;
    let sums = design_sums_up_to(tree, n);
    let theta = sums.theta(n);
    let variances = variance_estimates_from(tree, &theta, sums.q(), n);
    Ok(EstimateSet {
        generation: n,
        node_count: subtree_size(n),
        theta,
        variances,
    })
}

/// Estimates for every generation 1..=n_max in one incremental sweep.
/// Bit-identical to calling [`estimate_all`] per generation.
pub fn sweep_estimates(tree: &BinarTree, n_max: u32) -> Result<Vec<EstimateSet>, EstimatorError> {
    check_generation(tree, n_max)?;
    let mut sums = DesignSums::default();
    let mut out = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        // absorb the mothers of generation n-1
        for k in crate::tree::generation_start(n - 1)..crate::tree::generation_start(n) {
            sums.absorb(tree.value(k), tree.value(2 * k), tree.value(2 * k + 1));
        }
        let theta = sums.theta(n);
        let variances = variance_estimates_from(tree, &theta, sums.q(), n);
        out.push(EstimateSet {
            generation: n,
            node_count: subtree_size(n),
            theta,
            variances,
        });
    }
    Ok(out)
}

/// Predictable quadratic variation of the estimation martingale through
/// generation n, evaluated at the true moments.
pub fn increasing_process(
    tree: &BinarTree,
    m: &DerivedMoments,
    n: u32,
) -> Result<MartingaleDiagnostic, EstimatorError> {
    check_generation(tree, n)?;
    let mut sums = [[KahanSum::new(); 4]; 4];
    for k in 1..=subtree_size(n - 1) {
        let x = f64::from(tree.value(k));
        let weight = 1.0 / (1.0 + x);
        let term = kron2(
            &Mat2::sym(
                m.sigma_a_sq * x + m.sigma_c_sq,
                m.rho,
                m.sigma_b_sq * x + m.sigma_d_sq,
            ),
            &Mat2::sym(x * x, x, 1.0),
        )
        .scale(weight * weight);
        for (sum_row, term_row) in sums.iter_mut().zip(term.0) {
            for (sum, value) in sum_row.iter_mut().zip(term_row) {
                sum.add(value);
            }
        }
    }
    let mut bracket = Mat4::zero();
    for (out_row, sum_row) in bracket.0.iter_mut().zip(&sums) {
        for (out, sum) in out_row.iter_mut().zip(sum_row) {
            *out = sum.value();
        }
    }
    let normalized = bracket.scale(1.0 / subtree_size(n - 1) as f64);
    Ok(MartingaleDiagnostic {
        bracket,
        normalized,
    })
}
