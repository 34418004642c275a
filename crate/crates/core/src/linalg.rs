//! Dense linear algebra for the fixed dimensions this crate needs: 2x2 and
//! 4x4 symmetric systems plus the Kronecker product joining them. Everything
//! is closed-form or a short fixed-size elimination; there is no general
//! solver behind these types.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative floor on determinants/pivots below which a matrix is treated as
/// singular. Scaled by the matrix infinity norm before use.
pub const SINGULARITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (|det| = {det:.3e} below conditioning floor)")]
    Singular { det: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Column vector in R^2.
pub type Vec2 = [f64; 2];
/// Column vector in R^4.
pub type Vec4 = [f64; 4];

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

/// Row-major 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Mat2 {
    pub fn zero() -> Self {
        Mat2([[0.0; 2]; 2])
    }

    pub fn identity() -> Self {
        Mat2([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    /// Symmetric matrix [[on0, off], [off, on1]].
    pub fn sym(on0: f64, off: f64, on1: f64) -> Self {
        Mat2([[on0, off], [off, on1]])
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn transpose(&self) -> Self {
        Mat2([[self.0[0][0], self.0[1][0]], [self.0[0][1], self.0[1][1]]])
    }

    pub fn inf_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Mat2) -> Self {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += other.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat2) -> Self {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] -= other.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat2) -> Self {
        let mut out = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    out.0[i][j] += self.0[i][k] * other.0[k][j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &Vec2) -> Vec2 {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    /// Whether |det| clears the conditioning floor scaled by the matrix norm.
    pub fn is_invertible(&self) -> bool {
        let norm = self.inf_norm();
        norm > 0.0 && self.det().abs() > SINGULARITY_FLOOR * norm
    }

    /// Cofactor inverse, refused below the conditioning floor.
    pub fn inverse(&self) -> Result<Mat2, LinalgError> {
        if !self.is_invertible() {
            return Err(LinalgError::Singular { det: self.det() });
        }
        let d = self.det();
        Ok(Mat2([
            [self.0[1][1] / d, -self.0[0][1] / d],
            [-self.0[1][0] / d, self.0[0][0] / d],
        ]))
    }

    pub fn solve(&self, rhs: &Vec2) -> Result<Vec2, LinalgError> {
        Ok(self.inverse()?.mul_vec(rhs))
    }

    /// Positive definiteness by leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        self.0[0][0] > 0.0 && self.det() > 0.0
    }

    /// Eigendecomposition of a symmetric 2x2: returns (eigenvalues, rotation)
    /// with columns of the rotation being the eigenvectors.
    pub fn sym_eigen(&self) -> ([f64; 2], Mat2) {
        let p = self.0[0][0];
        let q = 0.5 * (self.0[0][1] + self.0[1][0]);
        let r = self.0[1][1];
        if q.abs() <= f64::EPSILON * (p.abs() + r.abs()) {
            return ([p, r], Mat2::identity());
        }
        let half_tr = 0.5 * (p + r);
        let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        let l1 = half_tr + disc;
        let l2 = half_tr - disc;
        // Eigenvector for l1; (q, l1 - p) and (l1 - r, q) are parallel, keep
        // the better conditioned one.
        let (vx, vy) = if (l1 - p).abs() > (l1 - r).abs() {
            (q, l1 - p)
        } else {
            (l1 - r, q)
        };
        let norm = (vx * vx + vy * vy).sqrt();
        let (vx, vy) = (vx / norm, vy / norm);
        ([l1, l2], Mat2([[vx, -vy], [vy, vx]]))
    }

    /// M^exponent for a symmetric positive definite matrix, via the
    /// closed-form eigendecomposition.
    pub fn sym_pow(&self, exponent: f64) -> Result<Mat2, LinalgError> {
        let (lambda, rot) = self.sym_eigen();
        if lambda[0] <= 0.0 || lambda[1] <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let d = Mat2::diag(lambda[0].powf(exponent), lambda[1].powf(exponent));
        Ok(rot.matmul(&d).matmul(&rot.transpose()))
    }
}

impl Mat4 {
    pub fn zero() -> Self {
        Mat4([[0.0; 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Mat4::zero();
        for i in 0..4 {
            m.0[i][i] = 1.0;
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Mat4::zero();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = self.0[j][i];
            }
        }
        out
    }

    pub fn inf_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|row| row.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add(&self, other: &Mat4) -> Self {
        let mut out = *self;
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] += other.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat4) -> Self {
        let mut out = *self;
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] -= other.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat4) -> Self {
        let mut out = Mat4::zero();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += self.0[i][k] * other.0[k][j];
                }
                out.0[i][j] = acc;
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &Vec4) -> Vec4 {
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(&self.0) {
            *o = row.iter().zip(v).map(|(m, x)| m * x).sum();
        }
        out
    }

    /// v' M v.
    pub fn quadratic_form(&self, v: &Vec4) -> f64 {
        let mv = self.mul_vec(v);
        (0..4).map(|i| v[i] * mv[i]).sum()
    }

    /// Gauss-Jordan with partial pivoting; pivots below the scaled floor
    /// abort with a singularity error.
    pub fn inverse(&self) -> Result<Mat4, LinalgError> {
        let floor = SINGULARITY_FLOOR * self.inf_norm();
        let mut a = self.0;
        let mut inv = Mat4::identity().0;
        for col in 0..4 {
            let pivot_row = (col..4)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            if a[pivot_row][col].abs() <= floor {
                return Err(LinalgError::Singular {
                    det: a[pivot_row][col],
                });
            }
            a.swap(col, pivot_row);
            inv.swap(col, pivot_row);
            let pivot = a[col][col];
            for j in 0..4 {
                a[col][j] /= pivot;
                inv[col][j] /= pivot;
            }
            for i in 0..4 {
                if i != col {
                    let factor = a[i][col];
                    for j in 0..4 {
                        a[i][j] -= factor * a[col][j];
                        inv[i][j] -= factor * inv[col][j];
                    }
                }
            }
        }
        Ok(Mat4(inv))
    }

    /// Lower-triangular Cholesky factor; fails unless positive definite.
    pub fn cholesky(&self) -> Result<Mat4, LinalgError> {
        let mut l = Mat4::zero();
        for i in 0..4 {
            for j in 0..=i {
                let mut sum = self.0[i][j];
                for k in 0..j {
                    sum -= l.0[i][k] * l.0[j][k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite);
                    }
                    l.0[i][j] = sum.sqrt();
                } else {
                    l.0[i][j] = sum / l.0[j][j];
                }
            }
        }
        Ok(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }
}

/// Kronecker product of two 2x2 matrices, block layout
/// [[a11 B, a12 B], [a21 B, a22 B]].
pub fn kron2(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = Mat4::zero();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out.0[2 * i + k][2 * j + l] = a.0[i][j] * b.0[k][l];
                }
            }
        }
    }
    out
}

/// Returns the input unchanged when it clears the conditioning floor,
/// otherwise the identity-shifted matrix, with a flag recording which.
pub fn regularize_if_singular(s: &Mat2) -> (Mat2, bool) {
    if s.is_invertible() {
        (*s, false)
    } else {
        (s.add(&Mat2::identity()), true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn kron_identity() {
        assert_eq!(
            kron2(&Mat2::identity(), &Mat2::identity()),
            Mat4::identity()
        );
    }

    #[test]
    fn kron_diagonal() {
        let k = kron2(&Mat2::diag(2.0, 3.0), &Mat2::identity());
        let mut expected = Mat4::zero();
        for (i, v) in [2.0, 2.0, 3.0, 3.0].into_iter().enumerate() {
            expected.0[i][i] = v;
        }
        assert_eq!(k, expected);
    }

    #[test]
    fn kron_entry_matches_definition() {
        let a = Mat2([[1.0, 2.0], [3.0, 4.0]]);
        let b = Mat2([[5.0, 6.0], [7.0, 8.0]]);
        let k = kron2(&a, &b);
        // zero-based (2,1) is row 3, column 2 one-based: a21 * b12
        assert_eq!(k.0[2][1], 3.0 * 6.0);
        assert_eq!(k.0[2][1], 18.0);
    }

    #[test]
    fn inverse_of_identity() {
        assert_eq!(Mat2::identity().inverse().unwrap(), Mat2::identity());
    }

    #[test]
    fn inverse_known_symmetric() {
        let m = Mat2([[1.5, 0.5], [0.5, 1.5]]);
        let inv = m.inverse().unwrap();
        let expected = Mat2([[0.75, -0.25], [-0.25, 0.75]]);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(inv.0[i][j], expected.0[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn trace_of_diagonal() {
        let mut m = Mat4::zero();
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            m.0[i][i] = v;
        }
        assert_eq!(m.trace(), 10.0);
    }

    #[test]
    fn regularize_rank_one() {
        let s = Mat2([[0.5, 0.5], [0.5, 0.5]]);
        let (r, flagged) = regularize_if_singular(&s);
        assert!(flagged);
        assert_eq!(r, Mat2([[1.5, 0.5], [0.5, 1.5]]));
    }

    #[test]
    fn regularize_identity_untouched() {
        let (r, flagged) = regularize_if_singular(&Mat2::identity());
        assert!(!flagged);
        assert_eq!(r, Mat2::identity());
    }

    #[test]
    fn regularize_below_floor() {
        // det = 1e-15, well below the scaled floor
        let s = Mat2([[1.0, 1.0], [1.0, 1.0 + 1e-15]]);
        let (_, flagged) = regularize_if_singular(&s);
        assert!(flagged);
    }

    #[test]
    fn sym_pow_inverse_sqrt() {
        let m = Mat2([[2.0, 0.5], [0.5, 1.0]]);
        let half = m.sym_pow(0.5).unwrap();
        let back = half.matmul(&half);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back.0[i][j], m.0[i][j], epsilon = 1e-12);
            }
        }
        let inv_half = m.sym_pow(-0.5).unwrap();
        let should_be_identity = inv_half.matmul(&m).matmul(&inv_half);
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(should_be_identity.0[i][j], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mat4_inverse_roundtrip() {
        let m = kron2(
            &Mat2([[2.0, 0.3], [0.3, 1.0]]),
            &Mat2([[1.5, -0.2], [-0.2, 0.7]]),
        );
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv);
        let residual = prod.sub(&Mat4::identity()).inf_norm();
        assert!(residual < 1e-12, "residual {residual}");
    }

    #[test]
    fn cholesky_detects_indefinite() {
        let mut m = Mat4::identity();
        m.0[2][2] = -1.0;
        assert!(!m.is_positive_definite());
        assert!(Mat4::identity().is_positive_definite());
    }

    fn arb_mat2() -> impl Strategy<Value = Mat2> {
        proptest::array::uniform4(-10.0f64..10.0).prop_map(|v| Mat2([[v[0], v[1]], [v[2], v[3]]]))
    }

    fn arb_sym_pd2() -> impl Strategy<Value = Mat2> {
        // A'A + eps I is symmetric positive definite
        arb_mat2().prop_map(|a| a.transpose().matmul(&a).add(&Mat2::diag(0.5, 0.5)))
    }

    proptest! {
        #[test]
        fn kron_mixed_product(a in arb_mat2(), b in arb_mat2(), c in arb_mat2(), d in arb_mat2()) {
            let lhs = kron2(&a, &b).matmul(&kron2(&c, &d));
            let rhs = kron2(&a.matmul(&c), &b.matmul(&d));
            let scale = rhs.inf_norm().max(1.0);
            prop_assert!(lhs.sub(&rhs).inf_norm() <= 1e-10 * scale);
        }

        #[test]
        fn solve_recovers_vector(m in arb_sym_pd2(), v in proptest::array::uniform2(-5.0f64..5.0)) {
            let rhs = m.mul_vec(&v);
            let x = m.solve(&rhs).unwrap();
            let scale = v.iter().fold(1.0f64, |acc, &t| acc.max(t.abs()));
            prop_assert!((x[0] - v[0]).abs() <= 1e-8 * scale);
            prop_assert!((x[1] - v[1]).abs() <= 1e-8 * scale);
        }

        #[test]
        fn inverse_residual_bounded(m in arb_sym_pd2()) {
            let inv = m.inverse().unwrap();
            let residual = m.matmul(&inv).sub(&Mat2::identity()).inf_norm();
            prop_assert!(residual <= 1e-8);
        }
    }
}
