//! Dense multivariate-Gaussian kernels: Cholesky factorization, sampling,
//! log-densities, KL divergence, and Schur-complement conditioning.
//!
//! All densities are mean-zero (data are centered before analysis). Inputs go
//! through [`SymmetricMatrix`], which checks symmetry on construction;
//! positive-definiteness is checked where a factorization is required.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng::Stream;

pub const LN_2PI: f64 = 1.8378770664093454;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("matrix is not symmetric: |m[{i},{j}] - m[{j},{i}]| = {diff:.3e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A square matrix validated to be symmetric within `1e-12` relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    m: DMatrix<f64>,
}

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, GaussError> {
        assert_eq!(m.nrows(), m.ncols(), "symmetric matrix must be square");
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                let diff = (m[(i, j)] - m[(j, i)]).abs();
                if diff > 1e-12 * m[(i, j)].abs().max(1.0) {
                    return Err(GaussError::NotSymmetric { i, j, diff });
                }
            }
        }
        Ok(Self { m })
    }

    /// Wraps a matrix that is symmetric by construction.
    pub fn new_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self { m }
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        Self { m: DMatrix::from_diagonal(diag) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// The leading `d × d` principal block.
    pub fn leading_block(&self, d: usize) -> SymmetricMatrix {
        Self { m: self.m.view((0, 0), (d, d)).into_owned() }
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`.
///
/// A pivot at or below `dim · 1e-14 · max_diagonal` fails the factorization;
/// the threshold is scale-relative so well-conditioned small matrices are not
/// rejected spuriously.
pub fn cholesky(m: &SymmetricMatrix) -> Result<DMatrix<f64>, GaussError> {
    let d = m.dim();
    let a = m.as_matrix();
    let max_diag = (0..d).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    let threshold = d as f64 * 1e-14 * max_diag;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= threshold {
            return Err(GaussError::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` in place for lower-triangular `L` with positive diagonal.
pub fn solve_lower_inplace(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let ok = l.solve_lower_triangular_mut(b);
    debug_assert!(ok, "triangular solve on factor with positive diagonal");
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L` with positive diagonal.
pub fn solve_lower_transpose_inplace(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let ok = l.tr_solve_lower_triangular_mut(b);
    debug_assert!(ok, "triangular solve on factor with positive diagonal");
}

/// Log-determinant from a Cholesky factor.
pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// One draw from `N(mean, cov)`: `mean + L z` with `z` standard normal.
///
/// Deterministic for a given stream state on a given platform.
pub fn mvn_sample(
    mean: &DVector<f64>,
    cov: &SymmetricMatrix,
    rng: &mut Stream,
) -> Result<DVector<f64>, GaussError> {
    if mean.len() != cov.dim() {
        return Err(GaussError::DimensionMismatch { expected: cov.dim(), got: mean.len() });
    }
    let l = cholesky(cov)?;
    let z = DVector::from_fn(cov.dim(), |_, _| StandardNormal.sample(rng));
    Ok(mean + l * z)
}

/// `n` draws from `N(mean, cov)` as rows of an `n × d` matrix, sharing one
/// factorization. Row `i` consumes the stream before row `i + 1`.
pub fn mvn_sample_n(
    mean: &DVector<f64>,
    cov: &SymmetricMatrix,
    n: usize,
    rng: &mut Stream,
) -> Result<DMatrix<f64>, GaussError> {
    if mean.len() != cov.dim() {
        return Err(GaussError::DimensionMismatch { expected: cov.dim(), got: mean.len() });
    }
    let d = cov.dim();
    let l = cholesky(cov)?;
    let mut out = DMatrix::<f64>::zeros(n, d);
    let mut z = DVector::<f64>::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let row = &l * &z + mean;
        out.row_mut(i).copy_from(&row.transpose());
    }
    Ok(out)
}

/// Mean-zero Gaussian log-density `-½(d·ln 2π + ln det cov + zᵀ cov⁻¹ z)`.
pub fn gaussian_logpdf(z: &DVector<f64>, cov: &SymmetricMatrix) -> Result<f64, GaussError> {
    if z.len() != cov.dim() {
        return Err(GaussError::DimensionMismatch { expected: cov.dim(), got: z.len() });
    }
    let l = cholesky(cov)?;
    Ok(logpdf_with_factor(z, &l))
}

/// Log-density given a precomputed Cholesky factor of the covariance.
pub fn logpdf_with_factor(z: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let d = z.len();
    let mut w = z.clone();
    solve_lower_inplace(l, &mut w);
    -0.5 * (d as f64 * LN_2PI + log_det_from_cholesky(l) + w.norm_squared())
}

/// `KL(N(0, s0) ‖ N(0, s1)) = ½(tr(s1⁻¹ s0) − ln det(s1⁻¹ s0) − d)`.
pub fn kl_gaussian(s0: &SymmetricMatrix, s1: &SymmetricMatrix) -> Result<f64, GaussError> {
    let d = s0.dim();
    if s1.dim() != d {
        return Err(GaussError::DimensionMismatch { expected: d, got: s1.dim() });
    }
    let l0 = cholesky(s0)?;
    let l1 = cholesky(s1)?;
    // tr(s1⁻¹ s0) = ‖L1⁻¹ L0‖²_F
    let mut w = l0.clone();
    let ok = l1.solve_lower_triangular_mut(&mut w);
    debug_assert!(ok);
    let trace = w.norm_squared();
    let log_det_ratio = log_det_from_cholesky(&l0) - log_det_from_cholesky(&l1);
    Ok(0.5 * (trace - log_det_ratio - d as f64))
}

/// Coefficients and residual variance of the conditional law of component
/// `response_index` given the rest, from a joint covariance.
///
/// With the joint partitioned into the response entry and the remaining
/// block in original order, returns `beta = Ω_xx⁻¹ Ω_xy` and
/// `sigma2 = Ω_yy − Ω_yx Ω_xx⁻¹ Ω_xy`.
pub fn conditional_regression(
    joint_cov: &SymmetricMatrix,
    response_index: usize,
) -> Result<(DVector<f64>, f64), GaussError> {
    let d = joint_cov.dim();
    if response_index >= d {
        return Err(GaussError::DimensionMismatch { expected: d, got: response_index });
    }
    let a = joint_cov.as_matrix();
    let keep: Vec<usize> = (0..d).filter(|&i| i != response_index).collect();
    let mut xx = DMatrix::<f64>::zeros(d - 1, d - 1);
    let mut xy = DVector::<f64>::zeros(d - 1);
    for (r, &i) in keep.iter().enumerate() {
        xy[r] = a[(i, response_index)];
        for (c, &j) in keep.iter().enumerate() {
            xx[(r, c)] = a[(i, j)];
        }
    }
    let l = cholesky(&SymmetricMatrix::new_unchecked(xx))?;
    let mut beta = xy.clone();
    solve_lower_inplace(&l, &mut beta);
    solve_lower_transpose_inplace(&l, &mut beta);
    let sigma2 = a[(response_index, response_index)] - xy.dot(&beta);
    if sigma2 <= 0.0 {
        return Err(GaussError::NotPositiveDefinite { index: response_index, pivot: sigma2 });
    }
    Ok((beta, sigma2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from;
    use approx::assert_relative_eq;

    fn sym(entries: &[f64], d: usize) -> SymmetricMatrix {
        SymmetricMatrix::new(DMatrix::from_row_slice(d, d, entries)).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&SymmetricMatrix::identity(3)).unwrap();
        assert_relative_eq!(l, DMatrix::identity(3, 3), epsilon = 0.0);
    }

    #[test]
    fn cholesky_hand_case() {
        let l = cholesky(&sym(&[4.0, 2.0, 2.0, 5.0], 2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert_relative_eq!(l, expected, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        // eigenvalues 3 and -1
        let err = cholesky(&sym(&[1.0, 2.0, 2.0, 1.0], 2)).unwrap_err();
        assert!(matches!(err, GaussError::NotPositiveDefinite { .. }));
    }

    #[test]
    fn symmetry_validated() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymmetricMatrix::new(m), Err(GaussError::NotSymmetric { .. })));
    }

    #[test]
    fn mvn_degenerate_variance_collapses_to_mean() {
        let mean = DVector::from_vec(vec![3.0, -1.0]);
        let cov = SymmetricMatrix::new_unchecked(DMatrix::identity(2, 2) * 1e-30);
        let mut rng = stream_from(9);
        let draw = mvn_sample(&mean, &cov, &mut rng).unwrap();
        assert!((draw - mean).amax() < 1e-10);
    }

    #[test]
    fn mvn_deterministic_per_seed() {
        let mean = DVector::zeros(3);
        let cov = sym(&[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 1.5], 3);
        let a = mvn_sample(&mean, &cov, &mut stream_from(1234)).unwrap();
        let b = mvn_sample(&mean, &cov, &mut stream_from(1234)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logpdf_standard_cases() {
        let z = DVector::zeros(4);
        let v = gaussian_logpdf(&z, &SymmetricMatrix::identity(4)).unwrap();
        assert_relative_eq!(v, -2.0 * LN_2PI, epsilon = 1e-14);

        let z = DVector::from_vec(vec![1.0]);
        let v = gaussian_logpdf(&z, &SymmetricMatrix::identity(1)).unwrap();
        assert_relative_eq!(v, -0.5 * (LN_2PI + 1.0), epsilon = 1e-14);
    }

    #[test]
    fn kl_zero_on_equal_and_hand_scalar_case() {
        let s = sym(&[1.3, 0.4, 0.4, 2.0], 2);
        assert!(kl_gaussian(&s, &s).unwrap().abs() < 1e-12);

        let s0 = SymmetricMatrix::new_unchecked(DMatrix::from_element(1, 1, 2.0));
        let s1 = SymmetricMatrix::identity(1);
        let expected = 0.5 * (2.0 - (2.0_f64).ln() - 1.0);
        assert_relative_eq!(kl_gaussian(&s0, &s1).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn conditional_regression_independence() {
        let (beta, sigma2) = conditional_regression(&SymmetricMatrix::identity(5), 4).unwrap();
        assert!(beta.amax() == 0.0);
        assert_relative_eq!(sigma2, 1.0);
    }

    #[test]
    fn conditional_regression_middle_index() {
        // y is index 0; x covariance I, cov(x, y) = (0.6, 0.0), var(y) = 2.
        let joint = sym(
            &[
                2.0, 0.6, 0.0, //
                0.6, 1.0, 0.0, //
                0.0, 0.0, 1.0,
            ],
            3,
        );
        let (beta, sigma2) = conditional_regression(&joint, 0).unwrap();
        assert_relative_eq!(beta[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(beta[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sigma2, 2.0 - 0.36, epsilon = 1e-12);
    }
}
