//! Shared test oracles, all independent of the library's computation paths:
//! dense inversion instead of Cholesky solves, explicit joint conditioning
//! instead of Schur updates, conjugate gradients instead of factorization,
//! quadrature instead of conjugacy algebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use tebfar::rng::{stream_from, Stream};

pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut Stream) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn standard_normal_vector(len: usize, rng: &mut Stream) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Random positive-definite matrix `G Gᵀ / d + eps I`.
pub fn random_pd(dim: usize, eps: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_from(seed);
    let g = standard_normal_matrix(dim, dim, &mut rng);
    let mut m = &g * g.transpose() / dim as f64;
    for i in 0..dim {
        m[(i, i)] += eps;
    }
    m
}

/// Mean-zero Gaussian log-density by dense inversion and determinant.
pub fn logpdf_dense(z: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = z.len() as f64;
    let inv = cov.clone().try_inverse().expect("oracle covariance is invertible");
    let quad = (z.transpose() * inv * z)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad)
}

/// Conditional law of component `response` given the rest, by inverting the
/// full matrix: beta from the precision row, variance from its diagonal.
pub fn conditional_by_inversion(cov: &DMatrix<f64>, response: usize) -> (DVector<f64>, f64) {
    let d = cov.nrows();
    let prec = cov.clone().try_inverse().expect("oracle covariance is invertible");
    // y | x has variance 1/prec_yy and coefficients -prec_yx / prec_yy.
    let sigma2 = 1.0 / prec[(response, response)];
    let mut beta = DVector::zeros(d - 1);
    let mut r = 0;
    for j in 0..d {
        if j == response {
            continue;
        }
        beta[r] = -prec[(response, j)] * sigma2;
        r += 1;
    }
    (beta, sigma2)
}

/// Conditional moments of factor scores given an observation, from the joint
/// Gaussian of (scores, observables): `cov = [[I, Λᵀ], [Λ, ΛΛᵀ + Σ]]`.
pub fn score_conditional_by_joint(
    lambda: &DMatrix<f64>,
    sigma_diag: &DVector<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = lambda.nrows();
    let k = lambda.ncols();
    let mut joint = DMatrix::zeros(k + d, k + d);
    joint.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
    joint.view_mut((0, k), (k, d)).copy_from(&lambda.transpose());
    joint.view_mut((k, 0), (d, k)).copy_from(lambda);
    let mut zz = lambda * lambda.transpose();
    for i in 0..d {
        zz[(i, i)] += sigma_diag[i];
    }
    joint.view_mut((k, k), (d, d)).copy_from(&zz);
    let zz_inv = zz.try_inverse().expect("observable covariance is invertible");
    let cross = lambda.transpose() * &zz_inv; // k × d
    let mean = &cross * z;
    let cov = DMatrix::identity(k, k) - &cross * lambda;
    (mean, cov)
}

/// Conjugate-gradient solve of `A x = b` for symmetric positive-definite `A`.
pub fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    for _ in 0..(10 * b.len().max(50)) {
        let ap = a * &p;
        let alpha = rs / p.dot(&ap);
        x += alpha * &p;
        r -= alpha * &ap;
        let rs_new = r.norm_squared();
        if rs_new.sqrt() < tol {
            break;
        }
        p = &r + (rs_new / rs) * p;
        rs = rs_new;
    }
    x
}

/// Unnormalized-density comparison on a grid: normalizes both `f` and `g` by
/// trapezoid quadrature and returns the largest pointwise deviation.
pub fn max_normalized_density_gap(
    grid: &[f64],
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
) -> f64 {
    let fs: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let gs: Vec<f64> = grid.iter().map(|&x| g(x)).collect();
    let zf = trapezoid(grid, &fs);
    let zg = trapezoid(grid, &gs);
    fs.iter()
        .zip(&gs)
        .map(|(a, b)| (a / zf - b / zg).abs())
        .fold(0.0, f64::max)
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Gamma(shape, rate) log-density up to its normalizing constant.
pub fn gamma_logpdf_unnorm(x: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) * x.ln() - rate * x
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Random factor model with `p` predictors and `k` columns; loadings are
/// standard normal, variances uniform in `[0.2, 1.2)`.
pub fn random_factor_model(p: usize, k: usize, seed: u64) -> tebfar::FactorModel {
    use rand::Rng;
    let mut rng = stream_from(seed);
    let lambda = standard_normal_matrix(p + 1, k, &mut rng);
    let sigma = DVector::from_fn(p + 1, |_, _| 0.2 + rng.random::<f64>());
    tebfar::FactorModel::new(lambda, sigma, false).expect("generated model is valid")
}
