//! Reference regressors: OLS, ridge in closed form, lasso by cyclic
//! coordinate descent, and K-fold tuning of a penalized fitter.
//!
//! Penalized objectives are on the `(1/2n)` loss scale so penalty grids
//! transfer across sample sizes. Intercepts are handled upstream by
//! standardization, not by an explicit column.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gauss::{self, SymmetricMatrix};
use crate::select::{mse, CvPlan, SelectError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("design matrix is rank deficient (pivot {pivot:.3e} at column {index})")]
    RankDeficient { index: usize, pivot: f64 },
    #[error("need n > p, got n = {n}, p = {p}")]
    TooFewRows { n: usize, p: usize },
    #[error("penalty grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Least squares via Cholesky on the normal equations.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, BaselineError> {
    if x.nrows() <= x.ncols() {
        return Err(BaselineError::TooFewRows { n: x.nrows(), p: x.ncols() });
    }
    solve_gram(x, y, 0.0)
}

/// Ridge solution `(XᵀX + nλI)⁻¹ Xᵀy`.
pub fn ridge_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: f64,
) -> Result<DVector<f64>, BaselineError> {
    assert!(penalty >= 0.0, "ridge penalty must be nonnegative");
    solve_gram(x, y, penalty * x.nrows() as f64)
}

fn solve_gram(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    shift: f64,
) -> Result<DVector<f64>, BaselineError> {
    let mut gram = x.tr_mul(x);
    for i in 0..gram.nrows() {
        gram[(i, i)] += shift;
    }
    let l = gauss::cholesky(&SymmetricMatrix::new_unchecked(gram)).map_err(|e| match e {
        gauss::GaussError::NotPositiveDefinite { index, pivot } => {
            BaselineError::RankDeficient { index, pivot }
        }
        other => panic!("unexpected factorization error: {other}"),
    })?;
    let mut beta = x.tr_mul(y);
    gauss::solve_lower_inplace(&l, &mut beta);
    gauss::solve_lower_transpose_inplace(&l, &mut beta);
    Ok(beta)
}

/// Result of a lasso fit; `converged` is false when the sweep limit was hit,
/// in which case `beta` is the last iterate.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

pub const LASSO_MAX_SWEEPS: usize = 100_000;
pub const LASSO_TOL: f64 = 1e-8;

/// Cyclic coordinate descent with soft-thresholding on
/// `(1/2n)‖y − Xβ‖² + λ‖β‖₁`, stopping when the largest coordinate change in
/// a sweep falls below `1e-8`.
pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> LassoFit {
    assert!(penalty > 0.0, "lasso penalty must be positive");
    let n = x.nrows();
    let p = x.ncols();
    let inv_n = 1.0 / n as f64;
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() * inv_n).collect();
    let mut beta = DVector::<f64>::zeros(p);
    let mut residual = y.clone();
    let mut sweeps = 0;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            // Partial residual correlation with column j on the 1/n scale.
            let rho = x.column(j).dot(&residual) * inv_n + col_sq[j] * old;
            let new = soft_threshold(rho, penalty) / col_sq[j];
            if new != old {
                let delta = new - old;
                residual.axpy(-delta, &x.column(j).into_owned(), 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < LASSO_TOL {
            return LassoFit { beta, converged: true, sweeps };
        }
    }
    LassoFit { beta, converged: false, sweeps }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// The smallest penalty that zeroes every lasso coordinate,
/// `max_j |x_jᵀ y| / n`.
pub fn lasso_penalty_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let inv_n = 1.0 / x.nrows() as f64;
    (0..x.ncols()).map(|j| (x.column(j).dot(y) * inv_n).abs()).fold(0.0, f64::max)
}

/// 50 log-spaced lasso penalties from `λ_max` down to `1e-3 λ_max`.
pub fn default_lasso_grid(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let max = lasso_penalty_max(x, y).max(1e-12);
    log_spaced(1e-3 * max, max, 50)
}

/// 50 log-spaced ridge penalties in `[1e-4, 10]`.
pub fn default_ridge_grid() -> Vec<f64> {
    log_spaced(1e-4, 10.0, 50)
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// K-fold CV curve for a penalized fitter; returns the penalty minimizing the
/// mean held-out MSE, ties broken toward the larger penalty.
pub fn cv_tune<F>(
    fitter: F,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    plan: &CvPlan,
) -> Result<(f64, Vec<(f64, f64)>), BaselineError>
where
    F: Fn(&DMatrix<f64>, &DVector<f64>, f64) -> Result<DVector<f64>, BaselineError>,
{
    if grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &penalty in grid {
        let mut total = 0.0;
        for fold in 0..plan.n_folds() {
            let train_rows = plan.complement_rows(fold);
            let test_rows = plan.fold_rows(fold);
            let xt = x.select_rows(train_rows.iter());
            let yt = y.select_rows(train_rows.iter());
            let beta = fitter(&xt, &yt, penalty)?;
            let xs = x.select_rows(test_rows.iter());
            let ys = y.select_rows(test_rows.iter());
            let pred = &xs * &beta;
            total += mse(pred.as_slice(), ys.as_slice())?;
        }
        curve.push((penalty, total / plan.n_folds() as f64));
    }
    let mut best = 0;
    for i in 1..curve.len() {
        // Strict comparison prefers the later (larger) penalty on ties when
        // the grid is ascending.
        if curve[i].1 <= curve[best].1 {
            best = i;
        }
    }
    Ok((curve[best].0, curve))
}

/// Largest KKT residual of a candidate lasso solution: for zero coordinates
/// the excess of `|x_jᵀ r / n|` over `λ`, for active ones the deviation of
/// `x_jᵀ r / n` from `λ · sign(β_j)`.
pub fn lasso_kkt_residual(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    penalty: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let residual = y - x * beta;
    let mut worst = 0.0_f64;
    for j in 0..x.ncols() {
        let grad = x.column(j).dot(&residual) / n;
        let violation = if beta[j] == 0.0 {
            (grad.abs() - penalty).max(0.0)
        } else {
            (grad - penalty * beta[j].signum()).abs()
        };
        worst = worst.max(violation);
    }
    worst
}
