//! KL-optimal rank-k plus diagonal approximation of a Gaussian, with an
//! optional pinned response variance.
//!
//! Minimizing `KL(N(0, s0) ‖ N(0, ΛΛᵀ + Ψ))` over loadings `Λ` and diagonal
//! `Ψ` is maximum-likelihood factor analysis with the population second
//! moment `s0` standing in for a sample covariance, so the fit uses the
//! standard factor-analysis EM recursion. Pinning one diagonal entry of `Ψ`
//! just skips its M-step update, which preserves EM monotonicity because the
//! M-step decouples across diagonal entries.
//!
//! [`scan_sigma_grid`] sweeps the pinned response variance over an ascending
//! grid, warm-starting each point from the previous solution. The warm start
//! matters: near the transition where the optimal single factor switches
//! columns, jittered eigenvector starts alone converge to the wrong basin.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::gauss::{self, GaussError, SymmetricMatrix, LN_2PI};
use crate::model::{FactorModel, LoglikSplit, ModelError};
use crate::parallel;
use crate::rng::{self, stream_from};

/// Diagonal entries of `Ψ` are clamped at this floor during EM.
pub const PSI_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum KlOptError {
    #[error("vectors have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("rank k must satisfy 1 <= k < dim, got k = {k}, dim = {dim}")]
    InvalidRank { k: usize, dim: usize },
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// EM stopping and restart controls.
#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Stop when the KL improvement over one iteration falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of random initializations; the lowest-KL result wins, ties
    /// broken by restart index.
    pub n_restarts: usize,
    /// Standard deviation of the loadings jitter applied per restart.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, n_restarts: 10, jitter: 0.1, seed: 0 }
    }
}

/// Converged EM state from one starting point, with the KL value after each
/// iteration (non-increasing).
#[derive(Debug, Clone)]
pub struct EmRefinement {
    pub lambda: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub kl: f64,
    pub iterations: usize,
    pub kl_trace: Vec<f64>,
}

/// Runs the EM recursion from a given start until the KL improvement drops
/// below `tol` or `max_iter` iterations pass.
pub fn em_refine(
    s0: &SymmetricMatrix,
    lambda0: &DMatrix<f64>,
    psi0: &DVector<f64>,
    fixed_y_var: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<EmRefinement, KlOptError> {
    let d = s0.dim();
    let k = lambda0.ncols();
    let s = s0.as_matrix();
    let mut lambda = lambda0.clone();
    let mut psi = psi0.clone();
    if let Some(v) = fixed_y_var {
        psi[d - 1] = v;
    }
    let implied = |lambda: &DMatrix<f64>, psi: &DVector<f64>| {
        let mut m = lambda * lambda.transpose();
        for i in 0..d {
            m[(i, i)] += psi[i];
        }
        SymmetricMatrix::new_unchecked(m)
    };
    let mut kl = gauss::kl_gaussian(s0, &implied(&lambda, &psi))?;
    let mut trace = vec![kl];
    let mut iterations = 0;
    for it in 0..max_iter {
        // E-quantities: G = (I + ΛᵀΨ⁻¹Λ)⁻¹, B = GΛᵀΨ⁻¹, M = G + B s0 Bᵀ.
        let mut at = lambda.transpose(); // will become ΛᵀΨ⁻¹
        for j in 0..d {
            let inv = 1.0 / psi[j];
            for r in 0..k {
                at[(r, j)] *= inv;
            }
        }
        let mut g_inv = &at * &lambda;
        for r in 0..k {
            g_inv[(r, r)] += 1.0;
        }
        let lg = gauss::cholesky(&SymmetricMatrix::new_unchecked(g_inv))?;
        let mut b = at; // solve G⁻¹ B = ΛᵀΨ⁻¹
        let ok = lg.solve_lower_triangular_mut(&mut b) && lg.tr_solve_lower_triangular_mut(&mut b);
        debug_assert!(ok);
        let bs = &b * s; // k × d
        let mut m = &bs * b.transpose(); // B s0 Bᵀ
        // add G = (LLᵀ)⁻¹
        let mut g = DMatrix::identity(k, k);
        let ok = lg.solve_lower_triangular_mut(&mut g) && lg.tr_solve_lower_triangular_mut(&mut g);
        debug_assert!(ok);
        m += g;

        // M-step: Λ ← s0 Bᵀ M⁻¹, Ψ_jj ← (s0 − Λ_new B s0)_jj for free entries.
        let lm = gauss::cholesky(&SymmetricMatrix::new_unchecked(m))?;
        let mut lambda_new_t = bs.clone(); // solve M Λᵀ = B s0
        let ok = lm.solve_lower_triangular_mut(&mut lambda_new_t)
            && lm.tr_solve_lower_triangular_mut(&mut lambda_new_t);
        debug_assert!(ok);
        lambda = lambda_new_t.transpose();
        for j in 0..d {
            if fixed_y_var.is_some() && j == d - 1 {
                continue;
            }
            let explained = lambda.row(j).dot(&bs.column(j).transpose());
            psi[j] = (s[(j, j)] - explained).max(PSI_FLOOR);
        }

        let new_kl = gauss::kl_gaussian(s0, &implied(&lambda, &psi))?;
        trace.push(new_kl);
        iterations = it + 1;
        if (kl - new_kl).abs() < tol {
            kl = new_kl;
            break;
        }
        kl = new_kl;
    }
    Ok(EmRefinement { lambda, psi, kl, iterations, kl_trace: trace })
}

/// Best-of-restarts population fit.
#[derive(Debug, Clone)]
pub struct PopulationFit {
    pub model: FactorModel,
    pub kl: f64,
    pub iterations: usize,
}

/// Eigenvector-informed start: columns are the top-`k` eigenvectors of `s0`
/// scaled by the square roots of their eigenvalues, plus optional jitter.
fn eigen_start(s0: &SymmetricMatrix, k: usize, jitter: f64, seed: u64) -> DMatrix<f64> {
    let d = s0.dim();
    let eig = SymmetricEigen::new(s0.as_matrix().clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lambda = DMatrix::zeros(d, k);
    for (col, &e) in order.iter().take(k).enumerate() {
        let scale = eig.eigenvalues[e].max(1e-12).sqrt();
        for j in 0..d {
            lambda[(j, col)] = scale * eig.eigenvectors[(j, e)];
        }
    }
    if jitter > 0.0 {
        let mut rng = stream_from(seed);
        for v in lambda.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += jitter * z;
        }
    }
    lambda
}

fn fixed_tag(fixed_y_var: Option<f64>) -> u64 {
    fixed_y_var.map(|v| v.to_bits()).unwrap_or(u64::MAX)
}

fn best_refinement(
    s0: &SymmetricMatrix,
    k: usize,
    fixed_y_var: Option<f64>,
    opts: &EmOptions,
    warm: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<EmRefinement, KlOptError> {
    let d = s0.dim();
    if k == 0 || k >= d {
        return Err(KlOptError::InvalidRank { k, dim: d });
    }
    let psi0 = DVector::from_fn(d, |j, _| 0.5 * s0.as_matrix()[(j, j)]);
    let tag = fixed_tag(fixed_y_var);
    let n_starts = opts.n_restarts.max(1) + usize::from(warm.is_some());
    // Restart seeds derive from the pinned value, not grid position, so a
    // point's result does not depend on what else is in the grid.
    let candidates = parallel::try_map_indexed(n_starts, |r| {
        if r < opts.n_restarts.max(1) {
            let jitter = if r == 0 { 0.0 } else { opts.jitter };
            let seed = rng::derive2(opts.seed, tag, r as u64);
            let lambda0 = eigen_start(s0, k, jitter, seed);
            em_refine(s0, &lambda0, &psi0, fixed_y_var, opts.tol, opts.max_iter)
        } else {
            let (wl, wp) = warm.expect("warm candidate only scheduled when present");
            em_refine(s0, wl, wp, fixed_y_var, opts.tol, opts.max_iter)
        }
    })?;
    Ok(candidates
        .into_iter()
        .reduce(|best, cand| if cand.kl < best.kl { cand } else { best })
        .expect("at least one restart"))
}

/// Fits the KL-closest rank-`k` plus diagonal model to `s0`, optionally with
/// the response (last) diagonal entry of `Ψ` pinned at `fixed_y_var`.
pub fn population_em_fit(
    s0: &SymmetricMatrix,
    k: usize,
    fixed_y_var: Option<f64>,
    opts: &EmOptions,
) -> Result<PopulationFit, KlOptError> {
    let best = best_refinement(s0, k, fixed_y_var, opts, None)?;
    let model = FactorModel::new(best.lambda, best.psi, fixed_y_var.is_some())?;
    Ok(PopulationFit { model, kl: best.kl, iterations: best.iterations })
}

/// One grid point of a scan.
#[derive(Debug, Clone)]
pub struct KlScanRow {
    pub sigma_y2: f64,
    pub fit: PopulationFit,
    /// Sign-aligned squared distance from each true column to the nearest
    /// fitted column.
    pub distance_to_column: Vec<f64>,
    /// Analytic expected per-observation log-likelihoods under `N(0, s0)`.
    pub loglik: LoglikSplit,
}

#[derive(Debug, Clone)]
pub struct KlScanResult {
    pub rows: Vec<KlScanRow>,
}

impl KlScanResult {
    /// Index `i` such that the sign of `dist(col 1) − dist(col 2)` changes
    /// between rows `i` and `i+1`; only meaningful for two-column truths.
    pub fn crossings(&self) -> Vec<usize> {
        let signs: Vec<f64> = self
            .rows
            .iter()
            .map(|r| (r.distance_to_column[0] - r.distance_to_column[1]).signum())
            .collect();
        (0..signs.len().saturating_sub(1)).filter(|&i| signs[i] != signs[i + 1]).collect()
    }
}

/// Sweeps the pinned response variance over an ascending positive grid.
///
/// Each point is fit with the value-derived restarts plus a warm start from
/// the previous point's solution; the lowest-KL candidate wins.
pub fn scan_sigma_grid(
    s0: &SymmetricMatrix,
    true_lambda: &DMatrix<f64>,
    k: usize,
    grid: &[f64],
    opts: &EmOptions,
) -> Result<KlScanResult, KlOptError> {
    if grid.is_empty() {
        return Err(KlOptError::InvalidGrid("grid is empty".into()));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(KlOptError::InvalidGrid("grid values must be strictly increasing".into()));
        }
    }
    if grid[0] <= 0.0 {
        return Err(KlOptError::InvalidGrid("grid values must be positive".into()));
    }
    if true_lambda.nrows() != s0.dim() {
        return Err(KlOptError::LengthMismatch { a: true_lambda.nrows(), b: s0.dim() });
    }

    let mut rows = Vec::with_capacity(grid.len());
    let mut warm: Option<(DMatrix<f64>, DVector<f64>)> = None;
    for &value in grid {
        let best = best_refinement(
            s0,
            k,
            Some(value),
            opts,
            warm.as_ref().map(|(l, p)| (l, p)),
        )?;
        warm = Some((best.lambda.clone(), best.psi.clone()));
        let model = FactorModel::new(best.lambda, best.psi, true)?;
        let distance_to_column = (0..true_lambda.ncols())
            .map(|c| {
                let truth = true_lambda.column(c).into_owned();
                (0..k)
                    .map(|f| {
                        loading_distance(
                            model.lambda.column(f).as_slice(),
                            truth.as_slice(),
                        )
                        .expect("columns share the row count")
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let loglik = expected_loglik_split(&model, s0)?;
        rows.push(KlScanRow {
            sigma_y2: value,
            fit: PopulationFit { model, kl: best.kl, iterations: best.iterations },
            distance_to_column,
            loglik,
        });
    }
    Ok(KlScanResult { rows })
}

/// Analytic per-observation expectations of the model log-likelihood under
/// `N(0, s0)`: joint, predictor marginal, and response given predictors.
///
/// `joint = x + y_given_x` holds exactly; numerically within `1e-10`.
pub fn expected_loglik_split(
    model: &FactorModel,
    s0: &SymmetricMatrix,
) -> Result<LoglikSplit, KlOptError> {
    let d = s0.dim();
    if model.p + 1 != d {
        return Err(KlOptError::LengthMismatch { a: model.p + 1, b: d });
    }
    let s = s0.as_matrix();
    let cov = model.implied_covariance();

    let expected = |target: &SymmetricMatrix, truth: &SymmetricMatrix| -> Result<f64, KlOptError> {
        let dim = target.dim();
        let l = gauss::cholesky(target)?;
        // tr(Σ₁⁻¹ s0) = ‖L⁻¹ L0‖²_F with L0 the factor of s0.
        let l0 = gauss::cholesky(truth)?;
        let mut w = l0;
        let ok = l.solve_lower_triangular_mut(&mut w);
        debug_assert!(ok);
        Ok(-0.5 * (dim as f64 * LN_2PI + gauss::log_det_from_cholesky(&l) + w.norm_squared()))
    };

    let joint = expected(&cov, s0)?;
    let x = expected(&cov.leading_block(model.p), &s0.leading_block(model.p))?;

    let reg = model.induced_regression();
    let sxx = s.view((0, 0), (model.p, model.p));
    let sxy = s.view((0, model.p), (model.p, 1)).into_owned();
    let quad = s[(model.p, model.p)] - 2.0 * reg.beta.dot(&sxy.column(0))
        + (reg.beta.transpose() * sxx * &reg.beta)[(0, 0)];
    let y_given_x = -0.5 * ((LN_2PI + reg.sigma2.ln()) + quad / reg.sigma2);

    Ok(LoglikSplit { joint, x_marginal: x, y_given_x })
}

/// Sign-aligned squared distance `min(‖a − b‖², ‖a + b‖²)`; loadings columns
/// are identified only up to sign.
pub fn loading_distance(a: &[f64], b: &[f64]) -> Result<f64, KlOptError> {
    if a.len() != b.len() {
        return Err(KlOptError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let mut minus = 0.0;
    let mut plus = 0.0;
    for (x, y) in a.iter().zip(b) {
        minus += (x - y) * (x - y);
        plus += (x + y) * (x + y);
    }
    Ok(minus.min(plus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn loading_distance_cases() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_relative_eq!(loading_distance(&a, &a).unwrap(), 0.0);
        let neg = [-1.0, -0.0];
        assert_relative_eq!(loading_distance(&a, &neg).unwrap(), 0.0);
        assert_relative_eq!(loading_distance(&a, &b).unwrap(), 2.0);
        assert!(loading_distance(&a, &[1.0]).is_err());
    }

    #[test]
    fn realizable_target_recovers_kl_zero() {
        // Exact rank-1 + diagonal target with a pinned response entry.
        let lambda = DMatrix::from_row_slice(4, 1, &[1.0, -0.5, 2.0, 0.8]);
        let psi = DVector::from_vec(vec![0.3, 0.7, 0.4, 0.25]);
        let model = FactorModel::new(lambda, psi, false).unwrap();
        let s0 = model.implied_covariance();
        // KL is quadratic near the optimum, so entrywise recovery at 1e-6
        // needs a much deeper stop than the default.
        let opts = EmOptions { n_restarts: 4, seed: 9, tol: 1e-15, ..EmOptions::default() };
        let fit = population_em_fit(&s0, 1, Some(0.25), &opts).unwrap();
        assert!(fit.kl < 1e-9, "kl = {}", fit.kl);
        assert_eq!(fit.model.sigma_y2(), 0.25);
        let diff = fit.model.implied_covariance().as_matrix() - s0.as_matrix();
        assert!(diff.amax() < 1e-6, "max dev {}", diff.amax());
    }

    #[test]
    fn em_is_monotone() {
        let lambda = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let psi = DVector::from_vec(vec![0.5, 0.5, 0.5]);
        let model = FactorModel::new(lambda, psi, false).unwrap();
        let mut s0 = model.implied_covariance().into_matrix();
        s0[(0, 1)] += 0.3;
        s0[(1, 0)] += 0.3;
        let s0 = SymmetricMatrix::new(s0).unwrap();
        let start = eigen_start(&s0, 1, 0.2, 4);
        let psi0 = DVector::from_element(3, 1.0);
        let r = em_refine(&s0, &start, &psi0, None, 1e-12, 500).unwrap();
        for w in r.kl_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "KL increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn grid_validation() {
        let s0 = SymmetricMatrix::identity(3);
        let lam = DMatrix::zeros(3, 1);
        let opts = EmOptions::default();
        assert!(scan_sigma_grid(&s0, &lam, 1, &[], &opts).is_err());
        assert!(scan_sigma_grid(&s0, &lam, 1, &[0.2, 0.1], &opts).is_err());
        assert!(scan_sigma_grid(&s0, &lam, 1, &[0.0, 0.1], &opts).is_err());
    }

    #[test]
    fn expected_split_at_truth() {
        // When the model covariance equals s0, joint = −½(d ln 2π + ln det s0 + d).
        let lambda = DMatrix::from_row_slice(3, 1, &[0.6, -0.2, 0.9]);
        let psi = DVector::from_vec(vec![0.4, 0.9, 0.3]);
        let model = FactorModel::new(lambda, psi, false).unwrap();
        let s0 = model.implied_covariance();
        let split = expected_loglik_split(&model, &s0).unwrap();
        let l = gauss::cholesky(&s0).unwrap();
        let expect = -0.5 * (3.0 * LN_2PI + gauss::log_det_from_cholesky(&l) + 3.0);
        assert_relative_eq!(split.joint, expect, epsilon = 1e-12);
        assert_relative_eq!(split.joint, split.x_marginal + split.y_given_x, epsilon = 1e-10);
    }
}
