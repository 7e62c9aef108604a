//! Joint factor model types, the shrinkage-prior state, and the regression
//! induced on the response by the joint covariance.
//!
//! A [`FactorModel`] holds a `(p+1) × k` loadings matrix over `p` predictors
//! plus the response (always the last row) and a diagonal of idiosyncratic
//! variances. Marginalizing the factors gives the joint covariance
//! `Λ Λᵀ + diag(σ²)`, whose conditional law for the response is the induced
//! linear regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss::{self, GaussError, SymmetricMatrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("idiosyncratic variance {value} at index {index} is not strictly positive")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("loadings contain a non-finite entry at ({row}, {col})")]
    NonFiniteLoading { row: usize, col: usize },
    #[error("loadings have {rows} rows but sigma_diag has {len} entries")]
    ShapeMismatch { rows: usize, len: usize },
    #[error(transparent)]
    Gauss(#[from] GaussError),
}

/// Joint Gaussian factor model over `p` predictors and one response.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// Number of predictors; the joint dimension is `p + 1`.
    pub p: usize,
    /// Number of loadings columns (the truncation level when fitted).
    pub k: usize,
    /// `(p+1) × k` loadings; row `p` is the response row.
    pub lambda: DMatrix<f64>,
    /// Idiosyncratic variances `(σ²_1, …, σ²_p, σ²_y)`.
    pub sigma_diag: DVector<f64>,
    /// Whether the response entry of `sigma_diag` is pinned during sampling.
    pub y_variance_fixed: bool,
}

impl FactorModel {
    pub fn new(
        lambda: DMatrix<f64>,
        sigma_diag: DVector<f64>,
        y_variance_fixed: bool,
    ) -> Result<Self, ModelError> {
        if lambda.nrows() != sigma_diag.len() || lambda.nrows() == 0 {
            return Err(ModelError::ShapeMismatch {
                rows: lambda.nrows(),
                len: sigma_diag.len(),
            });
        }
        for (index, &value) in sigma_diag.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::NonPositiveVariance { index, value });
            }
        }
        for row in 0..lambda.nrows() {
            for col in 0..lambda.ncols() {
                if !lambda[(row, col)].is_finite() {
                    return Err(ModelError::NonFiniteLoading { row, col });
                }
            }
        }
        Ok(Self {
            p: lambda.nrows() - 1,
            k: lambda.ncols(),
            lambda,
            sigma_diag,
            y_variance_fixed,
        })
    }

    /// Response idiosyncratic variance `σ²_y` (last diagonal entry).
    pub fn sigma_y2(&self) -> f64 {
        self.sigma_diag[self.p]
    }

    /// Joint covariance `Λ Λᵀ + diag(σ²)`, positive definite by construction.
    pub fn implied_covariance(&self) -> SymmetricMatrix {
        let mut m = &self.lambda * self.lambda.transpose();
        for i in 0..=self.p {
            m[(i, i)] += self.sigma_diag[i];
        }
        SymmetricMatrix::new_unchecked(m)
    }

    /// The linear regression of the response on the predictors implied by the
    /// joint covariance.
    pub fn induced_regression(&self) -> InducedRegression {
        let cov = self.implied_covariance();
        let (beta, sigma2) = gauss::conditional_regression(&cov, self.p)
            .expect("implied covariance of a valid factor model is positive definite");
        InducedRegression { beta, sigma2 }
    }

    /// Closed-form induced regression for a single-column model:
    /// `β = γ/(1 + Σ_j λ_j²/σ_j²) · (λ_1/σ²_1, …, λ_p/σ²_p)ᵀ` and
    /// `σ² = σ²_y + γ²/(1 + Σ_j λ_j²/σ_j²)`.
    ///
    /// Only defined for `k = 1`; the generic path must agree with it.
    pub fn induced_regression_rank1(&self) -> Option<InducedRegression> {
        if self.k != 1 {
            return None;
        }
        let gamma = self.lambda[(self.p, 0)];
        let mut denom = 1.0;
        for j in 0..self.p {
            denom += self.lambda[(j, 0)] * self.lambda[(j, 0)] / self.sigma_diag[j];
        }
        let scale = gamma / denom;
        let beta = DVector::from_fn(self.p, |j, _| scale * self.lambda[(j, 0)] / self.sigma_diag[j]);
        let sigma2 = self.sigma_y2() + gamma * gamma / denom;
        Some(InducedRegression { beta, sigma2 })
    }

    /// Total log-likelihood of `data` (rows are observations, response last)
    /// split as joint, predictor marginal, and response-given-predictors.
    ///
    /// The three satisfy `joint = x_marginal + y_given_x` exactly in exact
    /// arithmetic; numerically within `1e-8 · n`.
    pub fn loglik_split(&self, data: &DMatrix<f64>) -> Result<LoglikSplit, ModelError> {
        let d = self.p + 1;
        assert_eq!(data.ncols(), d, "data must have p+1 columns, response last");
        let n = data.nrows();
        if n == 0 {
            return Ok(LoglikSplit { joint: 0.0, x_marginal: 0.0, y_given_x: 0.0 });
        }
        let cov = self.implied_covariance();
        let l_joint = gauss::cholesky(&cov)?;
        let l_x = gauss::cholesky(&cov.leading_block(self.p))?;
        let reg = self.induced_regression();
        let half_ln_sig = 0.5 * (gauss::LN_2PI + reg.sigma2.ln());

        let mut joint = 0.0;
        let mut x_marginal = 0.0;
        let mut y_given_x = 0.0;
        for i in 0..n {
            let z = data.row(i).transpose();
            joint += gauss::logpdf_with_factor(&z, &l_joint);
            let x = z.rows(0, self.p).into_owned();
            x_marginal += gauss::logpdf_with_factor(&x, &l_x);
            let resid = z[self.p] - reg.beta.dot(&x);
            y_given_x += -half_ln_sig - 0.5 * resid * resid / reg.sigma2;
        }
        Ok(LoglikSplit { joint, x_marginal, y_given_x })
    }
}

/// Joint/marginal/conditional log-likelihood decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikSplit {
    pub joint: f64,
    pub x_marginal: f64,
    pub y_given_x: f64,
}

/// Regression of the response on the predictors induced by a factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedRegression {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl InducedRegression {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta
    }
}

/// Hyperparameters of the multiplicative-gamma-process shrinkage prior and
/// the inverse-gamma prior on idiosyncratic variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgpHyperparams {
    /// Shape of the first column multiplier, `δ_1 ~ Gamma(a1, 1)`.
    pub a1: f64,
    /// Shape of the remaining multipliers, `δ_h ~ Gamma(a_rest, 1)`.
    pub a_rest: f64,
    /// Local precision prior shape, `ξ ~ Gamma(xi_shape, xi_rate)`.
    pub xi_shape: f64,
    pub xi_rate: f64,
    /// Idiosyncratic variance prior, `σ² ~ InvGamma(sigma_shape, sigma_rate)`.
    pub sigma_shape: f64,
    pub sigma_rate: f64,
}

impl Default for MgpHyperparams {
    fn default() -> Self {
        Self {
            a1: 2.1,
            a_rest: 3.1,
            xi_shape: 1.5,
            xi_rate: 1.5,
            sigma_shape: 1.0,
            sigma_rate: 0.3,
        }
    }
}

impl MgpHyperparams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("a1", self.a1),
            ("a_rest", self.a_rest),
            ("xi_shape", self.xi_shape),
            ("xi_rate", self.xi_rate),
            ("sigma_shape", self.sigma_shape),
            ("sigma_rate", self.sigma_rate),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("hyperparameter {name} must be strictly positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Latent state of the multiplicative gamma process: local precisions `ξ`,
/// column multipliers `δ`, and their cumulative products `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MgpState {
    /// `(p+1) × k̃` local precisions.
    pub xi: DMatrix<f64>,
    /// `k̃` column multipliers.
    pub delta: DVector<f64>,
    /// `τ_l = Π_{m ≤ l} δ_m`, kept in sync with `delta`.
    pub tau: DVector<f64>,
}

impl MgpState {
    /// State at the prior means: `ξ = shape/rate`, `δ_h = a_h`.
    pub fn at_prior_means(rows: usize, k: usize, hyper: &MgpHyperparams) -> Self {
        let xi = DMatrix::from_element(rows, k, hyper.xi_shape / hyper.xi_rate);
        let delta =
            DVector::from_fn(k, |h, _| if h == 0 { hyper.a1 } else { hyper.a_rest });
        let tau = cumulative_products(&delta);
        Self { xi, delta, tau }
    }

    /// Replaces `delta` and recomputes `tau`.
    pub fn set_delta(&mut self, delta: DVector<f64>) {
        self.tau = cumulative_products(&delta);
        self.delta = delta;
    }
}

pub fn cumulative_products(delta: &DVector<f64>) -> DVector<f64> {
    let mut tau = DVector::zeros(delta.len());
    let mut acc = 1.0;
    for (i, &d) in delta.iter().enumerate() {
        acc *= d;
        tau[i] = acc;
    }
    tau
}

/// JSON document for a factor model, optionally carrying the shrinkage state.
///
/// Field names are part of the on-disk contract: `p`, `k`, `lambda` (row-major
/// nested arrays), `sigma_diag`, `y_variance_fixed`, `xi`, `delta`. `xi` and
/// `delta` are empty arrays when no sampler state accompanies the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub p: usize,
    pub k: usize,
    pub lambda: Vec<Vec<f64>>,
    pub sigma_diag: Vec<f64>,
    pub y_variance_fixed: bool,
    #[serde(default)]
    pub xi: Vec<Vec<f64>>,
    #[serde(default)]
    pub delta: Vec<f64>,
}

impl ModelDocument {
    pub fn from_model(model: &FactorModel, state: Option<&MgpState>) -> Self {
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        Self {
            p: model.p,
            k: model.k,
            lambda: to_rows(&model.lambda),
            sigma_diag: model.sigma_diag.iter().copied().collect(),
            y_variance_fixed: model.y_variance_fixed,
            xi: state.map(|s| to_rows(&s.xi)).unwrap_or_default(),
            delta: state.map(|s| s.delta.iter().copied().collect()).unwrap_or_default(),
        }
    }

    pub fn to_model(&self) -> Result<FactorModel, ModelError> {
        let rows = self.p + 1;
        let mut lambda = DMatrix::zeros(rows, self.k);
        for (i, row) in self.lambda.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                lambda[(i, j)] = v;
            }
        }
        FactorModel::new(
            lambda,
            DVector::from_vec(self.sigma_diag.clone()),
            self.y_variance_fixed,
        )
    }

    pub fn to_state(&self) -> Option<MgpState> {
        if self.delta.is_empty() {
            return None;
        }
        let rows = self.xi.len();
        let k = self.delta.len();
        let mut xi = DMatrix::zeros(rows, k);
        for (i, row) in self.xi.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                xi[(i, j)] = v;
            }
        }
        let delta = DVector::from_vec(self.delta.clone());
        let tau = cumulative_products(&delta);
        Some(MgpState { xi, delta, tau })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hand_model() -> FactorModel {
        // k = 1, p = 2, λ = (1, 1), γ = 1, σ² = (1, 1), σ²_y = 0.2
        FactorModel::new(
            DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0, 0.2]),
            false,
        )
        .unwrap()
    }

    #[test]
    fn implied_covariance_zero_loadings_is_diagonal() {
        let m = FactorModel::new(
            DMatrix::zeros(3, 2),
            DVector::from_vec(vec![0.5, 1.5, 2.5]),
            false,
        )
        .unwrap();
        let cov = m.implied_covariance();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.5, 2.5]));
        assert_relative_eq!(cov.as_matrix(), &expected, epsilon = 0.0);
    }

    #[test]
    fn induced_regression_hand_case() {
        let reg = hand_model().induced_regression();
        assert_relative_eq!(reg.beta[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(reg.beta[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(reg.sigma2, 0.2 + 1.0 / 3.0, epsilon = 1e-12);

        let closed = hand_model().induced_regression_rank1().unwrap();
        assert_relative_eq!(closed.beta, reg.beta, epsilon = 1e-12);
        assert_relative_eq!(closed.sigma2, reg.sigma2, epsilon = 1e-12);
    }

    #[test]
    fn decoupled_response_has_zero_beta() {
        let m = FactorModel::new(
            DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0, 0.7]),
            false,
        )
        .unwrap();
        let reg = m.induced_regression();
        assert!(reg.beta.amax() < 1e-14);
        assert_relative_eq!(reg.sigma2, 0.7, epsilon = 1e-14);
    }

    #[test]
    fn rank1_sigma2_decreases_as_loading_grows() {
        let mut prev = f64::INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let m = FactorModel::new(
                DMatrix::from_row_slice(3, 1, &[scale, 1.0, 1.0]),
                DVector::from_vec(vec![1.0, 1.0, 0.2]),
                false,
            )
            .unwrap();
            let sigma2 = m.induced_regression_rank1().unwrap().sigma2;
            assert!(sigma2 < prev);
            prev = sigma2;
        }
    }

    #[test]
    fn loglik_split_empty_and_single_point() {
        let m = FactorModel::new(
            DMatrix::zeros(3, 1),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            false,
        )
        .unwrap();
        let empty = m.loglik_split(&DMatrix::zeros(0, 3)).unwrap();
        assert_eq!(empty.joint, 0.0);
        assert_eq!(empty.x_marginal, 0.0);
        assert_eq!(empty.y_given_x, 0.0);

        let one = m.loglik_split(&DMatrix::zeros(1, 3)).unwrap();
        assert_relative_eq!(one.joint, -1.5 * crate::gauss::LN_2PI, epsilon = 1e-12);
        assert_relative_eq!(one.joint, one.x_marginal + one.y_given_x, epsilon = 1e-12);
    }

    #[test]
    fn tau_is_cumulative_product() {
        let state = MgpState::at_prior_means(4, 3, &MgpHyperparams::default());
        assert_relative_eq!(state.tau[0], 2.1, epsilon = 1e-12);
        assert_relative_eq!(state.tau[1], 2.1 * 3.1, epsilon = 1e-12);
        assert_relative_eq!(state.tau[2], 2.1 * 3.1 * 3.1, epsilon = 1e-12);
    }

    #[test]
    fn model_document_round_trip() {
        let m = hand_model();
        let state = MgpState::at_prior_means(3, 1, &MgpHyperparams::default());
        let doc = ModelDocument::from_model(&m, Some(&state));
        let json = serde_json::to_string(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
        assert_eq!(back.to_state().unwrap(), state);

        let bare = ModelDocument::from_model(&m, None);
        let json = serde_json::to_string(&bare).unwrap();
        let back: ModelDocument = serde_json::from_str(&json).unwrap();
        assert!(back.to_state().is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        let err = FactorModel::new(
            DMatrix::zeros(2, 1),
            DVector::from_vec(vec![1.0, 0.0]),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NonPositiveVariance { index: 1, .. }));
    }
}
