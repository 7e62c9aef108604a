//! Seeded generators for the benchmark scenarios and the ten-variable
//! two-factor model used by the approximation scans.
//!
//! Generators are pure functions of `(scenario, seed)`; the model is built
//! first, then training rows, then test rows, all from one stream.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::gauss::{self, SymmetricMatrix};
use crate::model::{FactorModel, ModelDocument};
use crate::rng::{stream_from, Stream};

/// Scenario identifiers accepted by the generator and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    One,
    Two,
    Three,
    Motivating,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Scenario::One),
            "2" => Ok(Scenario::Two),
            "3" => Ok(Scenario::Three),
            "motivating" => Ok(Scenario::Motivating),
            other => Err(format!("unknown scenario {other:?}; expected 1, 2, 3, or motivating")),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::One => "1",
            Scenario::Two => "2",
            Scenario::Three => "3",
            Scenario::Motivating => "motivating",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Ground truth behind a generated dataset.
#[derive(Debug, Clone)]
pub enum Truth {
    Model(FactorModel),
    Regression { beta: DVector<f64>, noise_variance: f64 },
}

/// Serialized form of [`Truth`] (`truth.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthDocument {
    FactorModel(ModelDocument),
    Regression { beta: Vec<f64>, noise_variance: f64 },
}

impl Truth {
    pub fn to_document(&self) -> TruthDocument {
        match self {
            Truth::Model(m) => TruthDocument::FactorModel(ModelDocument::from_model(m, None)),
            Truth::Regression { beta, noise_variance } => TruthDocument::Regression {
                beta: beta.iter().copied().collect(),
                noise_variance: *noise_variance,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub truth: Truth,
    pub train: Dataset,
    pub test: Dataset,
}

/// The ten-variable, two-factor model with a dominant predictor factor and a
/// weak response-bearing factor; predictors are the first nine indices, the
/// response the last.
pub fn motivating_model() -> FactorModel {
    let col1 = [0.0, -4.0, 0.0, -8.0, -4.0, -6.0, 1.0, -1.0, 4.0, 0.0];
    let col2 = [1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let lambda = DMatrix::from_fn(10, 2, |j, l| if l == 0 { col1[j] } else { col2[j] });
    FactorModel::new(lambda, DVector::from_element(10, 0.2), false)
        .expect("static model is valid")
}

/// Rescales a model so every marginal variance of the implied covariance is
/// one: `D⁻¹ᐟ² Ω D⁻¹ᐟ²` applied by scaling loading rows and variances.
fn rescale_to_unit_diagonal(model: &FactorModel) -> FactorModel {
    let cov = model.implied_covariance();
    let mut lambda = model.lambda.clone();
    let mut sigma = model.sigma_diag.clone();
    for j in 0..=model.p {
        let s = 1.0 / cov.as_matrix()[(j, j)].sqrt();
        for l in 0..model.k {
            lambda[(j, l)] *= s;
        }
        sigma[j] *= s * s;
    }
    FactorModel::new(lambda, sigma, model.y_variance_fixed).expect("rescaling preserves validity")
}

fn column_names(p: usize) -> (Vec<String>, String) {
    ((1..=p).map(|j| format!("x{j}")).collect(), "y".to_string())
}

fn dataset_from_rows(rows: DMatrix<f64>, note: String) -> Dataset {
    let p = rows.ncols() - 1;
    let (predictor_names, response_name) = column_names(p);
    Dataset::from_joined(&rows, predictor_names, response_name, note)
}

fn gaussian_data(
    model: &FactorModel,
    n_train: usize,
    n_test: usize,
    rng: &mut Stream,
    note: &str,
) -> (Dataset, Dataset) {
    let cov = model.implied_covariance();
    let mean = DVector::zeros(model.p + 1);
    let train = gauss::mvn_sample_n(&mean, &cov, n_train, rng).expect("model covariance is PD");
    let test = gauss::mvn_sample_n(&mean, &cov, n_test, rng).expect("model covariance is PD");
    (
        dataset_from_rows(train, format!("{note} (train)")),
        dataset_from_rows(test, format!("{note} (test)")),
    )
}

/// Sparse-exponential loadings: for each of `k` columns, `nonzero` uniformly
/// chosen rows among `rows` get i.i.d. Exponential(1) entries and the column
/// is rescaled to norm `1 − 0.1·l`.
fn sparse_loadings(rows: usize, k: usize, nonzero: usize, rng: &mut Stream) -> DMatrix<f64> {
    let exp: Exp<f64> = Exp::new(1.0).expect("unit rate");
    let mut lambda = DMatrix::zeros(rows, k);
    for l in 0..k {
        let picked = sample_indices(rng, rows, nonzero);
        for idx in picked.iter() {
            lambda[(idx, l)] = exp.sample(rng);
        }
        let target = 1.0 - 0.1 * l as f64;
        let norm = lambda.column(l).norm();
        for j in 0..rows {
            lambda[(j, l)] *= target / norm;
        }
    }
    lambda
}

/// Scenario 1: twenty predictors on ten sparse factors of decaying scale; the
/// response loads only on the weakest factor.
pub fn scenario1(spec: &ScenarioSpec) -> ScenarioData {
    let mut rng = stream_from(spec.seed);
    let (p, k) = (20usize, 10usize);
    let mut lambda = DMatrix::zeros(p + 1, k);
    lambda.view_mut((0, 0), (p, k)).copy_from(&sparse_loadings(p, k, 10, &mut rng));
    lambda[(p, k - 1)] = 1.0;
    let raw = FactorModel::new(lambda, DVector::from_element(p + 1, 0.2), false)
        .expect("generated model is valid");
    let model = rescale_to_unit_diagonal(&raw);
    let note = format!("scenario 1, seed {}", spec.seed);
    let (train, test) = gaussian_data(&model, spec.n_train, spec.n_test, &mut rng, &note);
    ScenarioData { truth: Truth::Model(model), train, test }
}

/// Scenario 2: as scenario 1, but the response row takes part in the same
/// sparse-exponential mechanism (ten nonzero rows per column among all
/// twenty-one), so the outcome loads on several factors.
pub fn scenario2(spec: &ScenarioSpec) -> ScenarioData {
    let mut rng = stream_from(spec.seed);
    let (p, k) = (20usize, 10usize);
    let lambda = sparse_loadings(p + 1, k, 10, &mut rng);
    let raw = FactorModel::new(lambda, DVector::from_element(p + 1, 0.2), false)
        .expect("generated model is valid");
    let model = rescale_to_unit_diagonal(&raw);
    let note = format!("scenario 2, seed {}", spec.seed);
    let (train, test) = gaussian_data(&model, spec.n_train, spec.n_test, &mut rng, &note);
    ScenarioData { truth: Truth::Model(model), train, test }
}

/// Scenario 3: predictors from a dense eight-factor model, response from a
/// sparse linear regression with twelve nonzero coefficients; coefficients are
/// rescaled so the regression explains a tenth of the unit response variance.
pub fn scenario3(spec: &ScenarioSpec) -> ScenarioData {
    let mut rng = stream_from(spec.seed);
    let (p, k) = (20usize, 8usize);
    let exp: Exp<f64> = Exp::new(1.0).expect("unit rate");
    let lambda = DMatrix::from_fn(p, k, |_, _| exp.sample(&mut rng));
    let mut cov = &lambda * lambda.transpose();
    for j in 0..p {
        cov[(j, j)] += 0.01;
    }
    // Standardize Cov(x) to unit diagonal first, then scale the coefficients
    // so Var(βᵀx) = 0.1.
    let scale: Vec<f64> = (0..p).map(|j| 1.0 / cov[(j, j)].sqrt()).collect();
    for i in 0..p {
        for j in 0..p {
            cov[(i, j)] *= scale[i] * scale[j];
        }
    }
    let cov = SymmetricMatrix::new_unchecked(cov);

    let picked = sample_indices(&mut rng, p, 12);
    let mut beta = DVector::zeros(p);
    for idx in picked.iter() {
        let z: f64 = StandardNormal.sample(&mut rng);
        beta[idx] = z;
    }
    let signal = (beta.transpose() * cov.as_matrix() * &beta)[(0, 0)];
    beta *= (0.1 / signal).sqrt();

    let noise_variance: f64 = 0.9;
    let noise_sd = noise_variance.sqrt();
    let mean = DVector::zeros(p);
    let generate = |n: usize, rng: &mut Stream, note: String| {
        let x = gauss::mvn_sample_n(&mean, &cov, n, rng).expect("covariance is PD");
        let mut rows = DMatrix::zeros(n, p + 1);
        rows.view_mut((0, 0), (n, p)).copy_from(&x);
        for i in 0..n {
            let noise: f64 = StandardNormal.sample(rng);
            rows[(i, p)] = x.row(i).transpose().dot(&beta) + noise_sd * noise;
        }
        dataset_from_rows(rows, note)
    };
    let note = format!("scenario 3, seed {}", spec.seed);
    let train = generate(spec.n_train, &mut rng, format!("{note} (train)"));
    let test = generate(spec.n_test, &mut rng, format!("{note} (test)"));
    ScenarioData { truth: Truth::Regression { beta, noise_variance }, train, test }
}

/// Data from the fixed ten-variable two-factor model.
pub fn motivating(spec: &ScenarioSpec) -> ScenarioData {
    let mut rng = stream_from(spec.seed);
    let model = motivating_model();
    let note = format!("motivating model, seed {}", spec.seed);
    let (train, test) = gaussian_data(&model, spec.n_train, spec.n_test, &mut rng, &note);
    ScenarioData { truth: Truth::Model(model), train, test }
}

/// Dispatches on the scenario id.
pub fn generate(spec: &ScenarioSpec) -> ScenarioData {
    match spec.scenario {
        Scenario::One => scenario1(spec),
        Scenario::Two => scenario2(spec),
        Scenario::Three => scenario3(spec),
        Scenario::Motivating => motivating(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn motivating_model_shape() {
        let m = motivating_model();
        assert_eq!(m.p, 9);
        assert_eq!(m.k, 2);
        let cov = m.implied_covariance();
        // response marginal variance 0.2 + 0² + 1² = 1.2
        assert_relative_eq!(cov.as_matrix()[(9, 9)], 1.2, epsilon = 1e-12);
        assert!(gauss::cholesky(&cov).is_ok());
        // column norms ‖λ₁‖² = 150, ‖λ₂‖² = 5
        assert_relative_eq!(m.lambda.column(0).norm_squared(), 150.0, epsilon = 1e-12);
        assert_relative_eq!(m.lambda.column(1).norm_squared(), 5.0, epsilon = 1e-12);
    }

    fn spec(scenario: Scenario, seed: u64) -> ScenarioSpec {
        ScenarioSpec { scenario, n_train: 50, n_test: 20, seed }
    }

    #[test]
    fn scenario1_structure() {
        let data = scenario1(&spec(Scenario::One, 3));
        let Truth::Model(m) = &data.truth else { panic!("scenario 1 truth is a model") };
        assert_eq!(m.k, 10);
        let cov = m.implied_covariance();
        for j in 0..=m.p {
            assert_relative_eq!(cov.as_matrix()[(j, j)], 1.0, epsilon = 1e-12);
        }
        // The response row touches only the weakest column.
        for l in 0..9 {
            assert_eq!(m.lambda[(m.p, l)], 0.0);
        }
        assert!(m.lambda[(m.p, 9)] > 0.0);
        assert_eq!(data.train.n_rows(), 50);
        assert_eq!(data.test.n_rows(), 20);
    }

    #[test]
    fn generators_are_deterministic() {
        for scenario in [Scenario::One, Scenario::Two, Scenario::Three, Scenario::Motivating] {
            let a = generate(&spec(scenario, 11));
            let b = generate(&spec(scenario, 11));
            assert_eq!(a.train.predictors, b.train.predictors);
            assert_eq!(a.test.response, b.test.response);
        }
    }

    #[test]
    fn scenario3_structure() {
        let data = scenario3(&spec(Scenario::Three, 5));
        let Truth::Regression { beta, noise_variance } = &data.truth else {
            panic!("scenario 3 truth is a regression")
        };
        assert_eq!(*noise_variance, 0.9);
        assert_eq!(beta.iter().filter(|&&b| b != 0.0).count(), 12);
    }
}
