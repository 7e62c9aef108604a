//! Targeted selection of the response residual variance by K-fold
//! cross-validated predictive error over a grid, and prediction from fitted
//! draws.
//!
//! Every grid × fold cell re-standardizes its training complement, fits a
//! pinned-variance chain, and scores the held-out rows on that cell's
//! standardized scale. Cells are independent jobs; each derives its seed from
//! the master seed, the grid value's bits, and a hash of the fold's member
//! rows, so neither fold labels nor the rest of the grid affect a cell.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dataio::{self, DataError, Dataset};
use crate::gibbs::{self, PosteriorDraws, SamplerConfig, SamplerError, SamplerMode};
use crate::parallel;
use crate::rng::{self, stream_from};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("prediction and actual lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("predictor count mismatch: draws have p = {expected}, data has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid CV plan: {0}")]
    InvalidPlan(String),
    #[error("sampler failed in CV cell (grid index {grid_index}, fold {fold}): {source}")]
    Cell { grid_index: usize, fold: usize, source: SamplerError },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Strictly increasing grid of candidate response variances in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid {
    values: Vec<f64>,
}

impl SigmaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, SelectError> {
        if values.is_empty() {
            return Err(SelectError::InvalidGrid("grid is empty".into()));
        }
        for w in values.windows(2) {
            if w[1] <= w[0] {
                return Err(SelectError::InvalidGrid("values must be strictly increasing".into()));
            }
        }
        if values[0] <= 0.0 {
            return Err(SelectError::InvalidGrid(
                "values must be positive; a zero response variance is degenerate".into(),
            ));
        }
        // The response is standardized to unit variance, so candidate
        // residual variances live in (0, 1] (tolerating spacing round-off).
        if *values.last().expect("nonempty") > 1.0 + 1e-9 {
            return Err(SelectError::InvalidGrid(
                "values must not exceed 1; the response is standardized to unit variance".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `count` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linear(lo: f64, hi: f64, count: usize) -> Result<Self, SelectError> {
        if count == 0 {
            return Err(SelectError::InvalidGrid("count must be positive".into()));
        }
        if count == 1 {
            return Self::new(vec![lo]);
        }
        let step = (hi - lo) / (count - 1) as f64;
        Self::new((0..count).map(|i| lo + step * i as f64).collect())
    }

    /// The default selection grid: `0.01, 0.02, …, 1.00`.
    pub fn default_grid() -> Self {
        Self::new((1..=100).map(|i| i as f64 / 100.0).collect()).expect("static grid is valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Seeded K-fold assignment with fold sizes differing by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    n_folds: usize,
    assignment: Vec<usize>,
}

impl CvPlan {
    pub fn new(n_rows: usize, n_folds: usize, seed: u64) -> Result<Self, SelectError> {
        if n_folds < 2 || n_folds > n_rows {
            return Err(SelectError::InvalidPlan(format!(
                "need 2 <= n_folds <= n_rows, got n_folds = {n_folds}, n_rows = {n_rows}"
            )));
        }
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n_rows).collect();
        order.shuffle(&mut stream_from(seed));
        let mut assignment = vec![0usize; n_rows];
        for (pos, &row) in order.iter().enumerate() {
            assignment[row] = pos % n_folds;
        }
        Ok(Self { n_folds, assignment })
    }

    /// Uses an explicit assignment (for relabeling tests and replays).
    pub fn from_assignment(assignment: Vec<usize>, n_folds: usize) -> Result<Self, SelectError> {
        if n_folds < 2 {
            return Err(SelectError::InvalidPlan("need at least two folds".into()));
        }
        let mut sizes = vec![0usize; n_folds];
        for &f in &assignment {
            if f >= n_folds {
                return Err(SelectError::InvalidPlan(format!("fold label {f} out of range")));
            }
            sizes[f] += 1;
        }
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if *min == 0 || max - min > 1 {
            return Err(SelectError::InvalidPlan(format!(
                "fold sizes must differ by at most one, got {sizes:?}"
            )));
        }
        Ok(Self { n_folds, assignment })
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn n_rows(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    /// Rows held out by `fold`, ascending.
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&r| self.assignment[r] == fold).collect()
    }

    /// Training rows for `fold`, ascending.
    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&r| self.assignment[r] != fold).collect()
    }
}

/// Mean squared difference of two equal-length, nonempty slices.
pub fn mse(predicted: &[f64], actual: &[f64]) -> Result<f64, SelectError> {
    if predicted.len() != actual.len() {
        return Err(SelectError::LengthMismatch { a: predicted.len(), b: actual.len() });
    }
    if predicted.is_empty() {
        return Err(SelectError::EmptyInput);
    }
    let sum: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(sum / predicted.len() as f64)
}

/// Predicts standardized responses for new standardized predictor rows using
/// the posterior-mean induced coefficients. By linearity this equals the mean
/// of the per-draw predictions.
pub fn predict(draws: &PosteriorDraws, x_new: &DMatrix<f64>) -> Result<Vec<f64>, SelectError> {
    if draws.is_empty() {
        return Err(SelectError::EmptyInput);
    }
    if x_new.ncols() != draws.p {
        return Err(SelectError::DimensionMismatch { expected: draws.p, got: x_new.ncols() });
    }
    let beta = draws.mean_beta();
    Ok((x_new * beta).iter().copied().collect())
}

/// Selection result: the winning grid value and the mean CV-MSE curve.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub sigma_hat: f64,
    /// One `(sigma_y2, mean_cv_mse)` entry per grid value.
    pub curve: Vec<(f64, f64)>,
}

/// Cross-validated selection of the pinned response variance.
///
/// For each grid value, fits a pinned chain on every fold complement
/// (re-standardized) and scores held-out MSE; returns the value minimizing
/// the fold-mean curve, ties broken toward the largest value. `config`
/// supplies the per-cell chain lengths and the master seed; its mode is
/// ignored.
pub fn cv_select_sigma(
    data: &Dataset,
    grid: &SigmaGrid,
    plan: &CvPlan,
    config: &SamplerConfig,
) -> Result<CvSelection, SelectError> {
    if plan.n_rows() != data.n_rows() {
        return Err(SelectError::InvalidPlan(format!(
            "plan covers {} rows, data has {}",
            plan.n_rows(),
            data.n_rows()
        )));
    }
    let n_cells = grid.len() * plan.n_folds();
    let cell_results = parallel::try_map_indexed(n_cells, |cell| {
        let grid_index = cell / plan.n_folds();
        let fold = cell % plan.n_folds();
        let value = grid.values()[grid_index];
        cv_cell_mse(data, plan, fold, value, config)
            .map_err(|source| SelectError::Cell { grid_index, fold, source })
    })?;

    let mut curve = Vec::with_capacity(grid.len());
    for (gi, &value) in grid.values().iter().enumerate() {
        let start = gi * plan.n_folds();
        // Sum in value order so the mean is bit-identical under fold
        // relabeling (cells are label-independent, summation order is not).
        let mut cells = cell_results[start..start + plan.n_folds()].to_vec();
        cells.sort_by(f64::total_cmp);
        let mean = cells.iter().sum::<f64>() / plan.n_folds() as f64;
        curve.push((value, mean));
    }
    let mut best = 0;
    for i in 1..curve.len() {
        // `<=` prefers the larger value on ties (grid is ascending).
        if curve[i].1 <= curve[best].1 {
            best = i;
        }
    }
    Ok(CvSelection { sigma_hat: curve[best].0, curve })
}

fn cv_cell_mse(
    data: &Dataset,
    plan: &CvPlan,
    fold: usize,
    sigma_y2: f64,
    config: &SamplerConfig,
) -> Result<f64, SamplerError> {
    let train_rows = plan.complement_rows(fold);
    let test_rows = plan.fold_rows(fold);
    let train = data.select_rows(&train_rows);
    let test = data.select_rows(&test_rows);
    // Each cell standardizes on its own training complement and scores the
    // held-out rows with those parameters.
    let train_std = dataio::standardize(&train)
        .map_err(|e| SamplerError::Config(format!("cell standardization failed: {e}")))?;
    let params = train_std.standardization.clone().expect("standardize sets parameters");
    let test_std = dataio::apply_standardization(&params, &test)
        .map_err(|e| SamplerError::Config(format!("cell standardization failed: {e}")))?;

    // Seeded by grid value bits and fold membership: relabeling folds or
    // coarsening the grid cannot change a cell's chain.
    let cell_seed = rng::derive2(config.seed, sigma_y2.to_bits(), rng::hash_indices(&test_rows));
    let cell_config = SamplerConfig {
        mode: SamplerMode::Tebfar { sigma_y2 },
        seed: cell_seed,
        ..*config
    };
    let draws = gibbs::run_chain(&train_std, &cell_config)?;
    let predictions = predict(&draws, &test_std.predictors)
        .expect("draws are nonempty and dimensions match by construction");
    Ok(mse(&predictions, test_std.response.as_slice()).expect("nonempty test fold"))
}

/// Writes a CV curve as a two-column CSV `sigma_y2, mean_cv_mse`.
pub fn write_cv_curve<W: std::io::Write>(curve: &[(f64, f64)], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma_y2", "mean_cv_mse"])?;
    for (v, m) in curve {
        w.write_record([v.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
