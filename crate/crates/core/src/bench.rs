//! Seeded benchmark driver: a method × training-size × replicate grid over a
//! simulation scenario, reduced to a long results table and a pivoted
//! mean-MSE table.
//!
//! Replicates share their data across methods (the data seed depends only on
//! the training size and replicate index), so method comparisons are paired.
//! Jobs run independently with derived seeds and results are assembled in
//! canonical `(method, ntrain, seed)` order regardless of completion order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::dataio::{self, DataError};
use crate::gibbs::{self, SamplerConfig, SamplerError, SamplerMode};
use crate::parallel;
use crate::rng;
use crate::select::{self, CvPlan, SelectError, SigmaGrid};
use crate::simgen::{self, Scenario, ScenarioSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("job failed (method {method}, ntrain {ntrain}, seed {seed}): {detail}")]
    Job { method: Method, ntrain: usize, seed: u64, detail: String },
}

/// Benchmarked regression methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    TebfarCv,
    Jbfm,
    LassoCv,
    RidgeCv,
    Ols,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::TebfarCv, Method::Jbfm, Method::LassoCv, Method::RidgeCv, Method::Ols];

    pub fn name(&self) -> &'static str {
        match self {
            Method::TebfarCv => "tebfar-cv",
            Method::Jbfm => "jbfm",
            Method::LassoCv => "lasso-cv",
            Method::RidgeCv => "ridge-cv",
            Method::Ols => "ols",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown method {s:?}; expected one of tebfar-cv, jbfm, lasso-cv, ridge-cv, ols"))
    }
}

/// Chain lengths for a sampler run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainLengths {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainLengths {
    fn apply(&self, cfg: &mut SamplerConfig) {
        cfg.iterations = self.iterations;
        cfg.burn_in = self.burn_in;
        cfg.thin = self.thin;
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub ntrains: Vec<usize>,
    pub ntest: usize,
    /// Number of replicates; replicate indices `0..n_seeds` are combined with
    /// `master_seed` to derive all randomness.
    pub n_seeds: u64,
    pub master_seed: u64,
    /// Grid searched by the CV-selected pinned-variance method.
    pub grid: SigmaGrid,
    pub cv_folds: usize,
    /// Chain lengths for CV grid cells.
    pub cell: ChainLengths,
    /// Chain lengths for final fits (pinned refit and the sampled-variance
    /// comparator).
    pub final_fit: ChainLengths,
    pub k_max: Option<usize>,
}

impl BenchConfig {
    pub fn new(scenario: Scenario, master_seed: u64) -> Self {
        Self {
            scenario,
            methods: Method::ALL.to_vec(),
            ntrains: vec![200],
            ntest: 10_000,
            n_seeds: 10,
            master_seed,
            grid: SigmaGrid::default_grid(),
            cv_folds: 10,
            cell: ChainLengths { iterations: 2000, burn_in: 1000, thin: 5 },
            final_fit: ChainLengths { iterations: 5000, burn_in: 2500, thin: 5 },
            k_max: None,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods requested".into()));
        }
        if self.ntrains.is_empty() {
            return Err(BenchError::Config("no training sizes requested".into()));
        }
        if self.n_seeds == 0 {
            return Err(BenchError::Config("need at least one seed".into()));
        }
        if self.ntest == 0 {
            return Err(BenchError::Config("need a nonempty test set".into()));
        }
        if self.cv_folds < 2 {
            return Err(BenchError::Config("need at least two CV folds".into()));
        }
        Ok(())
    }
}

/// One benchmark result.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub ntrain: usize,
    pub seed: u64,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct BenchResults {
    /// Long format, in canonical `(method, ntrain, seed)` order.
    pub rows: Vec<BenchRow>,
    pub methods: Vec<Method>,
    pub ntrains: Vec<usize>,
}

impl BenchResults {
    /// Mean MSE over seeds for `(ntrain, method)`.
    pub fn mean_mse(&self, ntrain: usize, method: Method) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for row in &self.rows {
            if row.ntrain == ntrain && row.method == method {
                sum += row.mse;
                count += 1;
            }
        }
        sum / count as f64
    }

    /// Pivot table: one row per training size, one column per method.
    pub fn pivot(&self) -> Vec<(usize, Vec<f64>)> {
        self.ntrains
            .iter()
            .map(|&nt| (nt, self.methods.iter().map(|&m| self.mean_mse(nt, m)).collect()))
            .collect()
    }

    pub fn write_long<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "ntrain", "seed", "mse"])?;
        for row in &self.rows {
            w.write_record([
                row.method.name().to_string(),
                row.ntrain.to_string(),
                row.seed.to_string(),
                row.mse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_pivot<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["ntrain".to_string()];
        header.extend(self.methods.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for (ntrain, means) in self.pivot() {
            let mut rec = vec![ntrain.to_string()];
            rec.extend(means.iter().map(|m| m.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the full grid. The row count is exactly
/// `methods.len() · ntrains.len() · n_seeds`.
pub fn run(cfg: &BenchConfig) -> Result<BenchResults, BenchError> {
    cfg.validate()?;
    let n_methods = cfg.methods.len();
    let n_sizes = cfg.ntrains.len();
    let n_jobs = n_methods * n_sizes * cfg.n_seeds as usize;
    let rows = parallel::try_map_indexed(n_jobs, |job| {
        let method = cfg.methods[job / (n_sizes * cfg.n_seeds as usize)];
        let rest = job % (n_sizes * cfg.n_seeds as usize);
        let ntrain = cfg.ntrains[rest / cfg.n_seeds as usize];
        let seed = (rest % cfg.n_seeds as usize) as u64;
        run_job(cfg, method, ntrain, seed)
            .map(|mse| BenchRow { method, ntrain, seed, mse })
            .map_err(|detail| BenchError::Job { method, ntrain, seed, detail })
    })?;
    Ok(BenchResults { rows, methods: cfg.methods.clone(), ntrains: cfg.ntrains.clone() })
}

/// Fits one method on one replicate and returns the test MSE on the original
/// data scale.
fn run_job(cfg: &BenchConfig, method: Method, ntrain: usize, seed: u64) -> Result<f64, String> {
    let against = |e: SamplerError| e.to_string();
    // Data are shared across methods: the seed ignores the method.
    let data_seed = rng::derive2(rng::derive(cfg.master_seed, 0xDA7A), ntrain as u64, seed);
    let fit_seed = rng::derive2(
        rng::derive(cfg.master_seed, method.name().len() as u64 ^ method_tag(method)),
        ntrain as u64,
        seed,
    );
    let spec =
        ScenarioSpec { scenario: cfg.scenario, n_train: ntrain, n_test: cfg.ntest, seed: data_seed };
    let data = simgen::generate(&spec);
    let train_std = dataio::standardize(&data.train).map_err(|e: DataError| e.to_string())?;
    let params = train_std.standardization.clone().expect("standardize sets parameters");
    let test_std =
        dataio::apply_standardization(&params, &data.test).map_err(|e| e.to_string())?;

    let predictions_std: Vec<f64> = match method {
        Method::Ols => {
            let beta = baselines::ols_fit(&train_std.predictors, &train_std.response)
                .map_err(|e: BaselineError| e.to_string())?;
            (&test_std.predictors * beta).iter().copied().collect()
        }
        Method::RidgeCv => {
            let plan = CvPlan::new(ntrain, cfg.cv_folds.min(ntrain / 2), fit_seed)
                .map_err(|e: SelectError| e.to_string())?;
            let grid = baselines::default_ridge_grid();
            let (best, _) = baselines::cv_tune(
                |x, y, l| baselines::ridge_fit(x, y, l),
                &train_std.predictors,
                &train_std.response,
                &grid,
                &plan,
            )
            .map_err(|e| e.to_string())?;
            let beta = baselines::ridge_fit(&train_std.predictors, &train_std.response, best)
                .map_err(|e| e.to_string())?;
            (&test_std.predictors * beta).iter().copied().collect()
        }
        Method::LassoCv => {
            let plan = CvPlan::new(ntrain, cfg.cv_folds.min(ntrain / 2), fit_seed)
                .map_err(|e| e.to_string())?;
            let grid = baselines::default_lasso_grid(&train_std.predictors, &train_std.response);
            let (best, _) = baselines::cv_tune(
                |x, y, l| Ok(baselines::lasso_fit(x, y, l).beta),
                &train_std.predictors,
                &train_std.response,
                &grid,
                &plan,
            )
            .map_err(|e| e.to_string())?;
            let fit = baselines::lasso_fit(&train_std.predictors, &train_std.response, best);
            if !fit.converged {
                return Err(format!("lasso did not converge after {} sweeps", fit.sweeps));
            }
            (&test_std.predictors * fit.beta).iter().copied().collect()
        }
        Method::Jbfm => {
            let mut chain = SamplerConfig::new(SamplerMode::Jbfm, fit_seed);
            cfg.final_fit.apply(&mut chain);
            chain.k_max = cfg.k_max;
            let draws = gibbs::run_chain(&train_std, &chain).map_err(against)?;
            select::predict(&draws, &test_std.predictors).map_err(|e| e.to_string())?
        }
        Method::TebfarCv => {
            let mut cell = SamplerConfig::new(SamplerMode::Jbfm, fit_seed);
            cfg.cell.apply(&mut cell);
            cell.k_max = cfg.k_max;
            let plan = CvPlan::new(ntrain, cfg.cv_folds.min(ntrain / 2), fit_seed)
                .map_err(|e| e.to_string())?;
            let selection = select::cv_select_sigma(&train_std, &cfg.grid, &plan, &cell)
                .map_err(|e| e.to_string())?;
            let mut refit = SamplerConfig::new(
                SamplerMode::Tebfar { sigma_y2: selection.sigma_hat },
                rng::derive(fit_seed, 0xF1),
            );
            cfg.final_fit.apply(&mut refit);
            refit.k_max = cfg.k_max;
            let draws = gibbs::run_chain(&train_std, &refit).map_err(against)?;
            select::predict(&draws, &test_std.predictors).map_err(|e| e.to_string())?
        }
    };

    let predictions = dataio::unstandardize_predictions(&params, &predictions_std);
    select::mse(&predictions, data.test.response.as_slice()).map_err(|e| e.to_string())
}

fn method_tag(method: Method) -> u64 {
    match method {
        Method::TebfarCv => 0x7E8F,
        Method::Jbfm => 0x1BFA,
        Method::LassoCv => 0x1A55,
        Method::RidgeCv => 0x41D6,
        Method::Ols => 0x015,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("pcr".parse::<Method>().is_err());
    }

    #[test]
    fn single_cell_bench_has_one_row() {
        let mut cfg = BenchConfig::new(Scenario::Three, 7);
        cfg.methods = vec![Method::Ols];
        cfg.ntrains = vec![120];
        cfg.ntest = 200;
        cfg.n_seeds = 1;
        let results = run(&cfg).unwrap();
        assert_eq!(results.rows.len(), 1);
        assert_eq!(results.rows[0].method, Method::Ols);
        assert!(results.rows[0].mse.is_finite());
    }

    #[test]
    fn pivot_means_match_long_format() {
        let mut cfg = BenchConfig::new(Scenario::Three, 8);
        cfg.methods = vec![Method::Ols, Method::RidgeCv];
        cfg.ntrains = vec![100, 150];
        cfg.ntest = 100;
        cfg.n_seeds = 3;
        cfg.cv_folds = 4;
        let results = run(&cfg).unwrap();
        assert_eq!(results.rows.len(), 2 * 2 * 3);
        for (ntrain, means) in results.pivot() {
            for (mi, &method) in results.methods.iter().enumerate() {
                let manual: Vec<f64> = results
                    .rows
                    .iter()
                    .filter(|r| r.ntrain == ntrain && r.method == method)
                    .map(|r| r.mse)
                    .collect();
                let mean = manual.iter().sum::<f64>() / manual.len() as f64;
                assert!((means[mi] - mean).abs() < 1e-12);
            }
        }
    }
}
