//! Subcommand implementations.

use std::path::Path;

use nalgebra::DMatrix;

use tebfar::align::{summarize_aligned, varimax, write_summary};
use tebfar::bench::{BenchConfig, ChainLengths, Method};
use tebfar::dataio::{self, load_csv, standardize, unstandardize_predictions};
use tebfar::gibbs::{run_chain, SamplerConfig, SamplerMode};
use tebfar::klopt::{scan_sigma_grid, EmOptions};
use tebfar::model::ModelDocument;
use tebfar::select::{cv_select_sigma, mse, predict as predict_std, CvPlan, SigmaGrid};
use tebfar::simgen::{self, Scenario, ScenarioSpec, TruthDocument};

use crate::errors::CliError;
use crate::manifest::{read_model_dir, write_model_dir, CvEcho, CV_CURVE_FILE};
use crate::{
    AlignArgs, BenchArgs, EvalMseArgs, FitArgs, KlScanArgs, PredictArgs, SimulateArgs,
};

/// Parses `LO:HI:N` into `N` evenly spaced values.
fn parse_linear_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let usage = || {
        CliError::Usage(format!(
            "grid must be LO:HI:N with LO < HI and N >= 1, got {text:?}"
        ))
    };
    if parts.len() != 3 {
        return Err(usage());
    }
    let lo: f64 = parts[0].parse().map_err(|_| usage())?;
    let hi: f64 = parts[1].parse().map_err(|_| usage())?;
    let n: usize = parts[2].parse().map_err(|_| usage())?;
    if n == 0 || (n > 1 && hi <= lo) {
        return Err(usage());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + step * i as f64).collect())
}

fn parse_sigma_grid(text: &str) -> Result<SigmaGrid, CliError> {
    Ok(SigmaGrid::new(parse_linear_grid(text)?)?)
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let scenario: Scenario = args.scenario.parse().map_err(CliError::Usage)?;
    if args.ntrain == 0 || args.ntest == 0 {
        return Err(CliError::Usage("--ntrain and --ntest must be at least 1".into()));
    }
    let spec = ScenarioSpec {
        scenario,
        n_train: args.ntrain,
        n_test: args.ntest,
        seed: args.seed,
    };
    let data = simgen::generate(&spec);
    std::fs::create_dir_all(&args.out)?;
    dataio::write_csv(&data.train, &args.out.join("train.csv"))?;
    dataio::write_csv(&data.test, &args.out.join("test.csv"))?;
    let truth: TruthDocument = data.truth.to_document();
    let file = std::fs::File::create(args.out.join("truth.json"))?;
    serde_json::to_writer_pretty(file, &truth)?;
    Ok(())
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let mode_is_tebfar = match args.mode.as_str() {
        "tebfar" => true,
        "jbfm" => false,
        other => {
            return Err(CliError::Usage(format!(
                "--mode must be tebfar or jbfm, got {other:?}"
            )))
        }
    };
    if mode_is_tebfar && (args.sigma_y2.is_some() == args.cv.is_some()) {
        return Err(CliError::Usage(
            "tebfar mode needs exactly one of --sigma-y2 or --cv".into(),
        ));
    }
    if !mode_is_tebfar && (args.sigma_y2.is_some() || args.cv.is_some()) {
        return Err(CliError::Usage(
            "jbfm mode samples the response variance; --sigma-y2/--cv do not apply".into(),
        ));
    }

    let raw = load_csv(&args.data, &args.outcome, args.drop_incomplete)?;
    let train = standardize(&raw)?;
    let params = train.standardization.clone().expect("standardize sets parameters");

    let mut chain = SamplerConfig::new(SamplerMode::Jbfm, args.seed);
    chain.iterations = args.iters;
    chain.burn_in = args.burnin;
    chain.thin = args.thin;
    chain.k_max = args.kmax;

    let mut cv_echo = None;
    if mode_is_tebfar {
        let sigma_y2 = match args.sigma_y2 {
            Some(v) => v,
            None => {
                let folds = args.cv.expect("checked above");
                let grid = match &args.grid {
                    Some(text) => parse_sigma_grid(text)?,
                    None => SigmaGrid::default_grid(),
                };
                let plan = CvPlan::new(train.n_rows(), folds, args.seed)?;
                let mut cell = chain;
                cell.iterations = args.cv_iters;
                cell.burn_in = args.cv_burnin;
                cell.thin = args.cv_thin;
                let selection = cv_select_sigma(&train, &grid, &plan, &cell)?;
                std::fs::create_dir_all(&args.out)?;
                let curve = std::fs::File::create(args.out.join(CV_CURVE_FILE))?;
                tebfar::select::write_cv_curve(&selection.curve, curve)?;
                cv_echo = Some(CvEcho {
                    selected_sigma_y2: selection.sigma_hat,
                    n_folds: folds,
                    curve_file: CV_CURVE_FILE.to_string(),
                });
                selection.sigma_hat
            }
        };
        chain.mode = SamplerMode::Tebfar { sigma_y2 };
    }

    let draws = run_chain(&train, &chain)?;
    write_model_dir(&args.out, &draws, &args.outcome, &params, cv_echo)?;
    Ok(())
}

/// Reads the named columns from a CSV, strictly parsed, in the given order.
fn read_columns(path: &Path, names: &[String]) -> Result<DMatrix<f64>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let positions: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Data(format!("column {n:?} not found in {path:?}")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(positions.len());
        for (&pos, name) in positions.iter().zip(names) {
            let cell = record.get(pos).unwrap_or("");
            let value: f64 = cell.trim().parse().map_err(|_| {
                CliError::Data(format!(
                    "cell at data row {}, column {name:?} does not parse as a number: {cell:?}",
                    i + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Data(format!(
                    "non-finite value at data row {}, column {name:?}",
                    i + 1
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{path:?} has no data rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), names.len(), |r, c| rows[r][c]))
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let (manifest, draws) = read_model_dir(&args.model)?;
    let params = &manifest.standardization;
    let x = read_columns(&args.data, &params.predictor_names)?;
    let mut x_std = x;
    for j in 0..x_std.ncols() {
        let (m, s) = (params.predictor_means[j], params.predictor_sds[j]);
        for v in x_std.column_mut(j).iter_mut() {
            *v = (*v - m) / s;
        }
    }
    let standardized = predict_std(&draws, &x_std)?;
    let predictions = unstandardize_predictions(params, &standardized);
    dataio::write_predictions(&args.out, &predictions)?;
    Ok(())
}

pub fn eval_mse(args: EvalMseArgs) -> Result<(), CliError> {
    let predicted = dataio::read_predictions(&args.predictions)?;
    let actual: Vec<f64> = match &args.outcome {
        Some(name) => {
            let data = load_csv(&args.actual, name, false)?;
            data.response.iter().copied().collect()
        }
        None => dataio::read_predictions(&args.actual)?,
    };
    let value = mse(&predicted, &actual)?;
    println!("{value}");
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["mse"])?;
        w.write_record([value.to_string()])?;
        w.flush()?;
    }
    Ok(())
}

pub fn kl_scan(args: KlScanArgs) -> Result<(), CliError> {
    let model = match &args.model {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let doc: TruthDocument = serde_json::from_reader(file)?;
            match doc {
                TruthDocument::FactorModel(m) => m.to_model()?,
                TruthDocument::Regression { .. } => {
                    return Err(CliError::Data(
                        "the scan needs a factor-model truth, not a regression truth".into(),
                    ))
                }
            }
        }
        None => simgen::motivating_model(),
    };
    let grid = parse_linear_grid(&args.grid)?;
    let opts = EmOptions { n_restarts: args.restarts, seed: args.seed, ..EmOptions::default() };
    let s0 = model.implied_covariance();
    let scan = scan_sigma_grid(&s0, &model.lambda, args.k, &grid, &opts)?;

    let mut w = csv::Writer::from_path(&args.out)?;
    let mut header = vec!["sigma_y2".to_string(), "kl".to_string()];
    for c in 1..=model.k {
        header.push(format!("dist_col_{c}"));
    }
    header.extend(["ell_joint".into(), "ell_x".into(), "ell_y_given_x".into()]);
    w.write_record(&header)?;
    for row in &scan.rows {
        let mut rec = vec![row.sigma_y2.to_string(), row.fit.kl.to_string()];
        rec.extend(row.distance_to_column.iter().map(|d| d.to_string()));
        rec.push(row.loglik.joint.to_string());
        rec.push(row.loglik.x_marginal.to_string());
        rec.push(row.loglik.y_given_x.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn align(args: AlignArgs) -> Result<(), CliError> {
    let (_, draws) = read_model_dir(&args.model)?;
    if draws.is_empty() {
        return Err(CliError::Data("the fitted model has no retained draws".into()));
    }
    let reference = match &args.reference {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let doc: ModelDocument = serde_json::from_reader(file)?;
            doc.to_model()?.lambda
        }
        None => {
            let last = &draws.draws[draws.len() - 1].model.lambda;
            varimax(last, 1e-8, 1000).0
        }
    };
    let summary = summarize_aligned(&draws, &reference)?;
    let out = std::fs::File::create(&args.out)?;
    write_summary(&summary, out)?;
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    let scenario: Scenario = args.scenario.parse().map_err(CliError::Usage)?;
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(|m| m.trim().parse::<Method>().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    let ntrains: Vec<usize> = args
        .ntrain
        .split(',')
        .map(|n| {
            n.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad training size {n:?}")))
        })
        .collect::<Result<_, _>>()?;

    let mut cfg = BenchConfig::new(scenario, args.seed);
    cfg.methods = methods;
    cfg.ntrains = ntrains;
    cfg.ntest = args.ntest;
    cfg.n_seeds = args.seeds;
    cfg.cv_folds = args.cv;
    cfg.cell = ChainLengths {
        iterations: args.cv_iters,
        burn_in: args.cv_burnin,
        thin: args.cv_thin,
    };
    cfg.final_fit = ChainLengths {
        iterations: args.iters,
        burn_in: args.burnin,
        thin: args.thin,
    };
    cfg.k_max = args.kmax;
    if let Some(text) = &args.grid {
        cfg.grid = parse_sigma_grid(text)?;
    }

    let results = tebfar::bench::run(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let long = std::fs::File::create(args.out.join("results.csv"))?;
    results.write_long(long)?;
    let pivot = std::fs::File::create(args.out.join("summary.csv"))?;
    results.write_pivot(pivot)?;
    Ok(())
}
