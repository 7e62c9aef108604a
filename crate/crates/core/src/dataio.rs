//! CSV ingestion, complete-case filtering, standardization, and seeded
//! train/test splitting.
//!
//! Parsing is strict decimal; the missing-value tokens are the empty string,
//! `NA`, and `NaN` (case-insensitive). Values that parse to non-finite floats
//! count as missing. Standardization parameters always come from a training
//! set and are applied unchanged to new data; predictions are mapped back to
//! the original response scale with the same parameters.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_from, Stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("cell at data row {row}, column {column:?} does not parse as a number: {cell:?}")]
    ParseError { row: usize, column: String, cell: String },
    #[error("no rows remain after dropping incomplete cases")]
    EmptyAfterFiltering,
    #[error("column {0:?} has zero variance")]
    ZeroVariance(String),
    #[error("invalid split size: n_train = {n_train}, n = {n}")]
    InvalidSize { n_train: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Per-column standardization parameters, predictors then response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub predictor_names: Vec<String>,
    pub response_name: String,
    pub predictor_means: Vec<f64>,
    pub predictor_sds: Vec<f64>,
    pub response_mean: f64,
    pub response_sd: f64,
}

/// A predictor matrix with its response column and bookkeeping.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub predictor_names: Vec<String>,
    pub response_name: String,
    pub predictors: DMatrix<f64>,
    pub response: DVector<f64>,
    /// Present when the values have been standardized; holds the parameters
    /// that produced them.
    pub standardization: Option<StandardizationParams>,
    /// Source path and filters applied, for provenance.
    pub note: String,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.predictors.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.ncols()
    }

    /// Predictors with the response appended as the last column.
    pub fn joined_matrix(&self) -> DMatrix<f64> {
        let n = self.n_rows();
        let p = self.n_predictors();
        let mut m = DMatrix::zeros(n, p + 1);
        m.view_mut((0, 0), (n, p)).copy_from(&self.predictors);
        m.set_column(p, &self.response);
        m
    }

    pub fn from_joined(
        joined: &DMatrix<f64>,
        predictor_names: Vec<String>,
        response_name: String,
        note: String,
    ) -> Self {
        let p = joined.ncols() - 1;
        Dataset {
            predictor_names,
            response_name,
            predictors: joined.view((0, 0), (joined.nrows(), p)).into_owned(),
            response: joined.column(p).into_owned(),
            standardization: None,
            note,
        }
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            predictor_names: self.predictor_names.clone(),
            response_name: self.response_name.clone(),
            predictors: self.predictors.select_rows(rows.iter()),
            response: self.response.select_rows(rows.iter()),
            standardization: self.standardization.clone(),
            note: self.note.clone(),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn parse_cell(cell: &str) -> Option<f64> {
    let v: f64 = cell.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Loads a CSV with a header row, extracting `response_column` by name.
///
/// With `drop_incomplete`, rows containing missing or unparseable cells are
/// dropped; otherwise the first offending cell is an error.
pub fn load_csv(
    path: &Path,
    response_column: &str,
    drop_incomplete: bool,
) -> Result<Dataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let response_idx = header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| DataError::MissingColumn(response_column.to_string()))?;
    let predictor_names: Vec<String> =
        header.iter().enumerate().filter(|&(i, _)| i != response_idx).map(|(_, h)| h.clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    'rows: for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut parsed = Vec::with_capacity(header.len());
        for (j, cell) in record.iter().enumerate() {
            match parse_cell(cell) {
                Some(v) => parsed.push(v),
                None => {
                    if drop_incomplete {
                        dropped += 1;
                        continue 'rows;
                    }
                    let detail = if is_missing(cell) { "" } else { cell };
                    return Err(DataError::ParseError {
                        row: i + 1,
                        column: header.get(j).cloned().unwrap_or_default(),
                        cell: detail.to_string(),
                    });
                }
            }
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyAfterFiltering);
    }

    let n = rows.len();
    let p = header.len() - 1;
    let mut predictors = DMatrix::zeros(n, p);
    let mut response = DVector::zeros(n);
    for (r, row) in rows.iter().enumerate() {
        let mut c = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == response_idx {
                response[r] = v;
            } else {
                predictors[(r, c)] = v;
                c += 1;
            }
        }
    }
    let mut note = format!("{}", path.display());
    if drop_incomplete {
        let _ = write!(note, " (complete cases; dropped {dropped} rows)");
    }
    Ok(Dataset {
        predictor_names,
        response_name: response_column.to_string(),
        predictors,
        response,
        standardization: None,
        note,
    })
}

fn column_stats(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Z-scores every column with its own mean and (population) standard
/// deviation; the parameters are stored on the result.
pub fn standardize(data: &Dataset) -> Result<Dataset, DataError> {
    let n = data.n_rows();
    let p = data.n_predictors();
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for j in 0..p {
        let (mean, sd) = column_stats(data.predictors.column(j).iter().copied(), n);
        if sd <= 0.0 {
            return Err(DataError::ZeroVariance(data.predictor_names[j].clone()));
        }
        means.push(mean);
        sds.push(sd);
    }
    let (response_mean, response_sd) = column_stats(data.response.iter().copied(), n);
    if response_sd <= 0.0 {
        return Err(DataError::ZeroVariance(data.response_name.clone()));
    }
    let params = StandardizationParams {
        predictor_names: data.predictor_names.clone(),
        response_name: data.response_name.clone(),
        predictor_means: means,
        predictor_sds: sds,
        response_mean,
        response_sd,
    };
    apply_standardization(&params, data)
}

/// Applies existing parameters (from a training set) to `data`.
pub fn apply_standardization(
    params: &StandardizationParams,
    data: &Dataset,
) -> Result<Dataset, DataError> {
    if params.predictor_means.len() != data.n_predictors() {
        return Err(DataError::DimensionMismatch(format!(
            "parameters cover {} predictors, data has {}",
            params.predictor_means.len(),
            data.n_predictors()
        )));
    }
    let mut predictors = data.predictors.clone();
    for j in 0..predictors.ncols() {
        let (m, s) = (params.predictor_means[j], params.predictor_sds[j]);
        for v in predictors.column_mut(j).iter_mut() {
            *v = (*v - m) / s;
        }
    }
    let response = data.response.map(|v| (v - params.response_mean) / params.response_sd);
    Ok(Dataset {
        predictor_names: data.predictor_names.clone(),
        response_name: data.response_name.clone(),
        predictors,
        response,
        standardization: Some(params.clone()),
        note: data.note.clone(),
    })
}

/// Maps standardized-scale predictions back to the original response scale.
pub fn unstandardize_predictions(params: &StandardizationParams, predictions: &[f64]) -> Vec<f64> {
    predictions.iter().map(|v| v * params.response_sd + params.response_mean).collect()
}

/// Seeded uniform partition into `n_train` training rows and the rest.
pub fn split(data: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let n = data.n_rows();
    if n_train == 0 || n_train >= n {
        return Err(DataError::InvalidSize { n_train, n });
    }
    let mut rng: Stream = stream_from(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (train_rows, test_rows) = order.split_at(n_train);
    let mut train_rows = train_rows.to_vec();
    let mut test_rows = test_rows.to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok((data.select_rows(&train_rows), data.select_rows(&test_rows)))
}

/// Writes a dataset as CSV with its header (predictors then response).
pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = data.predictor_names.clone();
    header.push(data.response_name.clone());
    w.write_record(&header)?;
    for i in 0..data.n_rows() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for j in 0..data.n_predictors() {
            rec.push(data.predictors[(i, j)].to_string());
        }
        rec.push(data.response[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a predictions CSV with columns `row_index, y_hat`.
pub fn write_predictions(path: &Path, predictions: &[f64]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row_index", "y_hat"])?;
    for (i, v) in predictions.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a predictions CSV written by [`write_predictions`].
pub fn read_predictions(path: &Path) -> Result<Vec<f64>, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let col = header
        .iter()
        .position(|h| h == "y_hat")
        .ok_or_else(|| DataError::MissingColumn("y_hat".into()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let cell = record.get(col).unwrap_or("");
        let v = parse_cell(cell).ok_or_else(|| DataError::ParseError {
            row: i + 1,
            column: "y_hat".into(),
            cell: cell.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn drops_incomplete_rows_when_asked() {
        let f = write_temp("a,b,y\n1,2,3\n4,,6\n7,8,9\n");
        let d = load_csv(f.path(), "y", true).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.predictors[(1, 0)], 7.0);
        assert!(d.note.contains("dropped 1"));
    }

    #[test]
    fn strict_mode_reports_the_cell() {
        let f = write_temp("a,b,y\n1,2,3\n4,,6\n");
        let err = load_csv(f.path(), "y", false).unwrap_err();
        match err {
            DataError::ParseError { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_response_column() {
        let f = write_temp("a,b\n1,2\n");
        assert!(matches!(load_csv(f.path(), "y", true), Err(DataError::MissingColumn(_))));
    }

    #[test]
    fn response_position_does_not_matter() {
        let f = write_temp("y,a,b\n9,1,2\n8,3,4\n");
        let d = load_csv(f.path(), "y", false).unwrap();
        assert_eq!(d.predictor_names, vec!["a", "b"]);
        assert_eq!(d.response[0], 9.0);
        assert_eq!(d.predictors[(1, 1)], 4.0);
    }

    #[test]
    fn standardize_round_trip() {
        let f = write_temp("a,y\n1,10\n2,20\n3,40\n4,20\n");
        let d = load_csv(f.path(), "y", false).unwrap();
        let s = standardize(&d).unwrap();
        let params = s.standardization.clone().unwrap();
        let back = unstandardize_predictions(&params, s.response.as_slice());
        for (orig, b) in d.response.iter().zip(back) {
            assert_relative_eq!(*orig, b, epsilon = 1e-12);
        }
        // standardizing an already standardized column is a no-op
        let s2 = standardize(&s).unwrap();
        assert!((s2.response - &s.response).amax() < 1e-12);
        assert!((s2.predictors - &s.predictors).amax() < 1e-12);
    }

    #[test]
    fn constant_column_is_zero_variance() {
        let f = write_temp("a,y\n2,1\n2,2\n2,3\n");
        let d = load_csv(f.path(), "y", false).unwrap();
        assert!(matches!(standardize(&d), Err(DataError::ZeroVariance(c)) if c == "a"));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let f = write_temp("a,y\n1,1\n2,2\n3,3\n4,4\n5,5\n");
        let d = load_csv(f.path(), "y", false).unwrap();
        let (train, test) = split(&d, 4, 99).unwrap();
        assert_eq!(train.n_rows(), 4);
        assert_eq!(test.n_rows(), 1);
        let (train2, _) = split(&d, 4, 99).unwrap();
        assert_eq!(train.predictors, train2.predictors);
        assert!(split(&d, 5, 1).is_err());
        assert!(split(&d, 0, 1).is_err());
    }

    #[test]
    fn csv_write_read_round_trip_is_exact() {
        let values = [1.0 / 3.0, 2.0_f64.sqrt(), -1e-17, 6.02214076e23];
        let d = Dataset {
            predictor_names: vec!["a".into()],
            response_name: "y".into(),
            predictors: DMatrix::from_column_slice(4, 1, &values),
            response: DVector::from_column_slice(&values),
            standardization: None,
            note: String::new(),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f.path()).unwrap();
        let back = load_csv(f.path(), "y", false).unwrap();
        for i in 0..4 {
            assert_eq!(back.predictors[(i, 0)], values[i]);
            assert_eq!(back.response[i], values[i]);
        }
    }
}
