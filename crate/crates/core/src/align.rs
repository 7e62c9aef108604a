//! Post-processing of loadings matrices: varimax rotation, greedy
//! sign/permutation matching against a reference, and aligned posterior
//! summaries.
//!
//! Factors are identified only up to rotation, column order, and sign, so
//! cross-model or cross-draw comparisons first rotate to a varimax
//! representative and then match columns by absolute correlation.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::gibbs::PosteriorDraws;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("matrices have different shapes: {a_rows}×{a_cols} vs {b_rows}×{b_cols}")]
    DimensionMismatch { a_rows: usize, a_cols: usize, b_rows: usize, b_cols: usize },
    #[error("no draws to summarize")]
    EmptyDraws,
}

/// Varimax criterion: column-wise variance of squared loadings.
pub fn varimax_criterion(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows() as f64;
    (0..m.ncols())
        .map(|l| {
            let sq: Vec<f64> = m.column(l).iter().map(|v| v * v).collect();
            let mean = sq.iter().sum::<f64>() / d;
            sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / d
        })
        .sum()
}

/// Varimax rotation by pairwise Jacobi sweeps.
///
/// Returns the rotated matrix and the orthogonal rotation `R` with
/// `rotated = lambda · R`. The criterion is non-decreasing across sweeps;
/// iteration stops when a full sweep improves it by less than `tol`.
pub fn varimax(lambda: &DMatrix<f64>, tol: f64, max_iter: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = lambda.ncols();
    let d = lambda.nrows() as f64;
    let mut rotated = lambda.clone();
    let mut rotation = DMatrix::identity(k, k);
    if k < 2 {
        return (rotated, rotation);
    }
    let mut previous = varimax_criterion(&rotated);
    for _ in 0..max_iter {
        for a in 0..k - 1 {
            for b in a + 1..k {
                // Optimal planar angle for the (a, b) column pair.
                let (mut aa, mut bb, mut cc, mut dd) = (0.0, 0.0, 0.0, 0.0);
                for j in 0..lambda.nrows() {
                    let (x, y) = (rotated[(j, a)], rotated[(j, b)]);
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    aa += u;
                    bb += v;
                    cc += u * u - v * v;
                    dd += 2.0 * u * v;
                }
                let num = dd - 2.0 * aa * bb / d;
                let den = cc - (aa * aa - bb * bb) / d;
                let angle = 0.25 * num.atan2(den);
                if angle.abs() < 1e-12 {
                    continue;
                }
                let (s, c) = angle.sin_cos();
                for j in 0..rotated.nrows() {
                    let (x, y) = (rotated[(j, a)], rotated[(j, b)]);
                    rotated[(j, a)] = c * x + s * y;
                    rotated[(j, b)] = -s * x + c * y;
                }
                for j in 0..k {
                    let (x, y) = (rotation[(j, a)], rotation[(j, b)]);
                    rotation[(j, a)] = c * x + s * y;
                    rotation[(j, b)] = -s * x + c * y;
                }
            }
        }
        let current = varimax_criterion(&rotated);
        debug_assert!(current >= previous - 1e-12);
        if current - previous < tol {
            break;
        }
        previous = current;
    }
    (rotated, rotation)
}

/// Column matching of a target against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `permutation[i]` is the target column matched to reference column `i`.
    pub permutation: Vec<usize>,
    /// Sign applied to each matched target column (`+1` or `-1`).
    pub signs: Vec<f64>,
}

impl Alignment {
    /// Applies the permutation and signs to `target`.
    pub fn apply(&self, target: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(target.nrows(), target.ncols());
        for (i, (&from, &sign)) in self.permutation.iter().zip(&self.signs).enumerate() {
            let col = target.column(from) * sign;
            out.set_column(i, &col);
        }
        out
    }
}

fn column_correlation(a: &DMatrix<f64>, ca: usize, b: &DMatrix<f64>, cb: usize) -> f64 {
    let n = a.nrows() as f64;
    let (mut ma, mut mb) = (0.0, 0.0);
    for j in 0..a.nrows() {
        ma += a[(j, ca)];
        mb += b[(j, cb)];
    }
    ma /= n;
    mb /= n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for j in 0..a.nrows() {
        let (x, y) = (a[(j, ca)] - ma, b[(j, cb)] - mb);
        cov += x * y;
        va += x * x;
        vb += y * y;
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Greedy assignment maximizing absolute column correlations, each matched
/// target column sign-flipped to correlate positively with its reference.
pub fn align_columns(
    reference: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<(Alignment, DMatrix<f64>), AlignError> {
    if reference.shape() != target.shape() {
        return Err(AlignError::DimensionMismatch {
            a_rows: reference.nrows(),
            a_cols: reference.ncols(),
            b_rows: target.nrows(),
            b_cols: target.ncols(),
        });
    }
    let k = reference.ncols();
    let mut corr = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            corr[(i, j)] = column_correlation(reference, i, target, j);
        }
    }
    let mut permutation = vec![usize::MAX; k];
    let mut signs = vec![0.0; k];
    let mut ref_used = vec![false; k];
    let mut tgt_used = vec![false; k];
    for _ in 0..k {
        let (mut best, mut best_pair) = (-1.0, (0, 0));
        for i in 0..k {
            if ref_used[i] {
                continue;
            }
            for j in 0..k {
                if tgt_used[j] {
                    continue;
                }
                if corr[(i, j)].abs() > best {
                    best = corr[(i, j)].abs();
                    best_pair = (i, j);
                }
            }
        }
        let (i, j) = best_pair;
        ref_used[i] = true;
        tgt_used[j] = true;
        permutation[i] = j;
        signs[i] = if corr[(i, j)] < 0.0 { -1.0 } else { 1.0 };
    }
    let alignment = Alignment { permutation, signs };
    let aligned = alignment.apply(target);
    Ok((alignment, aligned))
}

/// Aligned entrywise posterior summary of the loadings draws.
#[derive(Debug, Clone)]
pub struct AlignedSummary {
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    /// Means with entries zeroed where the interval straddles zero.
    pub display: DMatrix<f64>,
}

/// Nearest-rank quantile of an unsorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Aligns every retained draw's loadings to `reference` (after varimax) and
/// reports entrywise means with equal-tailed 95% intervals; entries whose
/// interval covers zero display as zero.
pub fn summarize_aligned(
    draws: &PosteriorDraws,
    reference: &DMatrix<f64>,
) -> Result<AlignedSummary, AlignError> {
    if draws.is_empty() {
        return Err(AlignError::EmptyDraws);
    }
    let rows = reference.nrows();
    let cols = reference.ncols();
    let n = draws.len();
    let mut stacks = vec![Vec::with_capacity(n); rows * cols];
    for draw in &draws.draws {
        let (rotated, _) = varimax(&draw.model.lambda, 1e-8, 1000);
        let (_, aligned) = align_columns(reference, &rotated)?;
        for c in 0..cols {
            for r in 0..rows {
                stacks[c * rows + r].push(aligned[(r, c)]);
            }
        }
    }
    let mut mean = DMatrix::zeros(rows, cols);
    let mut lower = DMatrix::zeros(rows, cols);
    let mut upper = DMatrix::zeros(rows, cols);
    let mut display = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            let stack = &mut stacks[c * rows + r];
            let m = stack.iter().sum::<f64>() / n as f64;
            stack.sort_by(f64::total_cmp);
            let lo = quantile(stack, 0.025);
            let hi = quantile(stack, 0.975);
            mean[(r, c)] = m;
            lower[(r, c)] = lo;
            upper[(r, c)] = hi;
            display[(r, c)] = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { m };
        }
    }
    Ok(AlignedSummary { mean, lower, upper, display })
}

/// Writes an aligned summary as CSV rows `row, col, mean, lower, upper, display`.
pub fn write_summary<W: std::io::Write>(
    summary: &AlignedSummary,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "mean", "lower", "upper", "display"])?;
    for r in 0..summary.mean.nrows() {
        for c in 0..summary.mean.ncols() {
            w.write_record([
                r.to_string(),
                c.to_string(),
                summary.mean[(r, c)].to_string(),
                summary.lower[(r, c)].to_string(),
                summary.upper[(r, c)].to_string(),
                summary.display[(r, c)].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The induced-regression-preserving sign/permutation distance used in tests
/// and diagnostics: Frobenius distance after alignment.
pub fn aligned_distance(reference: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    match align_columns(reference, target) {
        Ok((_, aligned)) => (reference - aligned).norm(),
        Err(_) => f64::INFINITY,
    }
}
