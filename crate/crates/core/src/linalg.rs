//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Solve `a · x = b` for symmetric positive-definite `a`.
///
/// On factorization failure a `1e-10 · I` jitter is added once before giving up.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let n = a.nrows();
    let jittered = a + DMatrix::<f64>::identity(n, n) * 1e-10;
    match jittered.cholesky() {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::Singular(format!(
            "{n}x{n} system not positive definite after jitter"
        ))),
    }
}

/// Rows of `x` selected by `idx`, in order.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Squared Euclidean distances between all row pairs.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let d = x[(i, c)] - x[(j, c)];
                s += d * d;
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Median of a non-empty slice (average of the middle pair for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gaussian kernel matrix `exp(-‖x_i - x_j‖² / (2σ²))` over rows of `x`.
pub fn gaussian_gram(x: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let d2 = pairwise_sq_dists(x);
    let denom = 2.0 * sigma * sigma;
    d2.map(|v| (-v / denom).exp())
}

/// Median pairwise row distance, falling back to the mean positive distance
/// and then to 1.0 when all points coincide.
pub fn median_row_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let d2 = pairwise_sq_dists(x);
    let mut dists: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(d2[(i, j)].sqrt());
        }
    }
    positive_median(&mut dists)
}

pub(crate) fn positive_median(dists: &mut [f64]) -> f64 {
    if dists.is_empty() {
        return 1.0;
    }
    let m = median(dists);
    if m > 0.0 {
        return m;
    }
    let (sum, count) = dists
        .iter()
        .filter(|d| **d > 0.0)
        .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
    if count > 0 {
        sum / count as f64
    } else {
        1.0
    }
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n)
}
