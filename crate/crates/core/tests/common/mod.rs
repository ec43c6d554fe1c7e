//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// Exact optimum of the uniform-marginal transport LP. Its vertices are the
/// permutation matrices scaled by 1/d, so a branch-and-bound search over
/// permutations suffices.
pub fn lp_optimum_uniform(cost: &DMatrix<f64>) -> f64 {
    let d = cost.nrows();
    assert_eq!(d, cost.ncols());
    let row_min: Vec<f64> = (0..d).map(|i| cost.row(i).min()).collect();
    let mut tail = vec![0.0; d + 1];
    for i in (0..d).rev() {
        tail[i] = tail[i + 1] + row_min[i];
    }
    fn search(c: &DMatrix<f64>, tail: &[f64], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if acc + tail[row] >= *best {
            return;
        }
        if row == c.nrows() {
            *best = acc;
            return;
        }
        for j in 0..c.ncols() {
            if !used[j] {
                used[j] = true;
                search(c, tail, row + 1, used, acc + c[(row, j)], best);
                used[j] = false;
            }
        }
    }
    let mut best = (0..d).map(|i| cost[(i, i)]).sum::<f64>() + 1e-12;
    search(cost, &tail, 0, &mut vec![false; d], 0.0, &mut best);
    best / d as f64
}

/// Central finite-difference gradient of a scalar function of a matrix.
pub fn numeric_gradient(f: impl Fn(&DMatrix<f64>) -> f64, w: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    let mut probe = w.clone();
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// Largest entrywise relative error, with the scale floored at 1.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Composite trapezoid rule on `[a, b]` with `steps` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let inner: f64 = (1..steps).map(|k| f(a + k as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// Gaussian-kernel density estimate at `x`.
pub fn kde_at(samples: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * samples.len() as f64);
    samples.iter().map(|s| (-(x - s).powi(2) / (2.0 * h * h)).exp()).sum::<f64>() * norm
}

/// Squared RKHS distance between two empirical embeddings by explicit double sums.
pub fn mmd_sq(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let k = |a: f64, b: f64| (-(a - b).powi(2) / (2.0 * sigma * sigma)).exp();
    let mean = |p: &[f64], q: &[f64]| {
        p.iter().map(|&a| q.iter().map(|&b| k(a, b)).sum::<f64>()).sum::<f64>() / (p.len() * q.len()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}

/// Minimizer over `(W, b)` of
/// `‖XW + 1bᵀ − Y‖² + α‖W − P‖² + β·Tr(WᵀQW)` by conjugate gradients on the
/// normal equations, one class column at a time.
pub fn ls_reference(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    prior: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    q: &DMatrix<f64>,
    tol: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let (l, d) = x.shape();
    // augmented design [X 1]; the bias coordinate is unpenalized
    let xa = DMatrix::from_fn(l, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let mut a = xa.transpose() * &xa;
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] += beta * q[(i, j)];
        }
        a[(i, i)] += alpha;
    }
    let mut w = DMatrix::zeros(d, y.ncols());
    let mut b = DVector::zeros(y.ncols());
    for c in 0..y.ncols() {
        let mut rhs = xa.transpose() * y.column(c);
        for i in 0..d {
            rhs[i] += alpha * prior[(i, c)];
        }
        let sol = conjugate_gradient(&a, &rhs, tol);
        for i in 0..d {
            w[(i, c)] = sol[i];
        }
        b[c] = sol[d];
    }
    (w, b)
}

fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..10 * b.len().max(10) {
        if rs.sqrt() <= tol * b.norm().max(1.0) {
            break;
        }
        let ap = a * &p;
        let step = rs / p.dot(&ap);
        x += &p * step;
        r -= &ap * step;
        let next = r.dot(&r);
        p = &r + &p * (next / rs);
        rs = next;
    }
    x
}
