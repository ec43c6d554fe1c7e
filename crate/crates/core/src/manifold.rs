//! Mutual k-nearest-neighbour Gaussian graph over the rows of a batch and the
//! Laplacian smoothness penalty on a linear model's predictions.

use nalgebra::DMatrix;

use crate::linalg::pairwise_sq_dists;
use crate::model::LinearModel;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 10;
const MIN_SIGMA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    /// `G = D − A`, n × n.
    pub matrix: DMatrix<f64>,
    /// Edge weights `A`, zero on the diagonal.
    pub adjacency: DMatrix<f64>,
    pub k: usize,
    pub sigma: f64,
}

impl Laplacian {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Laplacian of the same graph with rows and columns reordered so that
    /// new index `i` is old index `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Laplacian {
        let n = order.len();
        Laplacian {
            matrix: DMatrix::from_fn(n, n, |i, j| self.matrix[(order[i], order[j])]),
            adjacency: DMatrix::from_fn(n, n, |i, j| self.adjacency[(order[i], order[j])]),
            k: self.k,
            sigma: self.sigma,
        }
    }
}

/// `A_ij = exp(−‖x_i − x_j‖² / σ²)` when `i` and `j` are each among the
/// other's `k` nearest neighbours, 0 otherwise. `σ` is the mean distance
/// over the retained pairs. Distance ties go to the lower row index.
pub fn build_laplacian(features: &DMatrix<f64>, k: usize) -> Result<Laplacian> {
    let n = features.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must satisfy 1 <= k < n = {n}"
        )));
    }
    let d2 = pairwise_sq_dists(features);

    let mut is_neighbor = vec![vec![false; n]; n];
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        for &j in &order[..k] {
            is_neighbor[i][j] = true;
        }
    }

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if is_neighbor[i][j] && is_neighbor[j][i] {
                pairs.push((i, j));
            }
        }
    }
    let sigma = if pairs.is_empty() {
        1.0
    } else {
        let mean = pairs.iter().map(|&(i, j)| d2[(i, j)].sqrt()).sum::<f64>() / pairs.len() as f64;
        mean.max(MIN_SIGMA)
    };

    let mut adjacency = DMatrix::zeros(n, n);
    for &(i, j) in &pairs {
        let w = (-d2[(i, j)] / (sigma * sigma)).exp();
        adjacency[(i, j)] = w;
        adjacency[(j, i)] = w;
    }
    let mut matrix = -adjacency.clone();
    for i in 0..n {
        matrix[(i, i)] = adjacency.row(i).sum();
    }
    Ok(Laplacian {
        matrix,
        adjacency,
        k,
        sigma,
    })
}

/// `Xᵀ G X` for samples-as-rows `X`.
pub fn graph_gram(features: &DMatrix<f64>, lap: &Laplacian) -> Result<DMatrix<f64>> {
    if features.nrows() != lap.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows against a {}-node graph",
            features.nrows(),
            lap.len()
        )));
    }
    Ok(features.transpose() * &lap.matrix * features)
}

/// `Tr(Wᵀ Xᵀ G X W)`: half the A-weighted sum of squared prediction
/// differences over all row pairs.
pub fn manifold_penalty(model: &LinearModel, features: &DMatrix<f64>, lap: &Laplacian) -> Result<f64> {
    if features.ncols() != model.feature_count() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            model.feature_count()
        )));
    }
    if features.nrows() != lap.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows against a {}-node graph",
            features.nrows(),
            lap.len()
        )));
    }
    let f = features * &model.weights;
    let value = (f.transpose() * &lap.matrix * &f).trace();
    Ok(value.max(0.0))
}
