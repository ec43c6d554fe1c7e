//! Computable theory quantities: the Rademacher bound term `U²`, its
//! reduction `Δ(β̃)` from unlabeled data, and the length of a model trajectory.
//!
//! With `K` the kernel over all batch rows (labeled rows first), `K_L` its
//! first `l` rows and `L = G_f G_fᵀ`:
//!
//! ```text
//! J  = α̃⁻¹ G_fᵀ K_Lᵀ        M = α̃⁻¹ G_fᵀ K G_f
//! U² = α̃⁻¹ Tr(K_ll) − Δ(β̃),  Δ(β̃) = β̃ Tr(Jᵀ (I + β̃M)⁻¹ J)
//! ```

use nalgebra::DMatrix;

use crate::linalg::{gaussian_gram, median_row_distance, select_rows, solve_spd};
use crate::manifold::Laplacian;
use crate::model::LinearModel;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Kernel over all batch rows, labeled rows first.
    pub kernel: DMatrix<f64>,
    /// Number of leading labeled rows.
    pub labeled: usize,
    /// `G_f` with `L = G_f G_fᵀ`, n × r.
    pub graph_factor: DMatrix<f64>,
    pub alpha_t: f64,
    pub beta_t: f64,
}

impl BoundInputs {
    pub fn new(
        kernel: DMatrix<f64>,
        labeled: usize,
        graph_factor: DMatrix<f64>,
        alpha_t: f64,
        beta_t: f64,
    ) -> Result<Self> {
        let n = kernel.nrows();
        if kernel.ncols() != n || graph_factor.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "kernel {}x{}, graph factor {}x{}",
                n,
                kernel.ncols(),
                graph_factor.nrows(),
                graph_factor.ncols()
            )));
        }
        if labeled == 0 || labeled > n {
            return Err(Error::InvalidArgument(format!("labeled = {labeled} with n = {n}")));
        }
        let asym = (&kernel - kernel.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidArgument(format!("kernel asymmetric by {asym:e}")));
        }
        if !(alpha_t.is_finite() && alpha_t > 0.0) {
            return Err(Error::InvalidArgument("alpha_t must be > 0".into()));
        }
        if !(beta_t.is_finite() && beta_t >= 0.0) {
            return Err(Error::InvalidArgument("beta_t must be >= 0".into()));
        }
        Ok(Self { kernel, labeled, graph_factor, alpha_t, beta_t })
    }

    /// Gaussian kernel (median-distance width) and Laplacian factor for one
    /// batch, with the rows listed in `labeled_idx` moved to the front.
    pub fn for_batch(
        features: &DMatrix<f64>,
        labeled_idx: &[usize],
        lap: &Laplacian,
        alpha_t: f64,
        beta_t: f64,
    ) -> Result<Self> {
        let n = features.nrows();
        if lap.len() != n {
            return Err(Error::DimensionMismatch(format!("laplacian over {} rows, batch has {n}", lap.len())));
        }
        let mut order = labeled_idx.to_vec();
        let mut is_labeled = vec![false; n];
        for &i in labeled_idx {
            is_labeled[i] = true;
        }
        order.extend((0..n).filter(|&i| !is_labeled[i]));
        let x = select_rows(features, &order);
        let kernel = gaussian_gram(&x, median_row_distance(&x));
        let factor = laplacian_factor(&lap.permuted(&order).matrix);
        Self::new(kernel, labeled_idx.len(), factor, alpha_t, beta_t)
    }

    fn j_and_m(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let inv = 1.0 / self.alpha_t;
        let gt = self.graph_factor.transpose();
        let kl = self.kernel.rows(0, self.labeled);
        let j = &gt * kl.transpose() * inv;
        let m = &gt * &self.kernel * &self.graph_factor * inv;
        (j, m)
    }

    fn ridge_term(&self) -> f64 {
        self.kernel.view((0, 0), (self.labeled, self.labeled)).trace() / self.alpha_t
    }
}

/// `G_f = V·diag(√λ)` over the eigenpairs of `L` with `λ` above a relative
/// cutoff (negative round-off is clamped to zero and dropped).
pub fn laplacian_factor(lap: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lap.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (lap + lap.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-12 * max.max(1e-300)).collect();
    DMatrix::from_fn(n, keep.len(), |i, c| {
        let k = keep[c];
        eig.eigenvectors[(i, k)] * eig.eigenvalues[k].sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct U2Report {
    pub u2: f64,
    /// `α̃⁻¹ Tr(K_ll)`.
    pub ridge_term: f64,
    /// `Δ(β̃)`.
    pub reduction: f64,
    /// `U / (l · 2^{1/4})`.
    pub lower: f64,
    /// `U / l`.
    pub upper: f64,
}

/// `Δ(β̃) = β̃ Tr(Jᵀ (I + β̃M)⁻¹ J)` at the given `β̃`.
pub fn delta(inp: &BoundInputs, beta_t: f64) -> Result<f64> {
    if beta_t == 0.0 || inp.graph_factor.ncols() == 0 {
        return Ok(0.0);
    }
    let (j, m) = inp.j_and_m();
    let r = m.nrows();
    let a = DMatrix::identity(r, r) + m * beta_t;
    let x = solve_spd(&a, &j)?;
    Ok(beta_t * j.dot(&x))
}

pub fn rademacher_u2(inp: &BoundInputs) -> Result<U2Report> {
    let ridge_term = inp.ridge_term();
    let reduction = delta(inp, inp.beta_t)?;
    let u2 = ridge_term - reduction;
    if !u2.is_finite() {
        return Err(Error::NonFinite("U²".into()));
    }
    let u = u2.max(0.0).sqrt();
    let l = inp.labeled as f64;
    Ok(U2Report {
        u2,
        ridge_term,
        reduction,
        lower: u / (l * 2f64.powf(0.25)),
        upper: u / l,
    })
}

/// `lim_{β̃→∞} Δ(β̃) = Tr(Jᵀ M⁻¹ J)`; requires `M` positive definite.
pub fn delta_beta_limit(inp: &BoundInputs) -> Result<f64> {
    let (j, m) = inp.j_and_m();
    if m.nrows() == 0 {
        return Err(Error::LimitUndefined);
    }
    let chol = m.clone().cholesky().ok_or(Error::LimitUndefined)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // NaN diagonals also land here
    if !(lo > 1e-7 * hi) {
        return Err(Error::LimitUndefined);
    }
    Ok(j.dot(&chol.solve(&j)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLength {
    /// One entry per class column.
    pub per_class: Vec<f64>,
    pub total: f64,
}

/// `Σ_k ‖w_j(t_k) − w_j(t_{k−1})‖₂` per class column `j`, and their sum.
/// The `Δt` factors of the derivative cancel, so `times` is only validated.
pub fn trajectory_length(models: &[LinearModel], times: &[f64]) -> Result<TrajectoryLength> {
    if models.len() != times.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} models, {} times",
            models.len(),
            times.len()
        )));
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if times.iter().any(|t| !(0.0..=1.0).contains(t)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("times must be strictly increasing in [0, 1]".into()));
    }
    let shape = models[0].weights.shape();
    if let Some(bad) = models.iter().find(|m| m.weights.shape() != shape) {
        return Err(Error::DimensionMismatch(format!(
            "model shapes {:?} and {:?}",
            shape,
            bad.weights.shape()
        )));
    }
    let mut per_class = vec![0.0; shape.1];
    for pair in models.windows(2) {
        let diff = &pair[1].weights - &pair[0].weights;
        for (j, acc) in per_class.iter_mut().enumerate() {
            *acc += diff.column(j).norm();
        }
    }
    let total = per_class.iter().sum();
    Ok(TrajectoryLength { per_class, total })
}

/// Confidence tails `3B·√(ln(1/δ)/(2l))` and `B·√(ln(1/δ)/(2l))`.
pub fn confidence_tails(loss_bound: f64, delta: f64, labeled: usize) -> (f64, f64) {
    let root = ((1.0 / delta).ln() / (2.0 * labeled as f64)).sqrt();
    (3.0 * loss_bound * root, loss_bound * root)
}
