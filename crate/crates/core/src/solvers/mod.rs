//! DAL-LS (closed form), DAL-CEL (gradient descent with step shrinking),
//! the ridge baseline and the task-flow driver.
//!
//! Both losses share the regularizers `α‖W − W̄‖²_F + β·Tr(Wᵀ XᵀGX W)`, where
//! `W̄ = d·T·W_prev` is the transported previous model (zero without reuse)
//! and `X` spans every row of the batch.

mod descent;
mod flow;
mod objective;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::TaskBatch;
use crate::efmdi::EfmdiMethod;
use crate::linalg::{column_means, select_rows, solve_spd};
use crate::manifold::{graph_gram, Laplacian};
use crate::model::LinearModel;
use crate::transport::{transport_model, TransportPlan};
use crate::{Error, Result};

pub use descent::{minimize, Descent, Objective};
pub use flow::{run_task_flow, FlowOutput, RunRecord, Variant};
pub use objective::{CelObjective, LsObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Ls,
    Cel,
}

/// Reporting constants for the generalization-bound tails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReporting {
    pub enabled: bool,
    /// Assumed bound on the loss.
    pub loss_bound: f64,
    pub delta: f64,
}

impl Default for BoundReporting {
    fn default() -> Self {
        Self {
            enabled: true,
            loss_bound: 10.0,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub loss: Loss,
    pub alpha: f64,
    pub beta: f64,
    pub step0: f64,
    pub shrink: f64,
    pub max_iter: usize,
    pub obj_tol: f64,
    pub knn_k: usize,
    pub efmdi: EfmdiMethod,
    /// Entropic strength of the feature transport (on max-normalized costs).
    pub epsilon: f64,
    /// Append a constant feature for DAL-CEL so it learns a bias.
    pub cel_bias: bool,
    pub bounds: BoundReporting,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Ls,
            alpha: 1.0,
            beta: 0.1,
            step0: 0.1,
            shrink: 0.5,
            max_iter: 1000,
            obj_tol: 1e-6,
            knn_k: crate::manifold::DEFAULT_K,
            efmdi: EfmdiMethod::Kme,
            epsilon: 1e-2,
            cel_bias: false,
            bounds: BoundReporting::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_owned()));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.step0.is_finite() && self.step0 > 0.0) {
            return bad("step0 must be > 0");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1");
        }
        if !(self.obj_tol.is_finite() && self.obj_tol > 0.0) {
            return bad("obj_tol must be > 0");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be >= 1");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

/// A previous model together with the plan that carries it into the
/// current feature indexing.
#[derive(Debug, Clone, Copy)]
pub struct ModelReuse<'a> {
    pub previous: &'a LinearModel,
    pub plan: &'a TransportPlan,
}

impl ModelReuse<'_> {
    pub fn prior(&self) -> Result<LinearModel> {
        transport_model(self.plan, self.previous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: LinearModel,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Labeled block, graph term and prior of one fit.
pub(crate) struct Problem {
    pub xl: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub gram: Option<DMatrix<f64>>,
    pub prior: LinearModel,
}

impl Problem {
    fn new(batch: &TaskBatch, reuse: Option<ModelReuse<'_>>, lap: Option<&Laplacian>, beta: f64) -> Result<Self> {
        if batch.labeled_count() == 0 {
            return Err(Error::InvalidArgument("batch has no labeled rows".into()));
        }
        let d = batch.feature_count();
        let c = batch.class_count;
        let prior = match reuse {
            Some(r) => r.prior()?,
            None => LinearModel::zeros(d, c),
        };
        if prior.feature_count() != d || prior.class_count() != c {
            return Err(Error::DimensionMismatch(format!(
                "prior is {}x{}, batch needs {d}x{c}",
                prior.feature_count(),
                prior.class_count()
            )));
        }
        let gram = match lap {
            Some(lap) if beta > 0.0 => Some(graph_gram(&batch.features, lap)?),
            _ => None,
        };
        Ok(Self {
            xl: batch.labeled_features(),
            y: batch.labels_onehot.clone(),
            gram,
            prior,
        })
    }
}

/// Closed-form DAL-LS:
/// `W = (X_lᵀ H X_l + αI + β XᵀGX)⁻¹ (X_lᵀ H Y + α W̄)`, with `H` centering the
/// labeled rows and the bias recovered from the labeled means.
pub fn fit_dal_ls(
    batch: &TaskBatch,
    reuse: Option<ModelReuse<'_>>,
    lap: Option<&Laplacian>,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let problem = Problem::new(batch, reuse, lap, cfg.beta)?;
    solve_ls(&problem, cfg.alpha, cfg.beta)
}

fn solve_ls(p: &Problem, alpha: f64, beta: f64) -> Result<FitResult> {
    let d = p.xl.ncols();
    let x_mean = column_means(&p.xl);
    let y_mean = column_means(&p.y);
    let xc = centered(&p.xl, &x_mean);
    let yc = centered(&p.y, &y_mean);

    let mut lhs = xc.transpose() * &xc + DMatrix::identity(d, d) * alpha;
    if let Some(q) = &p.gram {
        lhs += q * beta;
    }
    let rhs = xc.transpose() * &yc + &p.prior.weights * alpha;
    let weights = solve_spd(&lhs, &rhs)?;
    let bias = y_mean - weights.transpose() * x_mean;
    let objective = LsObjective::from_parts(xc, yc, p.prior.weights.clone(), alpha, beta, p.gram.clone());
    let value = objective.value(&weights);
    Ok(FitResult {
        model: LinearModel::new(weights, bias)?,
        objective_trace: vec![value],
        iterations: 1,
        converged: true,
    })
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j])
}

/// DAL-CEL by gradient descent from `W̄` (or zero without reuse).
pub fn fit_dal_cel(
    batch: &TaskBatch,
    reuse: Option<ModelReuse<'_>>,
    lap: Option<&Laplacian>,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let p = Problem::new(batch, reuse, lap, cfg.beta)?;
    let (xl, prior, gram) = if cfg.cel_bias {
        augment_bias(&p)
    } else {
        (p.xl.clone(), p.prior.weights.clone(), p.gram.clone())
    };
    let objective = CelObjective::new(xl, p.y.clone(), prior.clone(), cfg.alpha, cfg.beta, gram);
    let start = if reuse.is_some() {
        prior
    } else {
        DMatrix::zeros(prior.nrows(), prior.ncols())
    };
    let run = minimize(&objective, start, cfg.step0, cfg.shrink, cfg.max_iter, cfg.obj_tol)?;
    let model = if cfg.cel_bias {
        let d = p.xl.ncols();
        let bias = run.w.row(d).transpose();
        LinearModel::new(run.w.rows(0, d).into_owned(), bias)?
    } else {
        LinearModel::new(run.w, DVector::zeros(p.y.ncols()))?
    };
    Ok(FitResult {
        model,
        objective_trace: run.trace,
        iterations: run.iterations,
        converged: run.converged,
    })
}

/// Constant last feature: the prior's bias becomes its weight row and the
/// graph term ignores it (`G·1 = 0`).
fn augment_bias(p: &Problem) -> (DMatrix<f64>, DMatrix<f64>, Option<DMatrix<f64>>) {
    let (l, d) = p.xl.shape();
    let c = p.y.ncols();
    let xl = DMatrix::from_fn(l, d + 1, |i, j| if j < d { p.xl[(i, j)] } else { 1.0 });
    let prior = DMatrix::from_fn(d + 1, c, |i, j| {
        if i < d {
            p.prior.weights[(i, j)]
        } else {
            p.prior.bias[j]
        }
    });
    let gram = p.gram.as_ref().map(|q| {
        DMatrix::from_fn(d + 1, d + 1, |i, j| if i < d && j < d { q[(i, j)] } else { 0.0 })
    });
    (xl, prior, gram)
}

/// Multi-class ridge regression on one-hot targets with an unpenalized bias.
pub fn fit_ridge(features: &DMatrix<f64>, onehot: &DMatrix<f64>, alpha: f64) -> Result<LinearModel> {
    if features.nrows() != onehot.nrows() || features.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} rows of features, {} of targets",
            features.nrows(),
            onehot.nrows()
        )));
    }
    let p = Problem {
        xl: features.clone(),
        y: onehot.clone(),
        gram: None,
        prior: LinearModel::zeros(features.ncols(), onehot.ncols()),
    };
    Ok(solve_ls(&p, alpha, 0.0)?.model)
}

/// Ridge penalties tried when fitting the initiation model.
pub const RIDGE_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

/// Ridge with the penalty picked by k-fold validation (mean squared error of
/// the one-hot scores), refit on all labeled rows. Returns the model and the
/// chosen penalty.
pub fn fit_ridge_cv(batch: &TaskBatch, folds: usize, seed: u64) -> Result<(LinearModel, f64)> {
    let x = batch.labeled_features();
    let y = &batch.labels_onehot;
    let n = x.nrows();
    let folds = folds.clamp(2, n.max(2));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut best = (f64::INFINITY, RIDGE_GRID[0]);
    if n >= folds {
        for &alpha in &RIDGE_GRID {
            let mut sse = 0.0;
            for k in 0..folds {
                let (valid, train): (Vec<usize>, Vec<usize>) =
                    order.iter().enumerate().fold((vec![], vec![]), |(mut v, mut t), (pos, &i)| {
                        if pos % folds == k {
                            v.push(i)
                        } else {
                            t.push(i)
                        }
                        (v, t)
                    });
                let model = fit_ridge(&select_rows(&x, &train), &select_rows(y, &train), alpha)?;
                let pred = model.scores(&select_rows(&x, &valid))?;
                sse += crate::linalg::frobenius_sq(&(pred - select_rows(y, &valid)));
            }
            if sse < best.0 {
                best = (sse, alpha);
            }
        }
    }
    let model = fit_ridge(&x, y, best.1)?;
    Ok((model, best.1))
}

/// Class predictions: argmax of the scores, ties to the lower class.
pub fn predict(model: &LinearModel, features: &DMatrix<f64>) -> Result<Vec<usize>> {
    model.predict(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TaskBatch;

    fn batch(x: DMatrix<f64>, labels: &[usize], c: usize) -> TaskBatch {
        let idx: Vec<usize> = (0..labels.len()).collect();
        TaskBatch::new(1, x, idx, labels, c).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { alpha: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { shrink: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unregularized_ls_fits_square_system_exactly() {
        // 4 labeled rows, 3 features: centered system is square and invertible
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, -0.5, 0.3, 1.1, 0.4, -0.7, 0.5, 1.3, 0.1, -0.9, 0.2]);
        let b = batch(x.clone(), &[0, 1, 2, 1], 3);
        let cfg = SolverConfig { alpha: 0.0, beta: 0.0, ..Default::default() };
        let fit = fit_dal_ls(&b, None, None, &cfg).unwrap();
        let resid = fit.model.scores(&x).unwrap() - &b.labels_onehot;
        // normal-equation gradient of the centered loss vanishes
        let xm = column_means(&x);
        let xc = centered(&x, &xm);
        assert!((xc.transpose() * &resid).amax() < 1e-8);
        assert!(fit.final_objective() < 1e-12);
    }

    #[test]
    fn ridge_matches_ls_without_prior_or_graph() {
        let x = DMatrix::from_fn(9, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let labels = [0, 1, 0, 1, 1, 0, 0, 1, 0];
        let b = batch(x.clone(), &labels, 2);
        let cfg = SolverConfig { beta: 0.0, alpha: 0.7, ..Default::default() };
        let ls = fit_dal_ls(&b, None, None, &cfg).unwrap();
        let ridge = fit_ridge(&x, &b.labels_onehot, 0.7).unwrap();
        assert!((ls.model.weights - ridge.weights).amax() < 1e-12);
        assert!((ls.model.bias - ridge.bias).amax() < 1e-12);
    }

    #[test]
    fn single_labeled_sample_gradient_at_zero() {
        let x = DMatrix::from_row_slice(1, 2, &[0.5, -2.0]);
        let y = crate::dataio::one_hot(&[0], 2);
        let obj = CelObjective::new(x.clone(), y, DMatrix::zeros(2, 2), 0.0, 0.0, None);
        let g = obj.gradient(&DMatrix::zeros(2, 2));
        let expect = DMatrix::from_row_slice(2, 2, &[0.5 * -0.5, 0.5 * 0.5, -2.0 * -0.5, -2.0 * 0.5]);
        assert!((g - expect).amax() < 1e-15);
    }

    #[test]
    fn cel_separable_batch_reaches_full_training_accuracy() {
        let x = DMatrix::from_row_slice(6, 2, &[2.0, 1.0, 1.5, 2.0, 3.0, 0.5, -2.0, -1.0, -1.0, -2.5, -3.0, 0.2]);
        let labels = [0, 0, 0, 1, 1, 1];
        let b = batch(x.clone(), &labels, 2);
        let cfg = SolverConfig { alpha: 1e-6, beta: 0.0, loss: Loss::Cel, ..Default::default() };
        let fit = fit_dal_cel(&b, None, None, &cfg).unwrap();
        assert_eq!(fit.model.predict(&x).unwrap(), labels.to_vec());
        assert!(fit.objective_trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn cel_bias_augmentation_learns_offset() {
        // classes split at x = 3, so a bias is required
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 2.0, 4.0, 5.0, 6.0]);
        let labels = [0, 0, 0, 1, 1, 1];
        let b = batch(x.clone(), &labels, 2);
        let cfg = SolverConfig { alpha: 1e-3, beta: 0.0, cel_bias: true, ..Default::default() };
        let fit = fit_dal_cel(&b, None, None, &cfg).unwrap();
        assert_eq!(fit.model.predict(&x).unwrap(), labels.to_vec());
        assert!(fit.model.bias.amax() > 0.0);
    }

    #[test]
    fn ridge_cv_picks_from_grid() {
        let x = DMatrix::from_fn(40, 2, |i, j| ((i * 13 + j * 7) % 11) as f64 - 5.0);
        let labels: Vec<usize> = (0..40).map(|i| usize::from(x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0)).collect();
        let b = TaskBatch::new(0, x.clone(), (0..40).collect(), &labels, 2).unwrap();
        let (model, alpha) = fit_ridge_cv(&b, 5, 0).unwrap();
        assert!(RIDGE_GRID.contains(&alpha));
        let acc = model.predict(&x).unwrap().iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(acc >= 36);
    }
}
