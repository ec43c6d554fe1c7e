use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit_dal_cel, fit_dal_ls, fit_ridge_cv, FitResult, Loss, ModelReuse, SolverConfig};
use crate::dataio::{Standardizer, StreamTask, TaskBatch};
use crate::diagnostics::{confidence_tails, rademacher_u2, BoundInputs};
use crate::efmdi::{cost_matrix, encode, median_heuristic, BandwidthRule, EfmdiMethod};
use crate::linalg::log_sum_exp;
use crate::manifold::{build_laplacian, Laplacian};
use crate::model::LinearModel;
use crate::transport::{plan_features, SinkhornConfig, TransportPlan};
use crate::{Error, Result};

const CV_FOLDS: usize = 5;
const RISK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Transported prior and manifold term.
    Dal,
    /// Transported prior only.
    LsOt,
    /// Manifold term only; the α-term shrinks toward zero.
    LsG,
    /// Plain ridge on the labeled rows.
    Ridge,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dal, Variant::LsOt, Variant::LsG, Variant::Ridge];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dal => "dal",
            Variant::LsOt => "ls_ot",
            Variant::LsG => "ls_g",
            Variant::Ridge => "ridge",
        }
    }

    fn uses_prior(self) -> bool {
        matches!(self, Variant::Dal | Variant::LsOt)
    }

    fn uses_graph(self) -> bool {
        matches!(self, Variant::Dal | Variant::LsG)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Metrics of one task of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub task: usize,
    /// On the batch's unlabeled rows.
    pub accuracy: f64,
    pub labeled_count: usize,
    pub eval_count: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// Labeled-set loss of the prior the fit was pulled toward (floored).
    pub prior_risk: f64,
    pub alpha_tilde: f64,
    pub beta_tilde: f64,
    pub u2: Option<f64>,
    pub u2_ridge_term: Option<f64>,
    pub u2_reduction: Option<f64>,
    pub u2_lower: Option<f64>,
    pub u2_upper: Option<f64>,
    pub tail_local: f64,
    pub tail_trajectory: f64,
    /// `Σ_j ‖w_j(t) − w_j(t−1)‖` against the previous model of the run.
    pub trajectory_increment: f64,
    pub transport_iterations: Option<usize>,
    pub transport_violation: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutput {
    /// One record per task `t ≥ 1`.
    pub records: Vec<RunRecord>,
    /// Objective trace of each fit, aligned with `records`.
    pub traces: Vec<Vec<f64>>,
    /// Initiation model followed by the model of every later task.
    pub models: Vec<LinearModel>,
    /// Ridge penalty chosen for the initiation model.
    pub source_alpha: f64,
}

/// Run one variant over a stream. Features are standardized with task-0
/// statistics, the initiation model is cross-validated ridge, and every later
/// task is fitted from its predecessor. `seed` drives
/// the validation folds.
pub fn run_task_flow(stream: &[StreamTask], cfg: &SolverConfig, variant: Variant, seed: u64) -> Result<FlowOutput> {
    cfg.validate()?;
    if stream.len() < 2 {
        return Err(Error::InvalidArgument(format!("stream has {} batches, need >= 2", stream.len())));
    }
    if stream[0].batch.labeled_count() != stream[0].batch.len() {
        return Err(Error::InvalidArgument("task 0 must be fully labeled".into()));
    }
    let width = stream[0].batch.feature_count();
    for (t, task) in stream.iter().enumerate().skip(1) {
        if task.batch.feature_count() != width {
            let msg = format!("{} features, task 0 has {width}", task.batch.feature_count());
            return Err(Error::DimensionMismatch(msg).at_task(t));
        }
    }
    let stream = Standardizer::apply_to_stream(stream);
    let (source, source_alpha) = fit_ridge_cv(&stream[0].batch, CV_FOLDS, seed).map_err(|e| e.at_task(0))?;

    let count = stream.len() - 1;
    let mut records = Vec::with_capacity(count);
    let mut traces = Vec::with_capacity(count);
    let mut models = Vec::with_capacity(stream.len());
    models.push(source);
    for t in 1..stream.len() {
        let started = Instant::now();
        let (fit, mut record) =
            fit_task(&stream[t - 1].batch, &stream[t], &models[t - 1], cfg, variant, seed).map_err(|e| e.at_task(t))?;
        record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        traces.push(fit.objective_trace);
        models.push(fit.model);
        records.push(record);
    }
    Ok(FlowOutput { records, traces, models, source_alpha })
}

fn fit_task(
    previous: &TaskBatch,
    task: &StreamTask,
    prev_model: &LinearModel,
    cfg: &SolverConfig,
    variant: Variant,
    seed: u64,
) -> Result<(FitResult, RunRecord)> {
    let batch = &task.batch;
    let beta = if variant.uses_graph() { cfg.beta } else { 0.0 };
    let loss = if variant == Variant::Ridge { Loss::Ls } else { cfg.loss };
    let run_cfg = SolverConfig { beta, loss, ..*cfg };

    let plan = if variant.uses_prior() {
        Some(feature_plan(batch, previous, cfg)?)
    } else {
        None
    };
    let reuse = plan.as_ref().map(|plan| ModelReuse { previous: prev_model, plan });
    let lap = build_laplacian(&batch.features, cfg.knn_k.min(batch.len().saturating_sub(1)).max(1))?;

    let fit = match loss {
        Loss::Ls => fit_dal_ls(batch, reuse, Some(&lap), &run_cfg)?,
        Loss::Cel => fit_dal_cel(batch, reuse, Some(&lap), &run_cfg)?,
    };
    let predictions = fit.model.predict(&batch.features)?;
    let accuracy = task.truth.accuracy(batch, &predictions);

    let prior = match reuse {
        Some(r) => r.prior()?,
        None => LinearModel::zeros(batch.feature_count(), batch.class_count),
    };
    let prior_risk = labeled_risk(&prior, batch, loss)?.max(RISK_FLOOR);
    let c = batch.class_count as f64;
    let alpha_tilde = c * cfg.alpha / prior_risk;
    let beta_tilde = c * beta / prior_risk;
    let u2 = if cfg.bounds.enabled && alpha_tilde > 0.0 {
        Some(u2_for(batch, &lap, alpha_tilde, beta_tilde)?)
    } else {
        None
    };
    let (tail_local, tail_trajectory) =
        confidence_tails(cfg.bounds.loss_bound, cfg.bounds.delta, batch.labeled_count());
    let trajectory_increment = if prev_model.weights.shape() == fit.model.weights.shape() {
        let diff = &fit.model.weights - &prev_model.weights;
        diff.column_iter().map(|c| c.norm()).sum()
    } else {
        f64::NAN
    };

    let record = RunRecord {
        variant,
        seed,
        task: batch.index,
        accuracy,
        labeled_count: batch.labeled_count(),
        eval_count: batch.unlabeled_idx().len(),
        iterations: fit.iterations,
        converged: fit.converged,
        final_objective: fit.final_objective(),
        prior_risk,
        alpha_tilde,
        beta_tilde,
        u2: u2.map(|r| r.u2),
        u2_ridge_term: u2.map(|r| r.ridge_term),
        u2_reduction: u2.map(|r| r.reduction),
        u2_lower: u2.map(|r| r.lower),
        u2_upper: u2.map(|r| r.upper),
        tail_local,
        tail_trajectory,
        trajectory_increment,
        transport_iterations: plan.as_ref().map(|p| p.iterations),
        transport_violation: plan.as_ref().map(|p| p.violation),
        wall_ms: 0.0,
    };
    Ok((fit, record))
}

/// Plan from the features of the current batch (rows) to the previous one.
/// KME uses one kernel width shared by both batches.
fn feature_plan(current: &TaskBatch, previous: &TaskBatch, cfg: &SolverConfig) -> Result<TransportPlan> {
    let rule = match cfg.efmdi {
        EfmdiMethod::Kme => BandwidthRule::Fixed(median_heuristic(&[&current.features, &previous.features])),
        EfmdiMethod::Kde => BandwidthRule::Auto,
    };
    let cur = encode(current, cfg.efmdi, rule)?;
    let prev = encode(previous, cfg.efmdi, rule)?;
    let cost = cost_matrix(&cur, &prev)?;
    let sinkhorn = SinkhornConfig {
        epsilon: cfg.epsilon,
        ..SinkhornConfig::default()
    };
    plan_features(&cost, &sinkhorn)
}

fn u2_for(batch: &TaskBatch, lap: &Laplacian, alpha_t: f64, beta_t: f64) -> Result<crate::diagnostics::U2Report> {
    let inp = BoundInputs::for_batch(&batch.features, &batch.labeled_idx, lap, alpha_t, beta_t)?;
    rademacher_u2(&inp)
}

/// Mean labeled-row loss: squared error of the scores, or softmax
/// cross-entropy.
pub(crate) fn labeled_risk(model: &LinearModel, batch: &TaskBatch, loss: Loss) -> Result<f64> {
    let scores: DMatrix<f64> = model.scores(&batch.labeled_features())?;
    let y = &batch.labels_onehot;
    let l = scores.nrows() as f64;
    let total: f64 = match loss {
        Loss::Ls => crate::linalg::frobenius_sq(&(&scores - y)),
        Loss::Cel => (0..scores.nrows())
            .map(|i| {
                let row = scores.row(i);
                log_sum_exp(row.iter().copied()) - row.dot(&y.row(i))
            })
            .sum(),
    };
    Ok(total / l)
}
