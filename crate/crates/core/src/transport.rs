//! Entropic optimal transport between feature marginals and model transport.
//!
//! The plan minimizes `⟨T, C⟩ + ε·Σ T_ij (log T_ij − 1)` over couplings with
//! the prescribed row and column sums. It is computed by alternating
//! marginal scaling in the log domain (dual potentials `f`, `g`), so that
//! `T_ij = exp((f_i + g_j − C_ij) / ε)` never overflows for small `ε`.

use nalgebra::{DMatrix, DVector};

use crate::efmdi::CostMatrix;
use crate::linalg::log_sum_exp;
use crate::model::LinearModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic strength, relative to the normalized cost when `normalize` is set.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the ∞-norm marginal violation drops below this.
    pub tol: f64,
    /// Divide the cost by its largest entry before solving.
    pub normalize: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            max_iter: 5000,
            tol: 1e-9,
            normalize: true,
        }
    }
}

/// Coupling between current-batch features (rows) and previous-batch
/// features (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: DMatrix<f64>,
    pub row_marginal: DVector<f64>,
    pub col_marginal: DVector<f64>,
    pub epsilon: f64,
    /// Multiplier applied when transporting a model (the feature count).
    pub scale: f64,
    /// Factor the cost was divided by before solving (1 when not normalized).
    pub cost_scale: f64,
    pub iterations: usize,
    /// Final ∞-norm marginal violation.
    pub violation: f64,
    pub converged: bool,
}

impl TransportPlan {
    /// `⟨T, C⟩` against an arbitrary cost of matching shape.
    pub fn transport_cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.coupling.component_mul(cost).sum()
    }

    /// Largest deviation of the coupling's row and column sums from the marginals.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(&self.coupling, &self.row_marginal, &self.col_marginal)
    }
}

pub fn uniform_marginal(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / d as f64)
}

fn marginal_violation(t: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let rows = t
        .row_iter()
        .zip(a.iter())
        .map(|(r, ai)| (r.sum() - ai).abs())
        .fold(0.0, f64::max);
    let cols = t
        .column_iter()
        .zip(b.iter())
        .map(|(c, bj)| (c.sum() - bj).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

fn check_distribution(v: &DVector<f64>, name: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) || (v.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "{name} marginal is not a probability vector"
        )));
    }
    Ok(())
}

const WARM_STAGE_SWEEPS: usize = 200;
const WARM_STAGE_TOL: f64 = 1e-4;
const FINAL_SWEEPS: usize = 300;

/// Dual potentials of the entropic problem on a fixed (normalized) cost.
struct Dual<'a> {
    c: &'a DMatrix<f64>,
    a: &'a DVector<f64>,
    b: &'a DVector<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Dual<'a> {
    fn new(c: &'a DMatrix<f64>, a: &'a DVector<f64>, b: &'a DVector<f64>) -> Self {
        Self {
            c,
            a,
            b,
            log_a: a.iter().map(|v| v.ln()).collect(),
            log_b: b.iter().map(|v| v.ln()).collect(),
            f: vec![0.0; c.nrows()],
            g: vec![0.0; c.ncols()],
        }
    }

    fn update_f(&mut self, eps: f64) {
        let (c, g) = (self.c, &self.g);
        for (i, fi) in self.f.iter_mut().enumerate() {
            let lse = log_sum_exp((0..g.len()).map(|j| (g[j] - c[(i, j)]) / eps));
            *fi = eps * (self.log_a[i] - lse);
        }
    }

    fn update_g(&mut self, eps: f64) {
        let (c, f) = (self.c, &self.f);
        for (j, gj) in self.g.iter_mut().enumerate() {
            let lse = log_sum_exp((0..f.len()).map(|i| (f[i] - c[(i, j)]) / eps));
            *gj = eps * (self.log_b[j] - lse);
        }
    }

    fn log_plan(&self, i: usize, j: usize, eps: f64) -> f64 {
        (self.f[i] + self.g[j] - self.c[(i, j)]) / eps
    }

    /// Row-sum violation; columns are exact right after a g-update.
    fn row_violation(&self, eps: f64) -> f64 {
        (0..self.f.len())
            .map(|i| {
                let lse = log_sum_exp((0..self.g.len()).map(|j| self.log_plan(i, j, eps)));
                (lse.exp() - self.a[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Alternating scaling sweeps until the violation drops below `tol`;
    /// returns the number of sweeps used.
    fn sweeps(&mut self, eps: f64, max: usize, tol: f64) -> usize {
        for k in 1..=max {
            self.update_f(eps);
            self.update_g(eps);
            if self.row_violation(eps) < tol {
                return k;
            }
        }
        max
    }

    fn objective(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        let mut mass = 0.0;
        for (i, fi) in f.iter().enumerate() {
            for (j, gj) in g.iter().enumerate() {
                mass += ((fi + gj - self.c[(i, j)]) / eps).exp();
            }
        }
        let lin: f64 = f.iter().zip(self.a.iter()).map(|(x, y)| x * y).sum::<f64>()
            + g.iter().zip(self.b.iter()).map(|(x, y)| x * y).sum::<f64>();
        lin - eps * mass
    }

    /// One damped Newton ascent step on the concave dual, with the last
    /// column potential held fixed to remove the shift invariance.
    /// Returns false when no improving step was found.
    fn newton_step(&mut self, eps: f64) -> bool {
        let (n, m) = (self.f.len(), self.g.len());
        let t = DMatrix::from_fn(n, m, |i, j| self.log_plan(i, j, eps).exp());
        let dim = n + m - 1;
        let mut hess = DMatrix::zeros(dim, dim);
        let mut grad = DVector::zeros(dim);
        for i in 0..n {
            let r = t.row(i).sum();
            hess[(i, i)] = r;
            grad[i] = self.a[i] - r;
        }
        for j in 0..m - 1 {
            let s = t.column(j).sum();
            hess[(n + j, n + j)] = s;
            grad[n + j] = self.b[j] - s;
            for i in 0..n {
                hess[(i, n + j)] = t[(i, j)];
                hess[(n + j, i)] = t[(i, j)];
            }
        }
        let base = self.objective(&self.f, &self.g, eps);
        let top = hess.diagonal().amax();
        // a nearly disconnected support makes the Hessian close to singular;
        // growing the ridge bends the step toward plain gradient ascent
        for ridge in [1e-14, 1e-10, 1e-6, 1e-3, 1.0] {
            let mut damped = hess.clone();
            for k in 0..dim {
                damped[(k, k)] += ridge * top;
            }
            let Some(step) = damped.lu().solve(&grad) else {
                continue;
            };
            let step = step * eps;
            let mut scale = 1.0;
            for _ in 0..20 {
                let f: Vec<f64> = (0..n).map(|i| self.f[i] + scale * step[i]).collect();
                let g: Vec<f64> = (0..m)
                    .map(|j| if j + 1 < m { self.g[j] + scale * step[n + j] } else { self.g[j] })
                    .collect();
                let value = self.objective(&f, &g, eps);
                if value.is_finite() && value > base {
                    self.f = f;
                    self.g = g;
                    return true;
                }
                scale *= 0.5;
            }
        }
        false
    }
}

/// Solve the entropic OT problem for `cost` (rows × cols).
///
/// Not reaching `tol` within `max_iter` is not an error: the plan comes back
/// with `converged = false` and the final violation.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    row_marginal: &DVector<f64>,
    col_marginal: &DVector<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if row_marginal.len() != n || col_marginal.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{n}x{m} cost with marginals of length {} and {}",
            row_marginal.len(),
            col_marginal.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("transport cost".into()));
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {} must be positive",
            cfg.epsilon
        )));
    }
    check_distribution(row_marginal, "row")?;
    check_distribution(col_marginal, "column")?;

    let max_entry = cost.iter().copied().fold(0.0, f64::max);
    let cost_scale = if cfg.normalize && max_entry > 0.0 {
        max_entry
    } else {
        1.0
    };
    let c = cost / cost_scale;
    let eps = cfg.epsilon;
    let mut dual = Dual::new(&c, row_marginal, col_marginal);

    // coarse-to-fine warm start: each stage starts from the previous potentials
    let mut budget = cfg.max_iter;
    let mut stage_eps = c.iter().copied().fold(0.0, f64::max).max(eps);
    while stage_eps > eps * 10.0 && budget > 0 {
        let used = dual.sweeps(stage_eps, WARM_STAGE_SWEEPS.min(budget), WARM_STAGE_TOL);
        budget -= used;
        stage_eps /= 10.0;
    }

    let used = dual.sweeps(eps, FINAL_SWEEPS.min(budget), cfg.tol);
    budget -= used;
    let mut violation = dual.row_violation(eps);
    // polish with Newton steps on the dual when plain scaling stalls
    while violation >= cfg.tol && budget > 0 {
        budget -= 1;
        if !dual.newton_step(eps) {
            break;
        }
        dual.update_g(eps);
        violation = dual.row_violation(eps);
    }
    // fall back to plain scaling for whatever budget is left
    if violation >= cfg.tol && budget > 0 {
        budget -= dual.sweeps(eps, budget, cfg.tol);
        violation = dual.row_violation(eps);
    }
    let iterations = cfg.max_iter - budget;
    let (f, g) = (&dual.f, &dual.g);

    let coupling = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - c[(i, j)]) / eps).exp());
    let violation = violation.max(marginal_violation(&coupling, row_marginal, col_marginal));
    Ok(TransportPlan {
        coupling,
        row_marginal: row_marginal.clone(),
        col_marginal: col_marginal.clone(),
        epsilon: eps,
        scale: n as f64,
        cost_scale,
        iterations,
        violation,
        converged: violation < cfg.tol,
    })
}

/// Plan between the features of two batches under uniform feature marginals.
pub fn plan_features(cost: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (n, m) = cost.values.shape();
    sinkhorn(&cost.values, &uniform_marginal(n), &uniform_marginal(m), cfg)
}

/// Carry a previous model into the current feature indexing:
/// `W̄ = scale · T · W_prev`, bias unchanged.
pub fn transport_model(plan: &TransportPlan, prev: &LinearModel) -> Result<LinearModel> {
    if plan.coupling.ncols() != prev.feature_count() {
        return Err(Error::DimensionMismatch(format!(
            "plan maps {} features, model has {}",
            plan.coupling.ncols(),
            prev.feature_count()
        )));
    }
    Ok(LinearModel {
        weights: (&plan.coupling * &prev.weights) * plan.scale,
        bias: prev.bias.clone(),
    })
}
