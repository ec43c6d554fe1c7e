use nalgebra::DMatrix;

use crate::{Error, Result};

/// A smooth objective over weight matrices.
pub trait Objective {
    fn value(&self, w: &DMatrix<f64>) -> f64;
    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub w: DMatrix<f64>,
    /// Starting value, then the value after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fixed-step gradient descent. A step that fails to decrease the objective
/// is discarded and the step size shrinks for the rest of the run. Stops when
/// the objective changes by less than `tol` or after `max_iter` iterations.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    w0: DMatrix<f64>,
    step0: f64,
    shrink: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Descent> {
    let mut w = w0;
    let mut f = objective.value(&w);
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut trace = vec![f];
    let mut step = step0;
    for iter in 1..=max_iter {
        let candidate = &w - objective.gradient(&w) * step;
        let fc = objective.value(&candidate);
        if !fc.is_finite() {
            return Err(Error::NonFinite(format!("objective at iteration {iter}")));
        }
        let change = (f - fc).abs();
        if fc < f {
            w = candidate;
            f = fc;
            trace.push(f);
        } else {
            step *= shrink;
        }
        if change < tol {
            return Ok(Descent { w, trace, iterations: iter, converged: true });
        }
    }
    Ok(Descent { w, trace, iterations: max_iter, converged: false })
}
