use nalgebra::DMatrix;

use super::descent::Objective;
use crate::linalg::{frobenius_sq, log_sum_exp};
use crate::model::softmax_rows;

/// Shared penalty `α‖W − W̄‖²_F + β·Tr(Wᵀ Q W)` and its gradient.
#[derive(Debug, Clone)]
struct Penalty {
    prior: DMatrix<f64>,
    alpha: f64,
    beta: f64,
    gram: Option<DMatrix<f64>>,
}

impl Penalty {
    fn value(&self, w: &DMatrix<f64>) -> f64 {
        let mut v = self.alpha * frobenius_sq(&(w - &self.prior));
        if let Some(q) = &self.gram {
            v += self.beta * w.dot(&(q * w));
        }
        v
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = (w - &self.prior) * (2.0 * self.alpha);
        if let Some(q) = &self.gram {
            g += (q * w) * (2.0 * self.beta);
        }
        g
    }
}

/// Squared loss on centered labeled rows plus the shared penalty.
#[derive(Debug, Clone)]
pub struct LsObjective {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    penalty: Penalty,
}

impl LsObjective {
    /// `x` and `y` are expected to be centered already when a bias is implied.
    pub fn from_parts(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        prior: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        gram: Option<DMatrix<f64>>,
    ) -> Self {
        Self {
            x,
            y,
            penalty: Penalty { prior, alpha, beta, gram },
        }
    }
}

impl Objective for LsObjective {
    fn value(&self, w: &DMatrix<f64>) -> f64 {
        frobenius_sq(&(&self.x * w - &self.y)) + self.penalty.value(w)
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.x.transpose() * (&self.x * w - &self.y) * 2.0 + self.penalty.gradient(w)
    }
}

/// Softmax cross-entropy summed over labeled rows plus the shared penalty.
#[derive(Debug, Clone)]
pub struct CelObjective {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    penalty: Penalty,
}

impl CelObjective {
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        prior: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        gram: Option<DMatrix<f64>>,
    ) -> Self {
        Self {
            x,
            y,
            penalty: Penalty { prior, alpha, beta, gram },
        }
    }
}

impl Objective for CelObjective {
    fn value(&self, w: &DMatrix<f64>) -> f64 {
        let z = &self.x * w;
        let loss: f64 = (0..z.nrows())
            .map(|i| {
                let row = z.row(i);
                log_sum_exp(row.iter().copied()) - row.dot(&self.y.row(i))
            })
            .sum();
        loss + self.penalty.value(w)
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let probs = softmax_rows(&(&self.x * w));
        self.x.transpose() * (probs - &self.y) + self.penalty.gradient(w)
    }
}
