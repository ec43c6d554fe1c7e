use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Linear classifier: class scores are `x · W + b` for a sample row `x`.
///
/// `weights` is features × classes; each column belongs to one class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearModel {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != weights.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "bias has {} entries for {} classes",
                bias.len(),
                weights.ncols()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model entries".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            weights: DMatrix::zeros(features, classes),
            bias: DVector::zeros(classes),
        }
    }

    pub fn from_weights(weights: DMatrix<f64>) -> Self {
        let c = weights.ncols();
        Self {
            weights,
            bias: DVector::zeros(c),
        }
    }

    pub fn feature_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.weights.ncols()
    }

    fn check_features(&self, features: &DMatrix<f64>) -> Result<()> {
        if features.ncols() != self.feature_count() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.feature_count()
            )));
        }
        Ok(())
    }

    /// Class scores, one row per sample.
    pub fn scores(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_features(features)?;
        let mut z = features * &self.weights;
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(z)
    }

    /// Argmax class per row; ties go to the lower class index.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = self.scores(features)?;
        Ok(z.row_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    /// Row-wise softmax of the class scores.
    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(softmax_rows(&self.scores(features)?))
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub fn softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = LinearModel::zeros(3, 4);
        let x = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        assert_eq!(m.predict(&x).unwrap(), vec![0; 5]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(argmax([0.2, 0.9, 0.9].into_iter()), 1);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 500.0, -3.0, 0.0, 0.0, 0.0]);
        let p = softmax_rows(&z);
        for r in p.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = LinearModel::zeros(3, 2);
        let x = DMatrix::zeros(2, 4);
        assert!(matches!(m.predict(&x), Err(Error::DimensionMismatch(_))));
    }
}
