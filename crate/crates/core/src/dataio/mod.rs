//! Dataset ingestion, stream synthesis, task partitioning and label masking.
//!
//! Every generator returns [`StreamTask`]s: the solver-visible [`TaskBatch`]
//! plus a [`GroundTruth`] that only evaluation reads.

mod csv_io;
mod stream;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use csv_io::{load_csv, LabelColumn};
pub use stream::{gen_toy_stream, sample_mixture_stream, split_by_arrival, task_sizes};

/// A labeled table: `features` is samples × features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Original label strings, indexed by dense class id.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let names = (0..class_count).map(|c| c.to_string()).collect();
        Self::with_class_names(features, labels, names)
    }

    pub fn with_class_names(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let class_count = class_names.len();
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                features.nrows()
            )));
        }
        if class_count < 2 {
            return Err(Error::SingleClass);
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }
}

/// One step of the stream as seen by a solver.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub index: usize,
    /// Samples × features.
    pub features: DMatrix<f64>,
    /// Sorted, unique row indices whose labels are revealed.
    pub labeled_idx: Vec<usize>,
    /// One row per entry of `labeled_idx`, exactly one 1 per row.
    pub labels_onehot: DMatrix<f64>,
    pub class_count: usize,
}

impl TaskBatch {
    /// `labels` holds the class of each row in `labeled_idx`, same order.
    pub fn new(
        index: usize,
        features: DMatrix<f64>,
        labeled_idx: Vec<usize>,
        labels: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != labeled_idx.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} labeled rows",
                labels.len(),
                labeled_idx.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &labeled_idx {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "labeled index {i} duplicated or out of range"
                )));
            }
            seen[i] = true;
        }
        if index == 0 && labeled_idx.len() != n {
            return Err(Error::InvalidSpec(
                "task 0 must be fully labeled".into(),
            ));
        }
        if labels.iter().any(|&c| c >= class_count) {
            return Err(Error::InvalidArgument("label out of class range".into()));
        }
        Ok(Self {
            index,
            features,
            labeled_idx,
            labels_onehot: one_hot(labels, class_count),
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_idx.len()
    }

    pub fn labeled_features(&self) -> DMatrix<f64> {
        crate::linalg::select_rows(&self.features, &self.labeled_idx)
    }

    /// Class ids of the labeled rows, in `labeled_idx` order.
    pub fn labeled_classes(&self) -> Vec<usize> {
        self.labels_onehot
            .row_iter()
            .map(|r| crate::model::argmax(r.iter().copied()))
            .collect()
    }

    pub fn unlabeled_idx(&self) -> Vec<usize> {
        let mut labeled = vec![false; self.len()];
        for &i in &self.labeled_idx {
            labeled[i] = true;
        }
        (0..self.len()).filter(|&i| !labeled[i]).collect()
    }
}

/// Labels of every row of a batch; kept apart from [`TaskBatch`] so solvers
/// never see the labels of unlabeled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    labels: Vec<usize>,
}

impl GroundTruth {
    pub(crate) fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Fraction of the batch's unlabeled rows predicted correctly. When every
    /// row is labeled the whole batch is scored instead.
    pub fn accuracy(&self, batch: &TaskBatch, predictions: &[usize]) -> f64 {
        let mut rows = batch.unlabeled_idx();
        if rows.is_empty() {
            rows = (0..batch.len()).collect();
        }
        let hits = rows
            .iter()
            .filter(|&&i| predictions[i] == self.labels[i])
            .count();
        hits as f64 / rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamTask {
    pub batch: TaskBatch,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    CsvSplit,
    Mixture,
    Toy,
}

/// Rotating two-Gaussian generator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    pub rotation_deg: f64,
    pub separation: f64,
    pub initial_angle_deg: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            rotation_deg: 30.0,
            separation: 4.0,
            initial_angle_deg: 0.0,
        }
    }
}

/// How a stream of `task_count + 1` batches (task 0 plus `task_count`
/// evolving tasks) is produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub mode: StreamMode,
    pub task_count: usize,
    pub labeled_fraction: f64,
    pub task0_size_multiplier: f64,
    pub seed: u64,
    /// Rows per evolving task (mixture and toy modes).
    pub batch_size: usize,
    /// Mixture proportion per batch; `None` means evenly spaced 0..=1.
    pub schedule: Option<Vec<f64>>,
    pub toy: ToyParams,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            mode: StreamMode::Toy,
            task_count: 4,
            labeled_fraction: 0.01,
            task0_size_multiplier: 2.0,
            seed: 0,
            batch_size: 200,
            schedule: None,
            toy: ToyParams::default(),
        }
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_count < 2 {
            return Err(Error::InvalidSpec("task_count must be at least 2".into()));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::InvalidSpec(
                "labeled_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.task0_size_multiplier.is_finite() && self.task0_size_multiplier > 0.0) {
            return Err(Error::InvalidSpec(
                "task0_size_multiplier must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be positive".into()));
        }
        if let Some(s) = &self.schedule {
            if s.len() != self.task_count + 1 {
                return Err(Error::InvalidSpec(format!(
                    "schedule has {} entries for {} batches",
                    s.len(),
                    self.task_count + 1
                )));
            }
            if s.iter().any(|l| !(0.0..=1.0).contains(l)) || s.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidSpec(
                    "schedule must be nondecreasing within [0, 1]".into(),
                ));
            }
            if s[0] != 0.0 || s[s.len() - 1] != 1.0 {
                return Err(Error::InvalidSpec(
                    "schedule must start at 0 and end at 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// The mixture schedule, defaulting to evenly spaced proportions.
    pub fn mixture_schedule(&self) -> Vec<f64> {
        match &self.schedule {
            Some(s) => s.clone(),
            None => (0..=self.task_count)
                .map(|t| t as f64 / self.task_count as f64)
                .collect(),
        }
    }

    /// Size of task 0 in generator modes.
    pub fn task0_size(&self) -> usize {
        ((self.task0_size_multiplier * self.batch_size as f64).round() as usize).max(1)
    }
}

pub fn one_hot(labels: &[usize], class_count: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(labels.len(), class_count);
    for (i, &c) in labels.iter().enumerate() {
        y[(i, c)] = 1.0;
    }
    y
}

/// Number of labels revealed for a class with `present` rows in a batch.
pub fn labels_per_class(present: usize, fraction: f64) -> usize {
    if present == 0 {
        return 0;
    }
    let raw = (fraction * present as f64 + 1e-9).floor() as usize;
    raw.clamp(1, present)
}

/// Stratified label mask: for every class present, `labels_per_class` rows are
/// drawn uniformly at random. Returned indices are sorted.
pub fn stratified_label_idx<R: Rng + ?Sized>(
    labels: &[usize],
    class_count: usize,
    fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut picked = Vec::new();
    for mut rows in by_class {
        let k = labels_per_class(rows.len(), fraction);
        let (chosen, _) = rows.partial_shuffle(rng, k);
        picked.extend_from_slice(chosen);
    }
    picked.sort_unstable();
    picked
}

/// Assemble a batch and its ground truth from fully labeled rows.
pub(crate) fn make_task(
    index: usize,
    features: DMatrix<f64>,
    labels: Vec<usize>,
    class_count: usize,
    labeled_idx: Vec<usize>,
) -> Result<StreamTask> {
    let revealed: Vec<usize> = labeled_idx.iter().map(|&i| labels[i]).collect();
    let batch = TaskBatch::new(index, features, labeled_idx, &revealed, class_count)?;
    Ok(StreamTask {
        batch,
        truth: GroundTruth::new(labels),
    })
}

/// Per-feature affine map to zero mean and unit variance, fitted once on the
/// initiation batch and frozen for the rest of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mean = crate::linalg::column_means(features);
        let scale = DVector::from_fn(features.ncols(), |j, _| {
            let var = features
                .column(j)
                .iter()
                .map(|v| (v - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            // constant columns keep their scale
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    pub fn transform(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            (features[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }

    /// Standardize every batch of a stream with task-0 statistics.
    pub fn apply_to_stream(stream: &[StreamTask]) -> Vec<StreamTask> {
        let Some(first) = stream.first() else {
            return Vec::new();
        };
        let st = Self::fit(&first.batch.features);
        stream
            .iter()
            .map(|task| {
                let mut t = task.clone();
                t.batch.features = st.transform(&task.batch.features);
                t
            })
            .collect()
    }
}
