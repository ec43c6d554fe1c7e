//! Per-feature marginal encodings and the evolving cost matrix between the
//! features of two consecutive batches.
//!
//! Rows of a [`CostMatrix`] index the current batch's features, columns the
//! previous batch's features.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::TaskBatch;
use crate::{Error, Result};

/// Smallest KDE bandwidth; zero-variance features are raised to it.
pub const MIN_BANDWIDTH: f64 = 1e-6;

/// Cap on samples per feature used by the median heuristic.
const MEDIAN_SUBSAMPLE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfmdiMethod {
    #[default]
    Kme,
    Kde,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BandwidthRule {
    /// KME: median heuristic; KDE: `1.05 · std · N^(-1/5)` per feature.
    #[default]
    Auto,
    Fixed(f64),
}

/// Marginal samples of every feature of one batch plus the kernel width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoding {
    pub method: EfmdiMethod,
    pub batch_index: usize,
    /// One list per feature column, all of equal length.
    pub samples: Vec<Vec<f64>>,
    /// Per feature; KME encodings carry one shared width repeated.
    pub bandwidths: Vec<f64>,
    /// Set when some bandwidth had to be floored at [`MIN_BANDWIDTH`].
    pub bandwidth_floored: bool,
}

impl FeatureEncoding {
    pub fn feature_count(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn kernel_width(&self) -> f64 {
        self.bandwidths[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: DMatrix<f64>,
    pub row_tag: usize,
    pub col_tag: usize,
}

pub fn encode(batch: &TaskBatch, method: EfmdiMethod, rule: BandwidthRule) -> Result<FeatureEncoding> {
    encode_features(&batch.features, batch.index, method, rule)
}

/// Encode the columns of a samples × features matrix.
pub fn encode_features(
    features: &DMatrix<f64>,
    batch_index: usize,
    method: EfmdiMethod,
    rule: BandwidthRule,
) -> Result<FeatureEncoding> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(Error::InvalidArgument("cannot encode an empty batch".into()));
    }
    if let BandwidthRule::Fixed(w) = rule {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidArgument(format!("bandwidth {w} must be positive")));
        }
    }
    let samples: Vec<Vec<f64>> = features
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let d = samples.len();
    let (bandwidths, floored) = match (method, rule) {
        (_, BandwidthRule::Fixed(w)) => (vec![w; d], false),
        (EfmdiMethod::Kme, BandwidthRule::Auto) => (vec![median_heuristic(&[features]); d], false),
        (EfmdiMethod::Kde, BandwidthRule::Auto) => {
            let hs: Vec<(f64, bool)> = samples.iter().map(|s| kde_bandwidth(s)).collect();
            let floored = hs.iter().any(|(_, f)| *f);
            (hs.into_iter().map(|(h, _)| h).collect(), floored)
        }
    };
    Ok(FeatureEncoding {
        method,
        batch_index,
        samples,
        bandwidths,
        bandwidth_floored: floored,
    })
}

/// `h = 1.05 · std · N^(-1/5)` with the sample standard deviation; returns
/// whether the value had to be floored.
pub fn kde_bandwidth(samples: &[f64]) -> (f64, bool) {
    let n = samples.len();
    let std = if n > 1 {
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ss: f64 = samples.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let h = 1.05 * std * (n as f64).powf(-0.2);
    if h.is_finite() && h >= MIN_BANDWIDTH {
        (h, false)
    } else {
        (MIN_BANDWIDTH, true)
    }
}

/// Median of within-feature pairwise distances, pooling each feature's samples
/// across all given batches (samples × features matrices with equal widths).
pub fn median_heuristic(batches: &[&DMatrix<f64>]) -> f64 {
    let d = batches.first().map_or(0, |b| b.ncols());
    let mut dists = Vec::new();
    for j in 0..d {
        let pooled: Vec<f64> = batches.iter().flat_map(|b| b.column(j).iter().copied().collect::<Vec<_>>()).collect();
        let step = pooled.len().div_ceil(MEDIAN_SUBSAMPLE).max(1);
        let kept: Vec<f64> = pooled.iter().step_by(step).copied().collect();
        for a in 0..kept.len() {
            for b in (a + 1)..kept.len() {
                dists.push((kept[a] - kept[b]).abs());
            }
        }
    }
    crate::linalg::positive_median(&mut dists)
}

#[inline]
fn gauss(diff: f64, sigma: f64) -> f64 {
    (-diff * diff / (2.0 * sigma * sigma)).exp()
}

fn mean_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let mut s = 0.0;
    for a in x {
        for b in y {
            s += gauss(a - b, sigma);
        }
    }
    s / (x.len() * y.len()) as f64
}

/// Squared RKHS distance between the empirical mean embeddings of `x` and
/// `y` under the Gaussian kernel `exp(-(a-b)²/(2σ²))`.
pub fn kme_sq_distance(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    mean_kernel(x, x, sigma) + mean_kernel(y, y, sigma) - 2.0 * mean_kernel(x, y, sigma)
}

/// The same distance as `Trace(K·H)`, with `K` the Gram matrix of the stacked
/// samples `[x; y]` and `H` the block weight matrix: `1/n²` on the x-block,
/// `1/m²` on the y-block and `-1/(nm)` across blocks.
pub fn kme_sq_distance_trace_form(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let (n, m) = (x.len(), y.len());
    let stacked: Vec<f64> = x.iter().chain(y).copied().collect();
    let size = n + m;
    let k = DMatrix::from_fn(size, size, |i, j| gauss(stacked[i] - stacked[j], sigma));
    let h = DMatrix::from_fn(size, size, |i, j| match (i < n, j < n) {
        (true, true) => 1.0 / (n * n) as f64,
        (false, false) => 1.0 / (m * m) as f64,
        _ => -1.0 / (n * m) as f64,
    });
    (k * h).trace()
}

#[inline]
fn normal_pdf(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `∫ p̂(u) q̂(u) du` for Gaussian KDEs: a double sum of normal densities at
/// the sample differences with variance `hx² + hy²`.
fn kde_inner(x: &[f64], hx: f64, y: &[f64], hy: f64) -> f64 {
    let var = hx * hx + hy * hy;
    let mut s = 0.0;
    for a in x {
        for b in y {
            s += normal_pdf(a - b, var);
        }
    }
    s / (x.len() * y.len()) as f64
}

/// `∫ (p̂_x − p̂_y)²` for Gaussian KDEs with bandwidths `hx`, `hy`, in closed form.
pub fn kde_l2_distance(x: &[f64], hx: f64, y: &[f64], hy: f64) -> f64 {
    kde_inner(x, hx, x, hx) + kde_inner(y, hy, y, hy) - 2.0 * kde_inner(x, hx, y, hy)
}

fn check_pair(current: &FeatureEncoding, previous: &FeatureEncoding, method: EfmdiMethod) -> Result<()> {
    if current.method != method || previous.method != method {
        return Err(Error::InvalidArgument(format!(
            "{method:?} cost needs {method:?} encodings"
        )));
    }
    if current.feature_count() != previous.feature_count() {
        return Err(Error::DimensionMismatch(format!(
            "current batch has {} features, previous {}",
            current.feature_count(),
            previous.feature_count()
        )));
    }
    Ok(())
}

fn assemble(
    current: &FeatureEncoding,
    previous: &FeatureEncoding,
    self_current: &[f64],
    self_previous: &[f64],
    cross: impl Fn(usize, usize) -> f64 + Sync,
) -> CostMatrix {
    let d = current.feature_count();
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|mu| {
            (0..d)
                .map(|nu| (self_current[mu] + self_previous[nu] - 2.0 * cross(mu, nu)).max(0.0))
                .collect()
        })
        .collect();
    CostMatrix {
        values: DMatrix::from_fn(d, d, |i, j| rows[i][j]),
        row_tag: current.batch_index,
        col_tag: previous.batch_index,
    }
}

/// Squared MMD between every current feature marginal and every previous one.
/// The current encoding's kernel width is used for both sides.
pub fn cost_kme(current: &FeatureEncoding, previous: &FeatureEncoding) -> Result<CostMatrix> {
    check_pair(current, previous, EfmdiMethod::Kme)?;
    let sigma = current.kernel_width();
    let self_cur: Vec<f64> = current.samples.par_iter().map(|s| mean_kernel(s, s, sigma)).collect();
    let self_prev: Vec<f64> = previous.samples.par_iter().map(|s| mean_kernel(s, s, sigma)).collect();
    Ok(assemble(current, previous, &self_cur, &self_prev, |mu, nu| {
        mean_kernel(&current.samples[mu], &previous.samples[nu], sigma)
    }))
}

/// Integrated squared difference between Gaussian KDEs of every current and
/// previous feature.
pub fn cost_kde(current: &FeatureEncoding, previous: &FeatureEncoding) -> Result<CostMatrix> {
    check_pair(current, previous, EfmdiMethod::Kde)?;
    let self_of = |e: &FeatureEncoding| -> Vec<f64> {
        e.samples
            .par_iter()
            .zip(e.bandwidths.par_iter())
            .map(|(s, &h)| kde_inner(s, h, s, h))
            .collect()
    };
    let (self_cur, self_prev) = (self_of(current), self_of(previous));
    Ok(assemble(current, previous, &self_cur, &self_prev, |mu, nu| {
        kde_inner(
            &current.samples[mu],
            current.bandwidths[mu],
            &previous.samples[nu],
            previous.bandwidths[nu],
        )
    }))
}

/// Dispatch on the encodings' method.
pub fn cost_matrix(current: &FeatureEncoding, previous: &FeatureEncoding) -> Result<CostMatrix> {
    match current.method {
        EfmdiMethod::Kme => cost_kme(current, previous),
        EfmdiMethod::Kde => cost_kde(current, previous),
    }
}
