use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{make_task, stratified_label_idx, Dataset, StreamMode, StreamSpec, StreamTask};
use crate::{Error, Result};

fn require_mode(spec: &StreamSpec, mode: StreamMode) -> Result<()> {
    spec.validate()?;
    if spec.mode != mode {
        return Err(Error::InvalidSpec(format!(
            "expected {mode:?} stream, got {:?}",
            spec.mode
        )));
    }
    Ok(())
}

/// Batch sizes for `n` rows split into task 0 plus `task_count` tasks, task 0
/// weighted by `multiplier`: it gets `⌈m·n / (T + m)⌉` rows and the rest is
/// shared evenly, earlier tasks taking the remainder.
pub fn task_sizes(n: usize, task_count: usize, multiplier: f64) -> Vec<usize> {
    let share = multiplier * n as f64 / (task_count as f64 + multiplier);
    let first = ((share - 1e-9).ceil() as usize).min(n);
    let rest = n - first;
    let (base, extra) = (rest / task_count, rest % task_count);
    std::iter::once(first)
        .chain((0..task_count).map(|t| base + usize::from(t < extra)))
        .collect()
}

fn label_mask(
    index: usize,
    labels: &[usize],
    class_count: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if index == 0 {
        (0..labels.len()).collect()
    } else {
        stratified_label_idx(labels, class_count, fraction, rng)
    }
}

/// Cut an arrival-ordered dataset into consecutive batches.
pub fn split_by_arrival(ds: &Dataset, spec: &StreamSpec) -> Result<Vec<StreamTask>> {
    require_mode(spec, StreamMode::CsvSplit)?;
    let sizes = task_sizes(ds.len(), spec.task_count, spec.task0_size_multiplier);
    if let Some((t, &s)) = sizes.iter().enumerate().find(|(_, &s)| s < ds.class_count) {
        return Err(Error::TooFewSamples(format!(
            "task {t} would get {s} rows for {} classes ({} rows over {} batches)",
            ds.class_count,
            ds.len(),
            sizes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut start = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for (t, &size) in sizes.iter().enumerate() {
        let rows = start..start + size;
        let features = ds.features.rows(start, size).into_owned();
        let labels = ds.labels[rows].to_vec();
        let labeled = label_mask(t, &labels, ds.class_count, spec.labeled_fraction, &mut rng);
        out.push(make_task(t, features, labels, ds.class_count, labeled)?);
        start += size;
    }
    Ok(out)
}

/// Map both datasets onto a shared class index (source names first).
fn align_classes(source: &Dataset, target: &Dataset) -> (Vec<usize>, usize) {
    let mut names = source.class_names.clone();
    let mut index: HashMap<String, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let mut remap = Vec::with_capacity(target.class_count);
    for name in &target.class_names {
        let next = names.len();
        let id = *index.entry(name.clone()).or_insert_with(|| {
            names.push(name.clone());
            next
        });
        remap.push(id);
    }
    let labels = target.labels.iter().map(|&l| remap[l]).collect();
    (labels, names.len())
}

/// Draw each batch row from the target pool with probability λ(t), otherwise
/// from the source pool. Pools are consumed without replacement across the
/// whole stream.
pub fn sample_mixture_stream(
    source: &Dataset,
    target: &Dataset,
    spec: &StreamSpec,
) -> Result<Vec<StreamTask>> {
    require_mode(spec, StreamMode::Mixture)?;
    if source.feature_count() != target.feature_count() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target {}",
            source.feature_count(),
            target.feature_count()
        )));
    }
    let (target_labels, class_count) = align_classes(source, target);
    let schedule = spec.mixture_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut source_pool: Vec<usize> = (0..source.len()).collect();
    let mut target_pool: Vec<usize> = (0..target.len()).collect();
    source_pool.shuffle(&mut rng);
    target_pool.shuffle(&mut rng);
    let (mut next_source, mut next_target) = (0usize, 0usize);

    let d = source.feature_count();
    let mut out = Vec::with_capacity(schedule.len());
    for (t, &lambda) in schedule.iter().enumerate() {
        let size = if t == 0 {
            spec.task0_size()
        } else {
            spec.batch_size
        };
        let mut values = Vec::with_capacity(size * d);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let from_target = rng.random::<f64>() < lambda;
            let (ds, pool, cursor, name) = if from_target {
                (target, &target_pool, &mut next_target, "target")
            } else {
                (source, &source_pool, &mut next_source, "source")
            };
            let Some(&row) = pool.get(*cursor) else {
                return Err(Error::PoolExhausted(format!(
                    "{name} pool of {} rows used up at task {t}",
                    pool.len()
                )));
            };
            *cursor += 1;
            values.extend(ds.features.row(row).iter());
            labels.push(if from_target {
                target_labels[row]
            } else {
                source.labels[row]
            });
        }
        let features = DMatrix::from_row_slice(size, d, &values);
        let labeled = label_mask(t, &labels, class_count, spec.labeled_fraction, &mut rng);
        out.push(make_task(t, features, labels, class_count, labeled)?);
    }
    Ok(out)
}

/// Two unit-covariance Gaussian classes in the plane whose means sit at
/// `±(separation/2)·(cos θ_t, sin θ_t)`, with `θ_t` advancing by a fixed
/// rotation per task.
pub fn gen_toy_stream(spec: &StreamSpec) -> Result<Vec<StreamTask>> {
    require_mode(spec, StreamMode::Toy)?;
    let toy = spec.toy;
    if !(toy.separation.is_finite() && toy.separation >= 0.0) || !toy.rotation_deg.is_finite() {
        return Err(Error::InvalidSpec("toy parameters must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.task_count + 1);
    for t in 0..=spec.task_count {
        let size = if t == 0 {
            spec.task0_size()
        } else {
            spec.batch_size
        };
        if size < 2 {
            return Err(Error::TooFewSamples(format!("task {t} has {size} rows")));
        }
        let theta = (toy.initial_angle_deg + toy.rotation_deg * t as f64).to_radians();
        let half = toy.separation / 2.0;
        let centre = [half * theta.cos(), half * theta.sin()];

        let mut labels: Vec<usize> = (0..size).map(|i| usize::from(i >= size - size / 2)).collect();
        labels.shuffle(&mut rng);
        let mut features = DMatrix::zeros(size, 2);
        for (i, &c) in labels.iter().enumerate() {
            let sign = if c == 0 { 1.0 } else { -1.0 };
            for j in 0..2 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features[(i, j)] = sign * centre[j] + noise;
            }
        }
        let labeled = label_mask(t, &labels, 2, spec.labeled_fraction, &mut rng);
        out.push(make_task(t, features, labels, 2, labeled)?);
    }
    Ok(out)
}
