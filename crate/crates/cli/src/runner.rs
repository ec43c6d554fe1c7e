use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dal_core::dataio::{gen_toy_stream, load_csv, sample_mixture_stream, split_by_arrival, Dataset, StreamTask};
use dal_core::model::LinearModel;
use dal_core::solvers::{run_task_flow, FlowOutput, RunRecord, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::CliError;

pub const RECORDS: &str = "records.jsonl";
pub const SUMMARY: &str = "summary.csv";
pub const TABLE: &str = "table.csv";
pub const TRACES: &str = "traces.csv";
pub const ERROR_REPORT: &str = "error.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub task: usize,
    /// Row-major, one row per feature.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ModelEntry {
    fn from_model(task: usize, m: &LinearModel) -> Self {
        Self {
            task,
            weights: m.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
            bias: m.bias.iter().copied().collect(),
        }
    }

    pub fn to_model(&self) -> Result<LinearModel, CliError> {
        let rows = self.weights.len();
        let cols = self.bias.len();
        if self.weights.iter().any(|r| r.len() != cols) {
            return Err(CliError::Artifact(format!("model for task {} is ragged", self.task)));
        }
        let flat: Vec<f64> = self.weights.iter().flatten().copied().collect();
        let w = nalgebra::DMatrix::from_row_slice(rows, cols, &flat);
        LinearModel::new(w, nalgebra::DVector::from_vec(self.bias.clone())).map_err(CliError::Core)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub variant: Variant,
    pub seed: u64,
    pub source_alpha: f64,
    pub models: Vec<ModelEntry>,
}

pub fn run_name(variant: Variant, seed: u64) -> String {
    format!("{variant}-seed{seed}")
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn load(src: &(PathBuf, dal_core::dataio::LabelColumn, bool)) -> Result<Dataset, CliError> {
    load_csv(&src.0, &src.1, src.2).map_err(CliError::Core)
}

/// Datasets read once per experiment and shared by all runs.
pub enum Corpus {
    Toy,
    Csv(Dataset),
    Mixture(Dataset, Dataset),
}

impl Corpus {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        Ok(match &cfg.data {
            DataSource::Toy => Corpus::Toy,
            DataSource::Csv { path, label, header } => Corpus::Csv(load(&(path.clone(), label.clone(), *header))?),
            DataSource::Mixture { source, target } => Corpus::Mixture(load(source)?, load(target)?),
        })
    }

    pub fn stream(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<StreamTask>, CliError> {
        let spec = cfg.spec_for_seed(seed);
        match self {
            Corpus::Toy => gen_toy_stream(&spec),
            Corpus::Csv(ds) => split_by_arrival(ds, &spec),
            Corpus::Mixture(s, t) => sample_mixture_stream(s, t, &spec),
        }
        .map_err(CliError::Core)
    }
}

struct Run {
    variant: Variant,
    seed: u64,
    flow: FlowOutput,
}

fn jsonl(records: &[RunRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn write_run(dir: &Path, run: &Run) -> Result<(), CliError> {
    let name = run_name(run.variant, run.seed);
    write_atomic(&dir.join("runs").join(format!("{name}.jsonl")), &jsonl(&run.flow.records))?;
    let file = ModelFile {
        variant: run.variant,
        seed: run.seed,
        source_alpha: run.flow.source_alpha,
        models: run.flow.models.iter().enumerate().map(|(t, m)| ModelEntry::from_model(t, m)).collect(),
    };
    let text = serde_json::to_vec_pretty(&file).expect("models serialize");
    write_atomic(&dir.join("models").join(format!("{name}.json")), &text)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Accuracy grouped by variant, then task, across seeds. The pseudo-task
/// `usize::MAX` holds each seed's mean over tasks.
pub fn accuracy_table(records: &[RunRecord]) -> BTreeMap<Variant, BTreeMap<usize, Vec<f64>>> {
    let mut by_run: BTreeMap<(Variant, u64), Vec<f64>> = BTreeMap::new();
    let mut table: BTreeMap<Variant, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        table.entry(r.variant).or_default().entry(r.task).or_default().push(r.accuracy);
        by_run.entry((r.variant, r.seed)).or_default().push(r.accuracy);
    }
    for ((variant, _), accs) in by_run {
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        table.entry(variant).or_default().entry(usize::MAX).or_default().push(mean);
    }
    table
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::Artifact(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Artifact(e.to_string()))
}

fn task_label(task: usize) -> String {
    if task == usize::MAX {
        "mean".into()
    } else {
        format!("task_{task}")
    }
}

fn summaries(records: &[RunRecord]) -> Result<(Vec<u8>, Vec<u8>), CliError> {
    let table = accuracy_table(records);
    let tasks: Vec<usize> = table.values().next().map(|t| t.keys().copied().collect()).unwrap_or_default();
    let mut summary = vec![std::iter::once("variant".to_owned()).chain(tasks.iter().map(|&t| task_label(t))).collect()];
    let mut full = vec![vec!["variant".into(), "task".into(), "mean".into(), "std".into(), "n".into()]];
    for (variant, by_task) in &table {
        let mut row = vec![variant.to_string()];
        for (&task, accs) in by_task {
            let (m, s) = mean_std(accs);
            row.push(format!("{m:.3}({s:.3})"));
            full.push(vec![variant.to_string(), task_label(task), m.to_string(), s.to_string(), accs.len().to_string()]);
        }
        summary.push(row);
    }
    Ok((csv_bytes(summary)?, csv_bytes(full)?))
}

fn traces(runs: &[Run]) -> Result<Vec<u8>, CliError> {
    let mut rows = vec![vec!["variant".into(), "seed".into(), "task".into(), "iteration".into(), "objective".into()]];
    for run in runs {
        for (rec, trace) in run.flow.records.iter().zip(&run.flow.traces) {
            for (k, v) in trace.iter().enumerate() {
                rows.push(vec![run.variant.to_string(), run.seed.to_string(), rec.task.to_string(), k.to_string(), v.to_string()]);
            }
        }
    }
    csv_bytes(rows)
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
}

/// Run every (variant, seed) pair in parallel and persist the artifacts.
/// On failure a report is written to `error.json` in the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let dir = cfg.output_dir.clone();
    let result = execute(cfg, &dir);
    match &result {
        Ok(_) => {
            let _ = fs::remove_file(dir.join(ERROR_REPORT));
        }
        Err(e) => {
            let report = serde_json::to_vec_pretty(&e.report()).expect("report serializes");
            let _ = write_atomic(&dir.join(ERROR_REPORT), &report);
        }
    }
    result
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let config = serde_json::to_vec_pretty(&cfg.raw).expect("config serializes");
    write_atomic(&dir.join("config.json"), &config)?;
    let corpus = Corpus::load(cfg)?;
    let streams = cfg
        .seeds
        .iter()
        .map(|&s| corpus.stream(cfg, s).map(|st| (s, st)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let jobs: Vec<(Variant, u64)> =
        cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let flow = run_task_flow(&streams[&seed], &cfg.solver, variant, seed)
                .map_err(|e| CliError::Run { variant, seed, source: e })?;
            let run = Run { variant, seed, flow };
            write_run(dir, &run)?;
            Ok(run)
        })
        .collect::<Result<Vec<Run>, CliError>>()?;

    let records: Vec<RunRecord> = runs.iter().flat_map(|r| r.flow.records.iter().cloned()).collect();
    write_atomic(&dir.join(RECORDS), &jsonl(&records))?;
    let (summary, table) = summaries(&records)?;
    write_atomic(&dir.join(SUMMARY), &summary)?;
    write_atomic(&dir.join(TABLE), &table)?;
    write_atomic(&dir.join(TRACES), &traces(&runs)?)?;
    Ok(Outcome { dir: dir.to_path_buf(), records })
}

/// Read `records.jsonl` from a run directory.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>, CliError> {
    let path = dir.join(RECORDS);
    let text = fs::read_to_string(&path).map_err(|_| CliError::NoArtifacts(dir.to_path_buf()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Artifact(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Emit each seed's stream as per-task CSVs under `out/seed<k>/`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let corpus = Corpus::load(cfg)?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        for task in corpus.stream(cfg, seed)? {
            let b = &task.batch;
            let mut header: Vec<String> = (0..b.feature_count()).map(|j| format!("x{j}")).collect();
            header.extend(["label".into(), "labeled".into()]);
            let mut labeled = vec![false; b.len()];
            for &i in &b.labeled_idx {
                labeled[i] = true;
            }
            let mut rows = vec![header];
            for (i, &is_labeled) in labeled.iter().enumerate() {
                let mut row: Vec<String> = b.features.row(i).iter().map(|v| v.to_string()).collect();
                row.push(task.truth.labels()[i].to_string());
                row.push(u8::from(is_labeled).to_string());
                rows.push(row);
            }
            let path = out.join(format!("seed{seed}")).join(format!("task_{}.csv", b.index));
            write_atomic(&path, &csv_bytes(rows)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
