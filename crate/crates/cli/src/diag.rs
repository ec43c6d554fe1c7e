use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dal_core::diagnostics::trajectory_length;

use crate::runner::{read_records, ModelFile};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum What {
    U2,
    Trajectory,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

/// Bound quantities recorded for every task of every run.
pub fn u2_report(dir: &Path) -> Result<String, CliError> {
    let records = read_records(dir)?;
    if records.is_empty() {
        return Err(CliError::NoArtifacts(dir.to_path_buf()));
    }
    let mut out = String::from("variant\tseed\ttask\tu2\tridge_term\treduction\tlower\tupper\n");
    for r in &records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant,
            r.seed,
            r.task,
            opt(r.u2),
            opt(r.u2_ridge_term),
            opt(r.u2_reduction),
            opt(r.u2_lower),
            opt(r.u2_upper)
        )
        .expect("string write");
    }
    Ok(out)
}

pub fn load_models(dir: &Path) -> Result<Vec<ModelFile>, CliError> {
    let models_dir = dir.join("models");
    let entries = fs::read_dir(&models_dir).map_err(|_| CliError::NoArtifacts(dir.to_path_buf()))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::NoArtifacts(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Trajectory length of each run, with the models placed at `t / T`.
pub fn trajectory_report(dir: &Path) -> Result<String, CliError> {
    let mut files = load_models(dir)?;
    files.sort_by_key(|f| (f.variant, f.seed));
    let mut out = String::from("variant\tseed\tlength\tper_class\n");
    for f in &files {
        let models = f.models.iter().map(|m| m.to_model()).collect::<Result<Vec<_>, _>>()?;
        let last = (models.len().max(2) - 1) as f64;
        let times: Vec<f64> = (0..models.len()).map(|t| t as f64 / last).collect();
        let len = trajectory_length(&models, &times).map_err(CliError::Core)?;
        let per: Vec<String> = len.per_class.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}\t{}\t{:.6}\t{}", f.variant, f.seed, len.total, per.join(",")).expect("string write");
    }
    Ok(out)
}

pub fn report(dir: &Path, what: What) -> Result<String, CliError> {
    if !dir.is_dir() {
        return Err(CliError::NoArtifacts(dir.to_path_buf()));
    }
    match what {
        What::U2 => u2_report(dir),
        What::Trajectory => trajectory_report(dir),
    }
}
