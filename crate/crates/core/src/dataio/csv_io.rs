use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::{Error, Result};

/// Which CSV column carries the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

/// Load a comma-separated table; every column except the label column must
/// hold finite reals. Labels are re-indexed densely by first appearance.
pub fn load_csv(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers: Option<Vec<String>> = if has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let label_at = match (label_column, &headers) {
        (LabelColumn::Index(i), _) => *i,
        (LabelColumn::Name(name), Some(h)) => h
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingLabelColumn(name.clone()))?,
        (LabelColumn::Name(name), None) => return Err(Error::MissingLabelColumn(name.clone())),
    };
    let column_name = |j: usize| match &headers {
        Some(h) if j < h.len() => format!("{j} ({})", h[j]),
        _ => j.to_string(),
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if label_at >= record.len() {
            return Err(Error::MissingLabelColumn(label_at.to_string()));
        }
        let w = *width.get_or_insert(record.len());
        if w != record.len() {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_at {
                let next = class_names.len();
                let id = *class_ids.entry(cell.to_owned()).or_insert_with(|| {
                    class_names.push(cell.to_owned());
                    next
                });
                labels.push(id);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: column_name(j),
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: column_name(j),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = values.len() / n;
    if d == 0 {
        return Err(Error::EmptyDataset);
    }
    if class_names.len() < 2 {
        return Err(Error::SingleClass);
    }
    let features = DMatrix::from_row_slice(n, d, &values);
    Dataset::with_class_names(features, labels, class_names)
}
