use std::fs;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{AsifError, Result};

/// Layout of a `label,feat0,feat1,...` file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsvSchema {
    pub has_header: bool,
    /// When unset, the class count is one more than the largest label.
    pub num_classes: Option<usize>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_csv(&text, &path.display().to_string(), schema)
}

pub(crate) fn parse_csv(text: &str, source_name: &str, schema: CsvSchema) -> Result<Dataset> {
    let err = |offset: usize, detail: String| AsifError::Parse {
        source_name: source_name.to_string(),
        offset: offset as u64,
        detail,
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut offset = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() + 1;
        if (lineno == 0 && schema.has_header) || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or_default();
        let label: usize = label_field
            .parse()
            .map_err(|_| err(line_offset, format!("line {}: bad label `{label_field}`", lineno + 1)))?;
        if let Some(c) = schema.num_classes {
            if label >= c {
                return Err(err(
                    line_offset,
                    format!("line {}: unknown label {label} (classes: {c})", lineno + 1),
                ));
            }
        }
        let row = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(line_offset, format!("line {}: bad feature `{f}`", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(err(
                    line_offset,
                    format!(
                        "line {}: ragged row with {} features, expected {w}",
                        lineno + 1,
                        row.len()
                    ),
                ))
            }
            _ => {}
        }
        features.push(row);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(err(0, "no data rows".into()));
    }
    let classes = schema
        .num_classes
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
    Dataset::from_labelled(features, labels, classes)
}

/// Writes `label,f0,...` rows (observed labels) with a header line.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..dataset.feature_dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for s in dataset.samples() {
        out.push_str(&s.observed_label.to_string());
        for v in &s.features {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}
