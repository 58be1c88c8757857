//! Plain CSV artifacts keyed by sample id.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AsifError, Result};

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> AsifError {
    AsifError::Parse {
        source_name: path.display().to_string(),
        offset: line as u64,
        detail: detail.into(),
    }
}

/// `sample_id,f0,...` rows, ascending id.
pub fn write_features(path: &Path, features: &BTreeMap<usize, Vec<f64>>) -> Result<()> {
    let width = features.values().next().map_or(0, Vec::len);
    let mut out = String::from("sample_id");
    for j in 0..width {
        write!(out, ",f{j}").expect("string write");
    }
    out.push('\n');
    for (id, row) in features {
        write!(out, "{id}").expect("string write");
        for v in row {
            write!(out, ",{v:?}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<BTreeMap<usize, Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let width = header.split(',').count().saturating_sub(1);
    let mut out = BTreeMap::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let mut cells = line.split(',');
        let id: usize = cells
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| parse_err(path, i + 1, "bad sample id"))?;
        let row = cells
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("bad value `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != width {
            return Err(parse_err(
                path,
                i + 1,
                format!("{} values, header has {width}", row.len()),
            ));
        }
        if out.insert(id, row).is_some() {
            return Err(parse_err(path, i + 1, format!("duplicate sample id {id}")));
        }
    }
    Ok(out)
}

/// `sample_id,loss` rows, ascending id.
pub fn write_losses(path: &Path, losses: &BTreeMap<usize, f64>) -> Result<()> {
    let mut out = String::from("sample_id,loss\n");
    for (id, l) in losses {
        writeln!(out, "{id},{l:?}").expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_losses(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let feats = read_features(path)?;
    feats
        .into_iter()
        .map(|(id, v)| match v.as_slice() {
            [l] => Ok((id, *l)),
            _ => Err(parse_err(path, 0, "expected exactly one loss column")),
        })
        .collect()
}
