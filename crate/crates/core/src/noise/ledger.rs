use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{invalid, AsifError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub sample_id: usize,
    pub true_label: usize,
    pub observed_label: usize,
    pub was_flipped: bool,
}

/// Audit trail of a noise injection, one entry per sample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NoiseLedger {
    pub entries: Vec<LedgerEntry>,
}

const HEADER: &str = "sample_id,true_label,observed_label,was_flipped";

impl NoiseLedger {
    /// A ledger recording the current labels of `dataset`, nothing flipped
    /// unless observed and true labels already differ.
    pub fn of_dataset(dataset: &Dataset) -> Self {
        Self {
            entries: dataset
                .samples()
                .iter()
                .map(|s| LedgerEntry {
                    sample_id: s.id,
                    true_label: s.true_label,
                    observed_label: s.observed_label,
                    was_flipped: s.observed_label != s.true_label,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flipped_count(&self) -> usize {
        self.entries.iter().filter(|e| e.was_flipped).count()
    }

    pub fn flipped_ids(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.was_flipped)
            .map(|e| e.sample_id)
            .collect()
    }

    pub fn get(&self, id: usize) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.sample_id == id)
    }

    /// New dataset carrying the ledger's observed labels.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let map: BTreeMap<usize, usize> = self.entries.iter().map(|e| (e.sample_id, e.observed_label)).collect();
        dataset.relabel(&map)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.sample_id, e.true_label, e.observed_label, e.was_flipped
            ));
        }
        s
    }

    pub fn from_csv(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (i, line) in text.lines().enumerate() {
            let at = offset;
            offset += line.len() as u64 + 1;
            if line.trim().is_empty() || (i == 0 && line.trim() == HEADER) {
                continue;
            }
            let err = |d: &str| AsifError::Parse {
                source_name: source_name.to_string(),
                offset: at,
                detail: format!("line {}: {d}", i + 1),
            };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(&format!("bad integer `{s}`")));
            let was_flipped = match f[3] {
                "true" | "1" => true,
                "false" | "0" => false,
                other => return Err(err(&format!("bad flag `{other}`"))),
            };
            let e = LedgerEntry {
                sample_id: num(f[0])?,
                true_label: num(f[1])?,
                observed_label: num(f[2])?,
                was_flipped,
            };
            if e.was_flipped && e.observed_label == e.true_label {
                return Err(err("flipped entry keeps its true label"));
            }
            entries.push(e);
        }
        let ledger = Self { entries };
        ledger.check_ids_unique()?;
        Ok(ledger)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        Self::from_csv(&fs::read_to_string(p)?, &p.display().to_string())
    }

    /// True labels keyed by sample id.
    pub fn true_labels(&self) -> BTreeMap<usize, usize> {
        self.entries.iter().map(|e| (e.sample_id, e.true_label)).collect()
    }

    fn check_ids_unique(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.sample_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("ledger", "duplicate sample id"));
        }
        Ok(())
    }
}
