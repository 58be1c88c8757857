use std::collections::BTreeMap;

use super::Dataset;
use crate::error::{AsifError, Result};

/// Within-class identity indices over observed labels.
///
/// Indices are assigned `0..N_c` in ascending sample-id order inside each
/// observed class, so they are stable across epochs. Rebuild after any
/// relabelling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityRegistry {
    entries: BTreeMap<usize, (usize, usize)>,
    counts: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl IdentityRegistry {
    pub fn build(dataset: &Dataset) -> Self {
        let mut by_id: Vec<(usize, usize)> = dataset.samples().iter().map(|s| (s.id, s.observed_label)).collect();
        by_id.sort_unstable();
        let mut counts = vec![0usize; dataset.num_classes()];
        let mut members = vec![Vec::new(); dataset.num_classes()];
        let mut entries = BTreeMap::new();
        for (id, c) in by_id {
            entries.insert(id, (c, counts[c]));
            members[c].push(id);
            counts[c] += 1;
        }
        Self {
            entries,
            counts,
            members,
        }
    }

    /// `(observed_class, within_class_index)` of a sample.
    pub fn lookup(&self, id: usize) -> Result<(usize, usize)> {
        self.entries.get(&id).copied().ok_or(AsifError::IndexOutOfRange {
            what: "registered sample id",
            index: id,
            limit: self.entries.len(),
        })
    }

    /// `N_c` for every class.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }

    /// Sample ids of class `c`, ordered by within-class index.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }
}
