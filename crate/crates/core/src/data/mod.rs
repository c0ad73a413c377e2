//! Interaction ingestion, splitting, graph construction and perturbations.

mod graph;
mod io;
mod perturb;
mod split;

use std::sync::Arc;

pub use graph::InteractionGraph;
pub(crate) use io::sha256_hex;
pub use io::{
    load_interactions, read_manifest, read_split, sha256_file, write_split, Format, SplitCounts,
    SplitManifest,
};
pub use perturb::{
    group_by_interactions, inject_noise, inject_noise_excluding, inject_noise_table, Axis,
    GroupAssignment,
};
pub use split::{k_core_filter, split, SplitMode, SplitSet};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset is empty")]
    Empty,
    #[error("{k}-core filtering removed every interaction")]
    KCoreEmpty { k: usize },
    #[error("cannot place {needed} fake edges: only {available} non-edges exist")]
    TooDense { needed: usize, available: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("index ({0},{1}) outside table bounds")]
    OutOfRange(usize, usize),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Deduplicated implicit-feedback interactions over dense zero-based ids.
///
/// Records are kept sorted by `(user, item)`. The raw id strings of users and
/// items are shared between all tables derived from the same source.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    user_count: usize,
    item_count: usize,
    records: Vec<(u32, u32)>,
    user_ids: Arc<Vec<String>>,
    item_ids: Arc<Vec<String>>,
}

impl InteractionTable {
    /// Builds a table with numeric raw ids; duplicate pairs are collapsed.
    pub fn new(
        user_count: usize,
        item_count: usize,
        records: Vec<(u32, u32)>,
    ) -> Result<Self, DataError> {
        let user_ids = Arc::new((0..user_count).map(|u| u.to_string()).collect());
        let item_ids = Arc::new((0..item_count).map(|i| i.to_string()).collect());
        Self::with_ids(user_ids, item_ids, records)
    }

    pub fn with_ids(
        user_ids: Arc<Vec<String>>,
        item_ids: Arc<Vec<String>>,
        mut records: Vec<(u32, u32)>,
    ) -> Result<Self, DataError> {
        let (user_count, item_count) = (user_ids.len(), item_ids.len());
        if let Some(&(u, i)) = records
            .iter()
            .find(|(u, i)| *u as usize >= user_count || *i as usize >= item_count)
        {
            return Err(DataError::OutOfRange(u as usize, i as usize));
        }
        records.sort_unstable();
        records.dedup();
        Ok(InteractionTable {
            user_count,
            item_count,
            records,
            user_ids,
            item_ids,
        })
    }

    /// Same id space, different records.
    pub fn derive(&self, records: Vec<(u32, u32)>) -> Self {
        Self::with_ids(
            Arc::clone(&self.user_ids),
            Arc::clone(&self.item_ids),
            records,
        )
        .expect("derived records stay within the parent id space")
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn records(&self) -> &[(u32, u32)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn density(&self) -> f64 {
        self.records.len() as f64 / (self.user_count as f64 * self.item_count as f64)
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.user_count];
        self.records.iter().for_each(|(u, _)| d[*u as usize] += 1);
        d
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.item_count];
        self.records.iter().for_each(|(_, i)| d[*i as usize] += 1);
        d
    }

    /// Items of each user, ascending.
    pub fn user_items(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.user_count];
        for &(u, i) in &self.records {
            out[u as usize].push(i);
        }
        out
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.records.binary_search(&(user, item)).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_and_sort() {
        let t = InteractionTable::new(2, 2, vec![(1, 0), (0, 1), (1, 0)]).unwrap();
        assert_eq!(t.records(), &[(0, 1), (1, 0)]);
        assert!(t.contains(1, 0));
        assert!(!t.contains(0, 0));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(
            InteractionTable::new(1, 1, vec![(0, 1)]),
            Err(DataError::OutOfRange(0, 1))
        ));
    }
}
