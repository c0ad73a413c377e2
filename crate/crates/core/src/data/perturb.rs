use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, InteractionGraph, InteractionTable};

/// Replaces `round(ratio · |edges|)` uniformly chosen interactions by the
/// same number of uniformly drawn pairs that were not interactions before.
pub fn inject_noise_table(
    table: &InteractionTable,
    ratio: f64,
    seed: u64,
) -> Result<InteractionTable, DataError> {
    inject_noise_excluding(table, ratio, seed, &[])
}

/// [`inject_noise_table`] where the fake pairs also avoid every pair of the
/// `exclude` tables (e.g. held-out interactions).
pub fn inject_noise_excluding(
    table: &InteractionTable,
    ratio: f64,
    seed: u64,
    exclude: &[&InteractionTable],
) -> Result<InteractionTable, DataError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DataError::Invalid(format!(
            "noise ratio {ratio} outside [0, 1]"
        )));
    }
    let edges = table.records();
    let count = (ratio * edges.len() as f64).round() as usize;
    if count == 0 {
        return Ok(table.clone());
    }
    let (users, items) = (table.user_count(), table.item_count());
    let mut original: HashSet<(u32, u32)> = edges.iter().copied().collect();
    for t in exclude {
        original.extend(t.records().iter().copied());
    }
    let cells = users * items;
    let available = cells - original.len();
    if available < count {
        return Err(DataError::TooDense {
            needed: count,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed: HashSet<usize> = sample(&mut rng, edges.len(), count).into_iter().collect();
    let mut fakes: HashSet<(u32, u32)> = HashSet::with_capacity(count);
    if available < 2 * count {
        // Nearly full: enumerate the free cells instead of rejection sampling.
        let free: Vec<(u32, u32)> = (0..users as u32)
            .flat_map(|u| (0..items as u32).map(move |i| (u, i)))
            .filter(|p| !original.contains(p))
            .collect();
        for k in sample(&mut rng, free.len(), count) {
            fakes.insert(free[k]);
        }
    } else {
        while fakes.len() < count {
            let pair = (
                rng.random_range(0..users as u32),
                rng.random_range(0..items as u32),
            );
            if !original.contains(&pair) {
                fakes.insert(pair);
            }
        }
    }
    let mut records: Vec<(u32, u32)> = edges
        .iter()
        .enumerate()
        .filter(|(k, _)| !removed.contains(k))
        .map(|(_, e)| *e)
        .collect();
    records.extend(fakes);
    Ok(table.derive(records))
}

/// Graph form of [`inject_noise_table`]; normalisation is rebuilt.
pub fn inject_noise(
    graph: &InteractionGraph,
    ratio: f64,
    seed: u64,
) -> Result<InteractionGraph, DataError> {
    let table = InteractionTable::new(graph.user_count(), graph.item_count(), graph.edges())?;
    let noisy = inject_noise_table(&table, ratio, seed)?;
    Ok(InteractionGraph::from_edges(
        noisy.user_count(),
        noisy.item_count(),
        noisy.records(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    User,
    Item,
}

/// Degree buckets `[0, b0), [b0, b1), …, [b_last, ∞)` and each entity's bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub axis: Axis,
    pub boundaries: Vec<usize>,
    pub group_of: Vec<usize>,
}

impl GroupAssignment {
    pub fn group_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        self.group_of
            .iter()
            .enumerate()
            .filter_map(|(e, g)| (*g == group).then_some(e))
            .collect()
    }

    pub fn label(&self, group: usize) -> String {
        let lo = if group == 0 {
            0
        } else {
            self.boundaries[group - 1]
        };
        match self.boundaries.get(group) {
            Some(hi) => format!("[{lo},{hi})"),
            None => format!("[{lo},inf)"),
        }
    }
}

pub fn group_by_interactions(
    table: &InteractionTable,
    boundaries: &[usize],
    axis: Axis,
) -> Result<GroupAssignment, DataError> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DataError::Invalid(format!(
            "group boundaries {boundaries:?} not strictly ascending"
        )));
    }
    let degrees = match axis {
        Axis::User => table.user_degrees(),
        Axis::Item => table.item_degrees(),
    };
    let group_of = degrees
        .iter()
        .map(|d| boundaries.partition_point(|b| b <= d))
        .collect();
    Ok(GroupAssignment {
        axis,
        boundaries: boundaries.to_vec(),
        group_of,
    })
}
