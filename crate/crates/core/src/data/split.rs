use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, InteractionTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Each user's interactions are divided by the ratios.
    #[default]
    PerUser,
    /// All interactions are shuffled and divided once.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: InteractionTable,
    pub validation: InteractionTable,
    pub test: InteractionTable,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub mode: SplitMode,
}

impl SplitSet {
    pub fn user_count(&self) -> usize {
        self.train.user_count()
    }

    pub fn item_count(&self) -> usize {
        self.train.item_count()
    }
}

/// Part sizes for `n` interactions: floor of each share, then the remainder
/// handed out one at a time to train, validation, test in that order.
pub(crate) fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let mut sizes = ratios.map(|r| (r * n as f64 + 1e-9).floor() as usize);
    let mut rem = n - sizes.iter().sum::<usize>().min(n);
    let mut k = 0;
    while rem > 0 {
        sizes[k % 3] += 1;
        rem -= 1;
        k += 1;
    }
    sizes
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), DataError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

/// Deterministic train/validation/test partition.
pub fn split(
    table: &InteractionTable,
    ratios: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<SplitSet, DataError> {
    check_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<(u32, u32)>; 3] = Default::default();
    let mut assign = |records: &mut Vec<(u32, u32)>, rng: &mut ChaCha8Rng| {
        records.shuffle(rng);
        let sizes = part_sizes(records.len(), ratios);
        let mut it = records.iter().copied();
        for (p, s) in sizes.iter().enumerate() {
            parts[p].extend(it.by_ref().take(*s));
        }
    };
    match mode {
        SplitMode::PerUser => {
            for (u, items) in table.user_items().into_iter().enumerate() {
                let mut recs: Vec<(u32, u32)> = items.into_iter().map(|i| (u as u32, i)).collect();
                assign(&mut recs, &mut rng);
            }
        }
        SplitMode::Global => {
            let mut recs = table.records().to_vec();
            assign(&mut recs, &mut rng);
        }
    }
    let [train, validation, test] = parts;
    Ok(SplitSet {
        train: table.derive(train),
        validation: table.derive(validation),
        test: table.derive(test),
        seed,
        ratios,
        mode,
    })
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// every remaining entity has at least `k`, then re-compacts indices
/// (preserving relative order and raw ids).
pub fn k_core_filter(table: &InteractionTable, k: usize) -> Result<InteractionTable, DataError> {
    if k == 0 {
        return Err(DataError::Invalid("k must be at least 1".into()));
    }
    let mut records = table.records().to_vec();
    loop {
        let mut ud: HashMap<u32, usize> = HashMap::new();
        let mut id: HashMap<u32, usize> = HashMap::new();
        for &(u, i) in &records {
            *ud.entry(u).or_default() += 1;
            *id.entry(i).or_default() += 1;
        }
        let before = records.len();
        records.retain(|(u, i)| ud[u] >= k && id[i] >= k);
        if records.len() == before {
            break;
        }
    }
    if records.is_empty() {
        return Err(DataError::KCoreEmpty { k });
    }
    let remap = |ids: &[String], used: &mut Vec<u32>| -> (Vec<Option<u32>>, Vec<String>) {
        used.sort_unstable();
        used.dedup();
        let mut map = vec![None; ids.len()];
        let mut names = Vec::with_capacity(used.len());
        for (new, &old) in used.iter().enumerate() {
            map[old as usize] = Some(new as u32);
            names.push(ids[old as usize].clone());
        }
        (map, names)
    };
    let mut users: Vec<u32> = records.iter().map(|r| r.0).collect();
    let mut items: Vec<u32> = records.iter().map(|r| r.1).collect();
    let (umap, unames) = remap(table.user_ids(), &mut users);
    let (imap, inames) = remap(table.item_ids(), &mut items);
    let records = records
        .into_iter()
        .map(|(u, i)| (umap[u as usize].unwrap(), imap[i as usize].unwrap()))
        .collect();
    InteractionTable::with_ids(Arc::new(unames), Arc::new(inames), records)
}
