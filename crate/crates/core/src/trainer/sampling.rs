use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::InteractionTable;
use crate::objectives::TripletBatch;

/// Pairs each observed `(user, item)` with a uniformly drawn item the user
/// has not interacted with. Users who interacted with every item are skipped.
fn with_negatives<R: Rng + ?Sized>(
    train: &InteractionTable,
    pairs: impl Iterator<Item = (u32, u32)>,
    rng: &mut R,
) -> TripletBatch {
    let items = train.item_count();
    let degrees = train.user_degrees();
    let mut batch = TripletBatch::default();
    let mut skipped = 0usize;
    for (u, i) in pairs {
        if degrees[u as usize] >= items {
            skipped += 1;
            continue;
        }
        let j = loop {
            let j = rng.random_range(0..items as u32);
            if !train.contains(u, j) {
                break j;
            }
        };
        batch.push(u as usize, i as usize, j as usize);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} triples of users who interacted with every item");
    }
    batch
}

/// `batch_size` triples whose positives are drawn uniformly (with
/// replacement) from the training interactions.
pub fn sample_triplets<R: Rng + ?Sized>(
    train: &InteractionTable,
    batch_size: usize,
    rng: &mut R,
) -> TripletBatch {
    let recs = train.records();
    if recs.is_empty() {
        return TripletBatch::default();
    }
    let picks: Vec<(u32, u32)> = (0..batch_size)
        .map(|_| recs[rng.random_range(0..recs.len())])
        .collect();
    with_negatives(train, picks.into_iter(), rng)
}

/// One epoch: every training interaction exactly once as a positive, in
/// shuffled order, chunked into batches.
pub fn epoch_batches<R: Rng + ?Sized>(
    train: &InteractionTable,
    batch_size: usize,
    rng: &mut R,
) -> Vec<TripletBatch> {
    let mut order: Vec<(u32, u32)> = train.records().to_vec();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| with_negatives(train, c.iter().copied(), rng))
        .filter(|b| !b.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn only_other_item_is_negative() {
        let t = InteractionTable::new(1, 2, vec![(0, 0)]).unwrap();
        let b = sample_triplets(&t, 50, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(b.len(), 50);
        assert!(b.triples().all(|x| x == (0, 0, 1)));
    }

    #[test]
    fn membership_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs = (0..30u32)
            .flat_map(|u| (0..(u % 7 + 1)).map(move |i| (u, (i * 5 + u) % 20)))
            .collect();
        let t = InteractionTable::new(30, 20, recs).unwrap();
        for b in epoch_batches(&t, 16, &mut rng)
            .iter()
            .chain([&sample_triplets(&t, 300, &mut rng)])
        {
            for (u, i, j) in b.triples() {
                assert!(t.contains(u as u32, i as u32));
                assert!(!t.contains(u as u32, j as u32));
            }
        }
        let total: usize = epoch_batches(&t, 16, &mut rng)
            .iter()
            .map(|b| b.len())
            .sum();
        assert_eq!(total, t.len());
    }

    #[test]
    fn deterministic_stream() {
        let t = InteractionTable::new(5, 9, (0..5).flat_map(|u| [(u, u), (u, u + 3)]).collect())
            .unwrap();
        let a = sample_triplets(&t, 40, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_triplets(&t, 40, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_user_skipped() {
        let t = InteractionTable::new(2, 2, vec![(0, 0), (0, 1), (1, 0)]).unwrap();
        let b = sample_triplets(&t, 100, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(b.users.iter().all(|u| *u == 1));
        assert!(!b.is_empty());
    }
}
