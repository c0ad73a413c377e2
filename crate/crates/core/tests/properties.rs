use std::collections::HashSet;
use std::sync::Arc;

use adagcl::data::{inject_noise_excluding, k_core_filter, split, SplitMode};
use adagcl::diffmath::{grad_check, SparseMatrix};
use adagcl::eval::{ndcg_at_n, rank_items, recall_at_n};
use adagcl::{evaluate, Embeddings, EvalMode, InteractionTable, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn random_sparse(rows: usize, cols: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut t = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(density) {
                t.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(rows, cols, &t).unwrap()
}

fn random_table(
    users: usize,
    items: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> InteractionTable {
    let recs = (0..users as u32)
        .flat_map(|u| (0..items as u32).map(move |i| (u, i)))
        .filter(|_| rng.random_bool(density))
        .collect();
    InteractionTable::new(users, items, recs).unwrap()
}

fn rows(t: &InteractionTable) -> HashSet<(u32, u32)> {
    t.records().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn composite_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (rng.random_range(2..6), rng.random_range(1..4));
        let a = Arc::new(random_sparse(n, n, 0.5, &mut rng));
        let params = vec![random_tensor(n, d, &mut rng), random_tensor(d, d, &mut rng)];
        let report = grad_check(
            |t, v| {
                let h = t.spmm(&a, v[0])?;
                let h = t.matmul(h, v[1])?;
                let h = t.tanh(h);
                let h = t.add(h, v[0])?;
                let z = t.normalize_rows(h)?;
                let s = t.matmul_bt(z, z)?;
                let l = t.logsumexp_rows(s);
                let sq = t.sq_frobenius(v[1]);
                let m = t.mean(l);
                t.add(m, sq)
            },
            &params,
            1e-6,
            1e-5,
        )
        .unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn reused_nodes_accumulate_gradients(x in -3.0f64..3.0) {
        // y = x·x + x  ⇒  dy/dx = 2x + 1
        let mut t = Tape::new();
        let v = t.param(Tensor::scalar(x));
        let sq = t.mul(v, v).unwrap();
        let y = t.add(sq, v).unwrap();
        t.backward(y).unwrap();
        prop_assert!((t.grad(v).unwrap()[0] - (2.0 * x + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn sparse_product_matches_dense(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c, k) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..5));
        let a = random_sparse(r, c, 0.3, &mut rng);
        let x = random_tensor(c, k, &mut rng);
        let sparse = a.mul_dense(&x).unwrap();
        prop_assert!(sparse.max_abs_diff(&a.to_dense().matmul(&x)) <= 1e-10);
    }

    #[test]
    fn split_is_a_partition(seed in any::<u64>(), global in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(rng.random_range(1..15), rng.random_range(1..15), 0.4, &mut rng);
        let mode = if global { SplitMode::Global } else { SplitMode::PerUser };
        let s = split(&t, [0.7, 0.1, 0.2], seed, mode).unwrap();
        let parts = [rows(&s.train), rows(&s.validation), rows(&s.test)];
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), t.len());
        let union: HashSet<_> = parts.iter().flatten().copied().collect();
        prop_assert_eq!(union, rows(&t));
        prop_assert_eq!(split(&t, [0.7, 0.1, 0.2], seed, mode).unwrap(), s);
    }

    #[test]
    fn noise_keeps_size_and_avoids_held_out_pairs(seed in any::<u64>(), ratio in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(rng.random_range(2..12), rng.random_range(2..12), 0.3, &mut rng);
        let s = split(&t, [0.6, 0.2, 0.2], seed, SplitMode::Global).unwrap();
        let noisy = match inject_noise_excluding(&s.train, ratio, seed, &[&s.validation, &s.test]) {
            Ok(n) => n,
            Err(_) => return Ok(()),
        };
        let (before, after) = (rows(&s.train), rows(&noisy));
        prop_assert_eq!(after.len(), before.len());
        let fakes: Vec<_> = after.difference(&before).collect();
        prop_assert_eq!(fakes.len(), (ratio * before.len() as f64).round() as usize);
        let held: HashSet<_> = rows(&s.validation).union(&rows(&s.test)).copied().collect();
        prop_assert!(fakes.iter().all(|p| !held.contains(p)));
    }

    #[test]
    fn k_core_meets_minimum_degree(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(rng.random_range(1..20), rng.random_range(1..20), 0.3, &mut rng);
        if let Ok(c) = k_core_filter(&t, k) {
            prop_assert!(c.user_degrees().iter().all(|d| *d >= k));
            prop_assert!(c.item_degrees().iter().all(|d| *d >= k));
        }
    }

    #[test]
    fn metrics_bounded_and_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..40);
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64).collect();
        let mut relevant: Vec<u32> = (0..m as u32).filter(|_| rng.random_bool(0.3)).collect();
        if relevant.is_empty() {
            relevant.push(0);
        }
        let ranked = rank_items(&scores, &[]);
        let mut prev = 0.0;
        for n in 1..=m + 2 {
            let r = recall_at_n(&ranked, &relevant, n).unwrap();
            let g = ndcg_at_n(&ranked, &relevant, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0 + 1e-12).contains(&g));
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }
}

/// Full sort with explicit tie-breaking and a per-item loop; no shared code
/// with the library's ranking.
fn naive_metrics(
    emb: &Embeddings,
    relevant: &[HashSet<u32>],
    masked: &[HashSet<u32>],
    n: usize,
) -> (f64, f64) {
    let (mut recall, mut ndcg, mut users) = (0.0, 0.0, 0);
    for u in 0..emb.users.rows {
        if relevant[u].is_empty() {
            continue;
        }
        let mut cand: Vec<(f64, usize)> = (0..emb.items.rows)
            .filter(|i| !masked[u].contains(&(*i as u32)))
            .map(|i| {
                (
                    (0..emb.users.cols)
                        .map(|c| emb.users.get(u, c) * emb.items.get(i, c))
                        .sum(),
                    i,
                )
            })
            .collect();
        cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let (mut hits, mut dcg) = (0usize, 0.0);
        for (p, (_, i)) in cand.iter().take(n).enumerate() {
            if relevant[u].contains(&(*i as u32)) {
                hits += 1;
                dcg += 1.0 / ((p + 2) as f64).log2();
            }
        }
        let idcg: f64 = (0..relevant[u].len().min(n))
            .map(|p| 1.0 / ((p + 2) as f64).log2())
            .sum();
        recall += hits as f64 / relevant[u].len() as f64;
        ndcg += dcg / idcg;
        users += 1;
    }
    (recall / users as f64, ndcg / users as f64)
}

#[test]
fn evaluation_matches_naive_oracle() {
    let mut checked = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(
            rng.random_range(3..25),
            rng.random_range(3..60),
            0.3,
            &mut rng,
        );
        let s = split(&t, [0.6, 0.2, 0.2], seed, SplitMode::PerUser).unwrap();
        // coarse values so ties are common
        let mut coarse = |r: usize, c: usize| {
            Tensor::from_vec(
                r,
                c,
                (0..r * c).map(|_| rng.random_range(-2..3) as f64).collect(),
            )
        };
        let emb = Embeddings {
            users: coarse(s.user_count(), 3),
            items: coarse(s.item_count(), 3),
        };
        let Ok(rep) = evaluate(&emb, &s, EvalMode::Test, &[5, 20]) else {
            continue;
        };
        let sets = |t: &InteractionTable| -> Vec<HashSet<u32>> {
            t.user_items()
                .into_iter()
                .map(|v| v.into_iter().collect())
                .collect()
        };
        let relevant = sets(&s.test);
        let masked: Vec<HashSet<u32>> = sets(&s.train)
            .into_iter()
            .zip(sets(&s.validation))
            .map(|(a, b)| a.union(&b).copied().collect())
            .collect();
        for (k, n) in [5, 20].into_iter().enumerate() {
            let (r, g) = naive_metrics(&emb, &relevant, &masked, n);
            assert!((rep.recall[k] - r).abs() < 1e-12, "seed {seed} recall@{n}");
            assert!(
                (rep.ndcg[k] - g).abs() < 1e-12,
                "seed {seed} ndcg@{n}: {} vs {g}",
                rep.ndcg[k]
            );
        }
        checked += 1;
    }
    assert!(checked >= 45, "only {checked} instances had test users");
}
