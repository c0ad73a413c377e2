//! Alternating two-level training: an upper step on the main encoder
//! (BPR + λ₁·InfoNCE between the two views + λ₂·L2), then a lower step on the
//! view generators with their own objectives.

mod config;
mod fit;
mod sampling;
mod state;
mod step;

pub use config::{GenBatch, TrainConfig, Variant};
pub use fit::{fit, fit_with, EpochRecord, History};
pub use sampling::{epoch_batches, sample_triplets};
pub use state::{named_stream, Stream, Streams, TrainState};
pub use step::{train_step, view_embeddings, StepMetrics};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, InteractionGraph, InteractionTable, SplitMode, SplitSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Users and items in `blocks` communities; in-block pairs with `p_in`,
    /// others with `p_out`.
    fn planted(
        users: usize,
        items: usize,
        blocks: usize,
        p_in: f64,
        p_out: f64,
        seed: u64,
    ) -> InteractionTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for u in 0..users {
            for i in 0..items {
                let same = u * blocks / users == i * blocks / items;
                if rng.random_bool(if same { p_in } else { p_out }) {
                    recs.push((u as u32, i as u32));
                }
            }
        }
        InteractionTable::new(users, items, recs).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            layers: 2,
            batch_size: 64,
            max_epochs: 3,
            lr: 1e-2,
            ..Default::default()
        }
    }

    fn small_split() -> SplitSet {
        split(
            &planted(24, 30, 3, 0.5, 0.02, 1),
            [0.7, 0.2, 0.1],
            1,
            SplitMode::PerUser,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let cfg = TrainConfig {
            max_epochs: 0,
            ..small_cfg()
        };
        let s = small_split();
        let (state, h) = fit(&cfg, &s).unwrap();
        assert!(h.records.is_empty());
        let fresh = TrainState::new(&cfg, s.user_count(), s.item_count()).unwrap();
        assert_eq!(state.checksums(), fresh.checksums());
    }

    #[test]
    fn identical_runs_identical_history() {
        let s = small_split();
        for variant in Variant::ALL {
            let cfg = TrainConfig {
                variant,
                ..small_cfg()
            };
            let (a, ha) = fit(&cfg, &s).unwrap();
            let (b, hb) = fit(&cfg, &s).unwrap();
            assert_eq!(ha.to_csv(), hb.to_csv(), "{variant}");
            assert_eq!(a.checksums(), b.checksums());
        }
    }

    #[test]
    fn bilevel_isolation() {
        let s = small_split();
        let graph = InteractionGraph::build(&s.train).unwrap();
        let batch = sample_triplets(&s.train, 32, &mut ChaCha8Rng::seed_from_u64(2));
        for variant in [Variant::Full, Variant::GenGen, Variant::NoTask] {
            let cfg = TrainConfig {
                variant,
                ..small_cfg()
            };
            let state = TrainState::new(&cfg, s.user_count(), s.item_count()).unwrap();
            let before = state.checksums();
            let mut m = StepMetrics::default();

            let mut up = state.clone();
            step::upper_step(&mut up, &graph, &batch, &mut m).unwrap();
            assert_ne!(up.checksums()[0], before[0], "{variant}");
            assert_eq!(up.checksums()[1..], before[1..], "{variant}");

            let mut low = state.clone();
            step::lower_step(&mut low, &s.train, &graph, &batch, &mut m).unwrap();
            assert_eq!(low.checksums()[0], before[0], "{variant}");
            for k in 1..4 {
                assert_eq!(before[k].is_some(), low.checksums()[k].is_some());
                if before[k].is_some() {
                    assert_ne!(low.checksums()[k], before[k], "{variant}: group {k}");
                }
            }

            let mut full = state.clone();
            train_step(&mut full, &s.train, &graph, &batch).unwrap();
            assert_eq!(full.opt_main.step_count(), 1);
            for opt in [&full.opt_vgae, &full.opt_vgae2, &full.opt_denoiser]
                .into_iter()
                .flatten()
            {
                assert_eq!(opt.step_count(), 1);
            }
        }
    }

    #[test]
    fn overfits_fixed_batch() {
        let s = small_split();
        let graph = InteractionGraph::build(&s.train).unwrap();
        let cfg = TrainConfig {
            lr: 5e-3,
            ..small_cfg()
        };
        let mut state = TrainState::new(&cfg, s.user_count(), s.item_count()).unwrap();
        let batch = sample_triplets(&s.train, 48, &mut ChaCha8Rng::seed_from_u64(3));
        let first = train_step(&mut state, &s.train, &graph, &batch)
            .unwrap()
            .upper;
        let mut last = first;
        for _ in 0..49 {
            last = train_step(&mut state, &s.train, &graph, &batch)
                .unwrap()
                .upper;
        }
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn lightgcn_path_never_builds_generators() {
        let cfg = TrainConfig {
            lambda1: 0.0,
            ..small_cfg()
        };
        let (state, h) = fit(&cfg, &small_split()).unwrap();
        assert!(!state.has_generators());
        assert!(h
            .records
            .iter()
            .all(|r| r.losses.ssl == 0.0 && r.losses.lower == 0.0));
    }

    #[test]
    fn edge_drop_views_differ() {
        let s = small_split();
        let graph = InteractionGraph::build(&s.train).unwrap();
        let cfg = TrainConfig {
            variant: Variant::EdgeDrop,
            edge_drop_ratio: 0.3,
            ..small_cfg()
        };
        let mut state = TrainState::new(&cfg, s.user_count(), s.item_count()).unwrap();
        let batch = sample_triplets(&s.train, 32, &mut ChaCha8Rng::seed_from_u64(4));
        let m = train_step(&mut state, &s.train, &graph, &batch).unwrap();
        assert!(m.view1_kept < 1.0 && m.view2_kept < 1.0);
    }

    #[test]
    fn view_exports_follow_the_generators() {
        let s = small_split();
        let graph = InteractionGraph::build(&s.train).unwrap();
        let mut state = TrainState::new(&small_cfg(), s.user_count(), s.item_count()).unwrap();
        let (a, b) = view_embeddings(&mut state.clone(), &graph).unwrap();
        assert_eq!(
            (a.users.rows, a.items.rows),
            (s.user_count(), s.item_count())
        );
        assert_ne!(a, b);
        let den = state.denoiser.as_mut().unwrap();
        for t in den.params.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= 0.5);
        }
        let (_, b2) = view_embeddings(&mut state.clone(), &graph).unwrap();
        assert_ne!(b, b2);
        let lgcn = TrainConfig {
            lambda1: 0.0,
            ..small_cfg()
        };
        let mut plain = TrainState::new(&lgcn, s.user_count(), s.item_count()).unwrap();
        assert!(view_embeddings(&mut plain, &graph).is_err());
    }

    #[test]
    fn validation_recall_improves_on_planted_blocks() {
        // 4 communities of 15 users × 25 items; Recall@20 is informative with J = 100
        let t = planted(60, 100, 4, 0.4, 0.01, 5);
        let s = split(&t, [0.7, 0.2, 0.1], 5, SplitMode::PerUser).unwrap();
        let cfg = TrainConfig {
            dim: 16,
            batch_size: 256,
            lr: 1e-2,
            max_epochs: 5,
            patience: 0,
            ..Default::default()
        };
        let (_, h) = fit(&cfg, &s).unwrap();
        let r = h.validation_recalls();
        assert_eq!(r.len(), 5);
        assert!(r[4] > r[0], "{r:?}");
    }

    #[test]
    fn early_stopping_restores_best() {
        let s = small_split();
        let cfg = TrainConfig {
            lr: 0.3,
            max_epochs: 30,
            patience: 2,
            ..small_cfg()
        };
        let (state, h) = fit(&cfg, &s).unwrap();
        let best = h
            .validation_recalls()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(h.best_metric, best);
        let graph = InteractionGraph::build(&s.train).unwrap();
        let rep = crate::eval::evaluate(
            &state.main.embed(&graph).unwrap(),
            &s,
            crate::eval::EvalMode::Validation,
            &[20],
        )
        .unwrap();
        assert_eq!(rep.recall[0], best);
    }
}
