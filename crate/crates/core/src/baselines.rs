//! Comparison models trained through the same loop and evaluation path:
//! plain LightGCN (no contrastive term) and random edge-drop contrast.

use crate::data::SplitSet;
use crate::trainer::{fit, History, TrainConfig, TrainState, Variant};
use crate::Result;

pub fn lightgcn_config(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        lambda1: 0.0,
        ..cfg.clone()
    }
}

pub fn edge_drop_config(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        variant: Variant::EdgeDrop,
        ..cfg.clone()
    }
}

/// BPR-only training; no view generator is constructed.
pub fn train_lightgcn(cfg: &TrainConfig, splits: &SplitSet) -> Result<(TrainState, History)> {
    fit(&lightgcn_config(cfg), splits)
}

/// Contrast between two random edge-drop subgraphs with keep ratio
/// `1 − edge_drop_ratio`.
pub fn train_edge_drop(cfg: &TrainConfig, splits: &SplitSet) -> Result<(TrainState, History)> {
    fit(&edge_drop_config(cfg), splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, InteractionGraph, InteractionTable, SplitMode};
    use crate::diffmath::Tape;
    use crate::objectives::infonce;
    use crate::trainer::sample_triplets;
    use crate::viewgen::generate_view;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn splits() -> SplitSet {
        let recs = (0..20u32)
            .flat_map(|u| (0..6u32).map(move |k| (u, (u * 3 + k * 5) % 25)))
            .collect();
        split(
            &InteractionTable::new(20, 25, recs).unwrap(),
            [0.7, 0.2, 0.1],
            3,
            SplitMode::PerUser,
        )
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            dim: 6,
            max_epochs: 2,
            batch_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn lightgcn_is_deterministic_and_generator_free() {
        let (a, ha) = train_lightgcn(&cfg(), &splits()).unwrap();
        let (b, hb) = train_lightgcn(&cfg(), &splits()).unwrap();
        assert!(!a.has_generators());
        assert_eq!(a.checksums(), b.checksums());
        assert_eq!(ha.to_csv(), hb.to_csv());
    }

    #[test]
    fn zero_drop_gives_identical_views() {
        let s = splits();
        let c = TrainConfig {
            edge_drop_ratio: 0.0,
            ..edge_drop_config(&cfg())
        };
        let state = TrainState::new(&c, s.user_count(), s.item_count()).unwrap();
        let g = InteractionGraph::build(&s.train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let keep = vec![1.0; g.edge_count()];
        let v1 = generate_view(&g, &keep, &mut rng).unwrap().graph;
        let v2 = generate_view(&g, &keep, &mut rng).unwrap().graph;
        let (e1, e2) = (
            state.main.embed(&v1).unwrap(),
            state.main.embed(&v2).unwrap(),
        );
        assert_eq!(e1, e2);
        let n = s.user_count() as f64;
        let mut t = Tape::new();
        let (a, b) = (t.constant(e1.users), t.constant(e2.users));
        // positives sit at cosine 1, so no anchor exceeds log N; with τ → ∞ every
        // logit ties and the bound is reached
        let l = infonce(&mut t, a, b, 0.2).unwrap();
        assert!(t.scalar(l) <= n.ln() + 1e-12);
        let l = infonce(&mut t, a, b, 1e6).unwrap();
        assert!((t.scalar(l) - n.ln()).abs() < 1e-4);
        let batch = sample_triplets(&s.train, 16, &mut rng);
        assert!(!batch.is_empty());
    }

    #[test]
    fn positive_drop_views_differ() {
        let s = splits();
        let g = InteractionGraph::build(&s.train).unwrap();
        let keep = vec![0.9; g.edge_count()];
        let differing = (0..20u64)
            .filter(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let a = generate_view(&g, &keep, &mut rng).unwrap().graph.edges();
                let b = generate_view(&g, &keep, &mut rng).unwrap().graph.edges();
                a != b
            })
            .count();
        assert!(differing >= 19);
    }

    #[test]
    fn edge_drop_trains() {
        let (state, h) = train_edge_drop(&cfg(), &splits()).unwrap();
        assert!(!state.has_generators());
        assert!(h.records.iter().all(|r| r.losses.ssl > 0.0));
    }
}
