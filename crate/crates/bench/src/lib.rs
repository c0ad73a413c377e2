//! Criterion benchmarks for sparse propagation, training steps and
//! all-rank evaluation on synthetic interaction tables.

use std::hint::black_box;
use std::sync::Arc;

use adagcl::data::{split, SplitMode};
use adagcl::diffmath::Tensor;
use adagcl::eval::DEFAULT_CUTOFFS;
use adagcl::trainer::{named_stream, sample_triplets, train_step, Stream};
use adagcl::{
    evaluate, InteractionGraph, InteractionTable, LightGcn, Propagation, TrainConfig, TrainState,
};
use criterion::{BenchmarkId, Criterion, Throughput};

/// `users × per_user` interactions spread by multiplicative hashing.
pub fn synthetic_table(users: usize, items: usize, per_user: usize) -> InteractionTable {
    let recs = (0..users)
        .flat_map(|u| {
            (0..per_user).map(move |k| {
                (
                    u as u32,
                    ((u * 7919 + k * 104_729 + k * k * 13) % items) as u32,
                )
            })
        })
        .collect();
    InteractionTable::new(users, items, recs).expect("synthetic table")
}

fn spmm(c: &mut Criterion) {
    let mut g = c.benchmark_group("spmm");
    for per_user in [10, 20, 40] {
        let graph = InteractionGraph::build(&synthetic_table(2000, 3000, per_user)).unwrap();
        let a = Arc::clone(graph.normalized());
        let x = Tensor::filled(a.cols(), 64, 0.5);
        g.throughput(Throughput::Elements(a.nnz() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(a.nnz()), &x, |b, x| {
            b.iter(|| black_box(a.mul_dense(x).unwrap()))
        });
    }
    g.finish();
}

fn propagate(c: &mut Criterion) {
    let mut g = c.benchmark_group("propagate");
    for per_user in [10, 20, 40] {
        let table = synthetic_table(2000, 3000, per_user);
        let graph = InteractionGraph::build(&table).unwrap();
        let model = LightGcn::new(
            2000,
            3000,
            64,
            3,
            Propagation::Residual,
            &mut named_stream(1, Stream::InitMain),
        );
        g.throughput(Throughput::Elements(graph.edge_count() as u64));
        g.bench_with_input(
            BenchmarkId::from_parameter(graph.edge_count()),
            &graph,
            |b, graph| b.iter(|| black_box(model.embed(graph).unwrap())),
        );
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let table = synthetic_table(1000, 1500, 20);
    let graph = InteractionGraph::build(&table).unwrap();
    let batch = sample_triplets(&table, 2048, &mut named_stream(2, Stream::Batch));
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (name, lambda1) in [("lightgcn", 0.0), ("adagcl", 0.1)] {
        let cfg = TrainConfig {
            dim: 32,
            lambda1,
            ..Default::default()
        };
        let state = TrainState::new(&cfg, 1000, 1500).unwrap();
        g.bench_function(name, |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| black_box(train_step(&mut s, &table, &graph, &batch).unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn all_rank(c: &mut Criterion) {
    let table = synthetic_table(2000, 3000, 20);
    let s = split(&table, [0.7, 0.2, 0.1], 3, SplitMode::PerUser).unwrap();
    let model = LightGcn::new(
        2000,
        3000,
        64,
        2,
        Propagation::Residual,
        &mut named_stream(1, Stream::InitMain),
    );
    let emb = model
        .embed(&InteractionGraph::build(&s.train).unwrap())
        .unwrap();
    c.bench_function("evaluate_all_rank", |b| {
        b.iter(|| black_box(evaluate(&emb, &s, adagcl::EvalMode::Test, &DEFAULT_CUTOFFS).unwrap()))
    });
}

pub fn benchmarks(c: &mut Criterion) {
    spmm(c);
    propagate(c);
    step(c);
    all_rank(c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_table_has_requested_shape() {
        let t = synthetic_table(50, 80, 5);
        assert_eq!((t.user_count(), t.item_count()), (50, 80));
        assert!(t.len() <= 250 && t.len() >= 200);
    }
}
