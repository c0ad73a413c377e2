//! Robustness, sparsity and sensitivity harnesses. Every run goes through
//! [`fit`] and [`evaluate`], so all models share one training loop and one
//! evaluation path.

use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::chart::{line_chart, Series};
use super::{evaluate, evaluate_users, targets, EvalMode, DEFAULT_CUTOFFS};
use crate::baselines::{edge_drop_config, lightgcn_config};
use crate::data::{
    group_by_interactions, inject_noise_excluding, Axis, InteractionGraph, SplitSet,
};
use crate::encoder::Embeddings;
use crate::trainer::{fit, named_stream, Stream, TrainConfig, Variant};
use crate::{Error, Result};

pub const NOISE_RATIOS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];
pub const LAMBDA1_GRID: [f64; 5] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    AdaGcl,
    LightGcn,
    EdgeDrop,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::AdaGcl, ModelKind::LightGcn, ModelKind::EdgeDrop];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AdaGcl => "adagcl",
            ModelKind::LightGcn => "lightgcn",
            ModelKind::EdgeDrop => "edge_drop",
        }
    }

    /// `cfg` adjusted to train this model.
    pub fn config(self, cfg: &TrainConfig) -> TrainConfig {
        match self {
            ModelKind::AdaGcl => TrainConfig {
                variant: Variant::Full,
                ..cfg.clone()
            },
            ModelKind::LightGcn => lightgcn_config(cfg),
            ModelKind::EdgeDrop => edge_drop_config(cfg),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model {s:?}; expected adagcl, lightgcn or edge_drop"
                ))
            })
    }
}

/// Trains on `splits` and returns test Recall@20 and NDCG@20.
fn train_and_test(cfg: &TrainConfig, splits: &SplitSet) -> Result<(f64, f64, Embeddings)> {
    let (state, _) = fit(cfg, splits)?;
    let emb = state.main.embed(&InteractionGraph::build(&splits.train)?)?;
    let rep = evaluate(&emb, splits, EvalMode::Test, &DEFAULT_CUTOFFS)?;
    Ok((rep.recall[0], rep.ndcg[0], emb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub model: ModelKind,
    pub ratio: f64,
    pub recall20: f64,
    pub ndcg20: f64,
    /// `(clean − noisy) / clean` of Recall@20; 0 on the clean row.
    pub relative_drop: f64,
}

/// For each model, trains on the clean split and on copies whose training
/// table received `ratio · |train|` fake interactions. Fakes never coincide
/// with validation or test pairs. The seeded noise is identical across models.
pub fn noise_robustness(
    cfg: &TrainConfig,
    splits: &SplitSet,
    ratios: &[f64],
    models: &[ModelKind],
) -> Result<Vec<NoiseRow>> {
    let noise_seed = named_stream(cfg.seed, Stream::Noise).next_u64();
    let noisy: Vec<(f64, SplitSet)> = ratios
        .iter()
        .map(|&r| {
            let train = inject_noise_excluding(
                &splits.train,
                r,
                noise_seed,
                &[&splits.validation, &splits.test],
            )?;
            Ok((
                r,
                SplitSet {
                    train,
                    ..splits.clone()
                },
            ))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &model in models {
        let mc = model.config(cfg);
        let (clean, clean_ndcg, _) = train_and_test(&mc, splits)?;
        log::info!("{} clean: recall@20 {clean:.4}", model.name());
        rows.push(NoiseRow {
            model,
            ratio: 0.0,
            recall20: clean,
            ndcg20: clean_ndcg,
            relative_drop: 0.0,
        });
        for (ratio, s) in &noisy {
            let (r, n, _) = train_and_test(&mc, s)?;
            let drop = if clean > 0.0 {
                (clean - r) / clean
            } else {
                0.0
            };
            log::info!(
                "{} noise {ratio}: recall@20 {r:.4} (drop {drop:.4})",
                model.name()
            );
            rows.push(NoiseRow {
                model,
                ratio: *ratio,
                recall20: r,
                ndcg20: n,
                relative_drop: drop,
            });
        }
    }
    Ok(rows)
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("model,ratio,recall@20,ndcg@20,relative_drop\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.model.name(),
            r.ratio,
            r.recall20,
            r.ndcg20,
            r.relative_drop
        );
    }
    s
}

/// Recall@20 against noise ratio, one line per model.
pub fn noise_chart(rows: &[NoiseRow]) -> String {
    let series = ModelKind::ALL
        .iter()
        .filter_map(|m| {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.model == *m)
                .map(|r| (r.ratio, r.recall20))
                .collect();
            (!points.is_empty()).then(|| Series {
                name: m.name().to_string(),
                points,
            })
        })
        .collect::<Vec<_>>();
    line_chart(
        "Recall@20 under injected noise",
        "noise ratio",
        "Recall@20",
        &series,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub label: String,
    /// Users or items in the group.
    pub entities: usize,
    pub evaluated_users: usize,
    /// One entry per cutoff; `None` when no user could be evaluated.
    pub recall: Option<Vec<f64>>,
    pub ndcg: Option<Vec<f64>>,
}

/// Test metrics per training-degree group. On the user axis each group
/// evaluates its own users; on the item axis every user is scored against
/// only the relevant items of the group.
pub fn sparsity_report(
    emb: &Embeddings,
    splits: &SplitSet,
    boundaries: &[usize],
    axis: Axis,
    cutoffs: &[usize],
) -> Result<Vec<GroupMetrics>> {
    let groups = group_by_interactions(&splits.train, boundaries, axis)?;
    let (relevant, masked) = targets(splits, EvalMode::Test);
    let all_users: Vec<usize> = (0..splits.user_count()).collect();
    (0..groups.group_count())
        .map(|g| {
            let members = groups.members(g);
            let (rel, users) = match axis {
                Axis::User => (relevant.clone(), members.clone()),
                Axis::Item => {
                    let rel = relevant
                        .iter()
                        .map(|items| {
                            items
                                .iter()
                                .copied()
                                .filter(|i| groups.group_of[*i as usize] == g)
                                .collect()
                        })
                        .collect();
                    (rel, all_users.clone())
                }
            };
            let (recall, ndcg, evaluated) =
                match evaluate_users(emb, &rel, &masked, &users, cutoffs, EvalMode::Test) {
                    Ok(rep) => (Some(rep.recall), Some(rep.ndcg), rep.users.len()),
                    Err(Error::NoEvaluableUsers) => (None, None, 0),
                    Err(e) => return Err(e),
                };
            Ok(GroupMetrics {
                label: groups.label(g),
                entities: members.len(),
                evaluated_users: evaluated,
                recall,
                ndcg,
            })
        })
        .collect()
}

pub fn sparsity_csv(groups: &[GroupMetrics], cutoffs: &[usize]) -> String {
    let mut s = String::from("group,entities,evaluated_users");
    for c in cutoffs {
        let _ = write!(s, ",recall@{c},ndcg@{c}");
    }
    s.push('\n');
    for g in groups {
        let _ = write!(s, "{},{},{}", g.label, g.entities, g.evaluated_users);
        for k in 0..cutoffs.len() {
            let cell =
                |v: &Option<Vec<f64>>| v.as_ref().map(|x| x[k].to_string()).unwrap_or_default();
            let _ = write!(s, ",{},{}", cell(&g.recall), cell(&g.ndcg));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda1: f64,
    pub recall20: f64,
    pub ndcg20: f64,
}

/// Trains the full model once per λ₁ with the same seed; rows are ordered by
/// descending λ₁.
pub fn lambda1_sweep(cfg: &TrainConfig, splits: &SplitSet, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.iter()
        .map(|&lambda1| {
            let c = TrainConfig {
                lambda1,
                ..ModelKind::AdaGcl.config(cfg)
            };
            let (recall20, ndcg20, _) = train_and_test(&c, splits)?;
            log::info!("lambda1 {lambda1}: recall@20 {recall20:.4}");
            Ok(SweepRow {
                lambda1,
                recall20,
                ndcg20,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda1,recall@20,ndcg@20\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.lambda1, r.recall20, r.ndcg20);
    }
    s
}

/// Recall@20 and NDCG@20 against log10 λ₁.
pub fn sweep_chart(rows: &[SweepRow]) -> String {
    let pts = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.lambda1.log10(), f(r))).collect();
    let series = [
        Series {
            name: "Recall@20".into(),
            points: pts(|r| r.recall20),
        },
        Series {
            name: "NDCG@20".into(),
            points: pts(|r| r.ndcg20),
        },
    ];
    line_chart(
        "Sensitivity to the contrastive weight",
        "log10 lambda1",
        "metric",
        &series,
    )
}
