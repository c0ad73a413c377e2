use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::sampling::epoch_batches;
use super::step::{train_step, StepMetrics};
use super::{TrainConfig, TrainState};
use crate::data::{InteractionGraph, SplitSet};
use crate::eval::{evaluate, EvalMode, DEFAULT_CUTOFFS};
use crate::{io_error, Result};

/// Epoch means of the step metrics plus validation metrics when evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: StepMetrics,
    pub val_recall20: Option<f64>,
    pub val_recall40: Option<f64>,
    pub val_ndcg20: Option<f64>,
    pub val_ndcg40: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Best validation Recall@20; `-inf` before any evaluation.
    pub best_metric: f64,
    pub stopped_early: bool,
    pub config_hash: String,
    /// Wall-clock seconds per epoch. Not part of the CSV.
    pub epoch_seconds: Vec<f64>,
}

impl History {
    fn new(cfg: &TrainConfig) -> Self {
        History {
            records: Vec::new(),
            best_epoch: None,
            best_metric: f64::NEG_INFINITY,
            stopped_early: false,
            config_hash: cfg.hash(),
            epoch_seconds: Vec::new(),
        }
    }

    pub fn validation_recalls(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.val_recall20).collect()
    }

    pub fn to_csv(&self) -> String {
        let layers = self
            .records
            .iter()
            .map(|r| r.losses.gate_kept.len())
            .max()
            .unwrap_or(0);
        let mut s = String::from(
            "epoch,upper,bpr,ssl,reg,lower,gen_kl,gen_dis,gen_bpr,den_lc,den_bpr,view1_kept,view2_kept",
        );
        for l in 0..layers {
            let _ = write!(s, ",gate_kept_l{l}");
        }
        s.push_str(",val_recall@20,val_recall@40,val_ndcg@20,val_ndcg@40\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let m = &r.losses;
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                m.upper,
                m.bpr,
                m.ssl,
                m.reg,
                m.lower,
                m.gen_kl,
                m.gen_dis,
                m.gen_bpr,
                m.den_lc,
                m.den_bpr,
                m.view1_kept,
                m.view2_kept
            );
            for l in 0..layers {
                let _ = write!(
                    s,
                    ",{}",
                    m.gate_kept
                        .get(l)
                        .map(|v| v.to_string())
                        .unwrap_or_default()
                );
            }
            let _ = writeln!(
                s,
                ",{},{},{},{}",
                opt(r.val_recall20),
                opt(r.val_recall40),
                opt(r.val_ndcg20),
                opt(r.val_ndcg40)
            );
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "epochs": self.records.len(),
            "best_epoch": self.best_epoch,
            "best_val_recall@20": if self.best_metric.is_finite() { Some(self.best_metric) } else { None },
            "stopped_early": self.stopped_early,
            "config_hash": self.config_hash,
            "epoch_seconds": self.epoch_seconds,
            "final": self.records.last(),
        })
    }

    /// Writes `history.csv` and `history.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let csv = dir.join("history.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| io_error(&csv, e))?;
        let json = dir.join("history.json");
        std::fs::write(&json, serde_json::to_string_pretty(&self.summary_json())?)
            .map_err(|e| io_error(&json, e))?;
        Ok(())
    }
}

fn mean_metrics(steps: &[StepMetrics]) -> StepMetrics {
    let n = steps.len().max(1) as f64;
    let layers = steps.iter().map(|s| s.gate_kept.len()).max().unwrap_or(0);
    let avg = |f: fn(&StepMetrics) -> f64| steps.iter().map(f).sum::<f64>() / n;
    StepMetrics {
        upper: avg(|s| s.upper),
        bpr: avg(|s| s.bpr),
        ssl: avg(|s| s.ssl),
        reg: avg(|s| s.reg),
        lower: avg(|s| s.lower),
        gen_kl: avg(|s| s.gen_kl),
        gen_dis: avg(|s| s.gen_dis),
        gen_bpr: avg(|s| s.gen_bpr),
        den_lc: avg(|s| s.den_lc),
        den_bpr: avg(|s| s.den_bpr),
        view1_kept: avg(|s| s.view1_kept),
        view2_kept: avg(|s| s.view2_kept),
        gate_kept: (0..layers)
            .map(|l| {
                steps
                    .iter()
                    .map(|s| s.gate_kept.get(l).copied().unwrap_or(0.0))
                    .sum::<f64>()
                    / n
            })
            .collect(),
    }
}

/// [`fit_with`] without a per-epoch hook.
pub fn fit(cfg: &TrainConfig, splits: &SplitSet) -> Result<(TrainState, History)> {
    fit_with(cfg, splits, |_, _| ControlFlow::Continue(()))
}

/// Trains on `splits.train`, evaluating validation Recall@20 every
/// `eval_every` epochs. Stops after `patience` consecutive evaluations without
/// improvement (`patience = 0` never stops early) and restores the best
/// evaluated parameters. `hook` runs after every epoch and may stop training.
pub fn fit_with<F>(
    cfg: &TrainConfig,
    splits: &SplitSet,
    mut hook: F,
) -> Result<(TrainState, History)>
where
    F: FnMut(&TrainState, &EpochRecord) -> ControlFlow<()>,
{
    let mut state = TrainState::new(cfg, splits.user_count(), splits.item_count())?;
    let mut history = History::new(cfg);
    if cfg.max_epochs == 0 {
        return Ok((state, history));
    }
    let graph = InteractionGraph::build(&splits.train)?;
    let mut best: Option<TrainState> = None;
    let mut bad = 0usize;
    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let started = Instant::now();
        let batches = epoch_batches(&splits.train, cfg.batch_size, &mut state.streams.batch);
        let mut steps = Vec::with_capacity(batches.len());
        for b in &batches {
            steps.push(train_step(&mut state, &splits.train, &graph, b)?);
        }
        let mut record = EpochRecord {
            epoch,
            losses: mean_metrics(&steps),
            val_recall20: None,
            val_recall40: None,
            val_ndcg20: None,
            val_ndcg40: None,
        };
        let mut stop = false;
        if epoch % cfg.eval_every == 0 && !splits.validation.is_empty() {
            let report = evaluate(
                &state.main.embed(&graph)?,
                splits,
                EvalMode::Validation,
                &DEFAULT_CUTOFFS,
            )?;
            let r20 = report.recall[0];
            record.val_recall20 = Some(r20);
            record.val_recall40 = Some(report.recall[1]);
            record.val_ndcg20 = Some(report.ndcg[0]);
            record.val_ndcg40 = Some(report.ndcg[1]);
            if r20 > state.best_metric {
                state.best_metric = r20;
                state.best_epoch = Some(epoch);
                best = Some(state.clone());
                bad = 0;
            } else {
                bad += 1;
                stop = cfg.patience > 0 && bad >= cfg.patience;
            }
        }
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: upper {:.5} lower {:.5} val recall@20 {}",
            record.losses.upper,
            record.losses.lower,
            record
                .val_recall20
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into())
        );
        let flow = hook(&state, &record);
        history.records.push(record);
        if stop {
            history.stopped_early = true;
            break;
        }
        if flow.is_break() {
            break;
        }
    }
    history.best_epoch = state.best_epoch;
    history.best_metric = state.best_metric;
    if let Some(mut b) = best {
        b.epoch = state.epoch;
        b.step = state.step;
        state = b;
    }
    Ok((state, history))
}
