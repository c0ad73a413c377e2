//! All-rank top-N evaluation and the experiment harnesses built on it.

mod chart;
mod experiments;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionTable, SplitSet};
use crate::encoder::Embeddings;
use crate::{io_error, Error, Result};

pub use chart::{line_chart, Series};
pub use experiments::{
    lambda1_sweep, noise_chart, noise_csv, noise_robustness, sparsity_csv, sparsity_report,
    sweep_chart, sweep_csv, GroupMetrics, ModelKind, NoiseRow, SweepRow, LAMBDA1_GRID,
    NOISE_RATIOS,
};

pub const DEFAULT_CUTOFFS: [usize; 2] = [20, 40];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Relevant items from the validation split; training items masked.
    Validation,
    /// Relevant items from the test split; training and validation items masked.
    Test,
}

fn by_score_then_index(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    // `+ 0.0` maps -0.0 to +0.0 so signed zeros tie
    move |a, b| {
        (scores[*b] + 0.0)
            .total_cmp(&(scores[*a] + 0.0))
            .then(a.cmp(b))
    }
}

/// Items in descending score order, lower index first among ties. Items in
/// `masked` are left out.
pub fn rank_items(scores: &[f64], masked: &[u32]) -> Vec<usize> {
    let mut items: Vec<usize> = unmasked(scores.len(), masked);
    items.sort_unstable_by(by_score_then_index(scores));
    items
}

/// The first `n` entries of [`rank_items`] without sorting the rest.
pub fn top_n(scores: &[f64], masked: &[u32], n: usize) -> Vec<usize> {
    let mut items = unmasked(scores.len(), masked);
    let cmp = by_score_then_index(scores);
    if n < items.len() {
        items.select_nth_unstable_by(n, &cmp);
        items.truncate(n);
    }
    items.sort_unstable_by(cmp);
    items
}

fn unmasked(count: usize, masked: &[u32]) -> Vec<usize> {
    let mut flag = vec![false; count];
    for &m in masked {
        if let Some(f) = flag.get_mut(m as usize) {
            *f = true;
        }
    }
    (0..count).filter(|i| !flag[*i]).collect()
}

/// Full ranking for one user.
pub fn rank_for_user(emb: &Embeddings, user: usize, masked: &[u32]) -> Result<Vec<usize>> {
    Ok(rank_items(&emb.score_all_items(user)?, masked))
}

pub fn recall_at_n(ranked: &[usize], relevant: &[u32], n: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    Ok(hits(ranked, relevant, n).count() as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with `1/log2(p+1)` gains at 1-indexed positions.
pub fn ndcg_at_n(ranked: &[usize], relevant: &[u32], n: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let dcg: f64 = hits(ranked, relevant, n).map(|p| gain(p + 1)).sum();
    let idcg: f64 = (1..=n.min(relevant.len())).map(gain).sum();
    Ok(dcg / idcg)
}

fn gain(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

/// Zero-based positions within the top `n` holding a relevant item.
fn hits<'a>(
    ranked: &'a [usize],
    relevant: &'a [u32],
    n: usize,
) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, item)| relevant.binary_search(&(**item as u32)).is_ok())
        .map(|(p, _)| p)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub cutoffs: Vec<usize>,
    /// Macro averages, one per cutoff.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// Evaluated users, ascending.
    pub users: Vec<usize>,
    /// `per_user_recall[c][k]` is the recall of `users[k]` at `cutoffs[c]`.
    pub per_user_recall: Vec<Vec<f64>>,
    pub per_user_ndcg: Vec<Vec<f64>>,
    pub meta: ReportMeta,
}

impl EvalReport {
    fn index_of(&self, n: usize) -> Option<usize> {
        self.cutoffs.iter().position(|c| *c == n)
    }

    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.index_of(n).map(|k| self.recall[k])
    }

    pub fn ndcg_at(&self, n: usize) -> Option<f64> {
        self.index_of(n).map(|k| self.ndcg[k])
    }

    /// `cutoff,recall,ndcg` per cutoff.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cutoff,recall,ndcg\n");
        for (k, c) in self.cutoffs.iter().enumerate() {
            let _ = writeln!(s, "{c},{},{}", self.recall[k], self.ndcg[k]);
        }
        s
    }

    /// `user,recall@N…,ndcg@N…` per evaluated user.
    pub fn per_user_csv(&self) -> String {
        let mut s = String::from("user");
        for c in &self.cutoffs {
            let _ = write!(s, ",recall@{c}");
        }
        for c in &self.cutoffs {
            let _ = write!(s, ",ndcg@{c}");
        }
        s.push('\n');
        for (k, u) in self.users.iter().enumerate() {
            let _ = write!(s, "{u}");
            for v in self.per_user_recall.iter().chain(&self.per_user_ndcg) {
                let _ = write!(s, ",{}", v[k]);
            }
            s.push('\n');
        }
        s
    }

    /// Writes `{stem}.json`, `{stem}.csv` and `{stem}_users.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let files = [
            (format!("{stem}.json"), serde_json::to_string_pretty(self)?),
            (format!("{stem}.csv"), self.to_csv()),
            (format!("{stem}_users.csv"), self.per_user_csv()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| io_error(&p, e))?;
        }
        Ok(())
    }
}

/// Relevant and masked item lists per user for a split and mode.
pub(crate) fn targets(splits: &SplitSet, mode: EvalMode) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let (relevant, masks): (&InteractionTable, Vec<&InteractionTable>) = match mode {
        EvalMode::Validation => (&splits.validation, vec![&splits.train]),
        EvalMode::Test => (&splits.test, vec![&splits.train, &splits.validation]),
    };
    let rel = relevant.user_items();
    let mut masked = vec![Vec::new(); splits.user_count()];
    for t in masks {
        for (u, items) in t.user_items().into_iter().enumerate() {
            masked[u].extend(items);
        }
    }
    (rel, masked)
}

/// Per-user metrics for the given users; users with no relevant items are
/// skipped. Work fans out over the rayon pool; the result order is the input
/// order.
pub(crate) fn evaluate_users(
    emb: &Embeddings,
    relevant: &[Vec<u32>],
    masked: &[Vec<u32>],
    users: &[usize],
    cutoffs: &[usize],
    mode: EvalMode,
) -> Result<EvalReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config(format!(
            "cutoffs {cutoffs:?} must be non-empty and positive"
        )));
    }
    let users: Vec<usize> = users
        .iter()
        .copied()
        .filter(|u| !relevant[*u].is_empty())
        .collect();
    if users.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let max_n = *cutoffs.iter().max().unwrap();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = users
        .par_iter()
        .map(|&u| -> Result<(Vec<f64>, Vec<f64>)> {
            let scores = emb.score_all_items(u)?;
            let ranked = top_n(&scores, &masked[u], max_n);
            let rel = &relevant[u];
            let r = cutoffs
                .iter()
                .map(|&n| recall_at_n(&ranked, rel, n))
                .collect::<Result<_>>()?;
            let g = cutoffs
                .iter()
                .map(|&n| ndcg_at_n(&ranked, rel, n))
                .collect::<Result<_>>()?;
            Ok((r, g))
        })
        .collect::<Result<_>>()?;
    let per = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<Vec<f64>> {
        (0..cutoffs.len())
            .map(|c| rows.iter().map(|r| pick(r)[c]).collect())
            .collect()
    };
    let per_user_recall = per(|r| &r.0);
    let per_user_ndcg = per(|r| &r.1);
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalReport {
        mode,
        cutoffs: cutoffs.to_vec(),
        recall: per_user_recall.iter().map(mean).collect(),
        ndcg: per_user_ndcg.iter().map(mean).collect(),
        users,
        per_user_recall,
        per_user_ndcg,
        meta: ReportMeta::default(),
    })
}

/// Macro-averaged Recall@N and NDCG@N over every user with at least one
/// relevant item in the target split.
pub fn evaluate(
    emb: &Embeddings,
    splits: &SplitSet,
    mode: EvalMode,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    if emb.users.rows != splits.user_count() || emb.items.rows != splits.item_count() {
        return Err(Error::Config(format!(
            "embeddings cover {}x{} but the split has {}x{}",
            emb.users.rows,
            emb.items.rows,
            splits.user_count(),
            splits.item_count()
        )));
    }
    let (relevant, masked) = targets(splits, mode);
    let users: Vec<usize> = (0..splits.user_count()).collect();
    evaluate_users(emb, &relevant, &masked, &users, cutoffs, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitMode};
    use crate::diffmath::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_items(&[2.0, 6.0, -2.0], &[]), vec![1, 0, 2]);
        assert_eq!(rank_items(&[2.0, 6.0, -2.0], &[1]), vec![0, 2]);
        assert_eq!(rank_items(&[1.0, 1.0, 3.0, 1.0], &[]), vec![2, 0, 1, 3]);
        assert_eq!(top_n(&[1.0, 1.0, 3.0, 1.0], &[], 2), vec![2, 0]);
        assert_eq!(rank_items(&[0.0, -0.0, 0.0], &[]), vec![0, 1, 2]);
    }

    #[test]
    fn top_n_agrees_with_full_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let m = rng.random_range(1..40);
            let scores: Vec<f64> = (0..m)
                .map(|_| (rng.random_range(0..6) as f64) * 0.5)
                .collect();
            let masked: Vec<u32> = (0..m as u32).filter(|_| rng.random_bool(0.2)).collect();
            let n = rng.random_range(1..45);
            let full = rank_items(&scores, &masked);
            assert_eq!(
                top_n(&scores, &masked, n),
                full[..n.min(full.len())].to_vec()
            );
        }
    }

    #[test]
    fn recall_examples() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(recall_at_n(&ranked, &[3, 7], 20).unwrap(), 1.0);
        assert_eq!(recall_at_n(&ranked, &[25, 29], 20).unwrap(), 0.0);
        assert_eq!(recall_at_n(&ranked, &[3, 27], 20).unwrap(), 0.5);
        assert!(matches!(
            recall_at_n(&ranked, &[], 20),
            Err(Error::EmptyRelevant)
        ));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_n(&[4, 1, 2], &[4], 20).unwrap(), 1.0);
        assert!((ndcg_at_n(&[1, 4, 2], &[4], 20).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((ndcg_at_n(&[1, 4, 2], &[4], 20).unwrap() - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_n(&[2, 0, 5, 1], &[0, 2, 5], 20).unwrap(), 1.0);
        assert!(ndcg_at_n(&[1], &[], 5).is_err());
    }

    fn toy_split(seed: u64) -> SplitSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for u in 0..25u32 {
            for i in 0..40u32 {
                if rng.random_bool(0.3) {
                    recs.push((u, i));
                }
            }
        }
        split(
            &InteractionTable::new(25, 40, recs).unwrap(),
            [0.7, 0.2, 0.1],
            seed,
            SplitMode::PerUser,
        )
        .unwrap()
    }

    #[test]
    fn oracle_embeddings_score_one() {
        let s = toy_split(2);
        // one dimension per item; a user vector is the indicator of its test items
        let (users, items) = (s.user_count(), s.item_count());
        let mut uv = Tensor::zeros(users, items);
        for &(u, i) in s.test.records() {
            uv.row_mut(u as usize)[i as usize] = 1.0;
        }
        let emb = Embeddings {
            users: uv,
            items: Tensor::identity(items),
        };
        let r = evaluate(&emb, &s, EvalMode::Test, &DEFAULT_CUTOFFS).unwrap();
        assert_eq!(r.recall, vec![1.0, 1.0]);
        assert_eq!(r.ndcg, vec![1.0, 1.0]);
        assert_eq!(r.users.len(), r.per_user_recall[0].len());
    }

    #[test]
    fn masked_items_never_ranked() {
        let s = toy_split(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = Embeddings {
            users: Tensor::xavier_uniform(25, 4, &mut rng),
            items: Tensor::xavier_uniform(40, 4, &mut rng),
        };
        let (_, masked) = targets(&s, EvalMode::Test);
        for u in 0..25 {
            let ranked = rank_for_user(&emb, u, &masked[u]).unwrap();
            assert!(ranked
                .iter()
                .all(|i| !s.train.contains(u as u32, *i as u32)));
            assert!(ranked
                .iter()
                .all(|i| !s.validation.contains(u as u32, *i as u32)));
        }
    }

    #[test]
    fn no_evaluable_users() {
        let t = InteractionTable::new(2, 3, vec![(0, 0), (1, 1)]).unwrap();
        let s = split(&t, [0.7, 0.2, 0.1], 0, SplitMode::PerUser).unwrap();
        let emb = Embeddings {
            users: Tensor::zeros(2, 1),
            items: Tensor::zeros(3, 1),
        };
        assert!(matches!(
            evaluate(&emb, &s, EvalMode::Test, &[20]),
            Err(Error::NoEvaluableUsers)
        ));
    }

    #[test]
    fn random_embeddings_recall_near_chance() {
        // one relevant item per user among J unmasked items: E[recall@N] = N/J
        let (users, items) = (400usize, 100usize);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let relevant: Vec<Vec<u32>> = (0..users)
            .map(|_| vec![rng.random_range(0..items as u32)])
            .collect();
        let masked = vec![Vec::new(); users];
        let emb = Embeddings {
            users: Tensor::xavier_uniform(users, 8, &mut rng),
            items: Tensor::xavier_uniform(items, 8, &mut rng),
        };
        let all: Vec<usize> = (0..users).collect();
        let r = evaluate_users(&emb, &relevant, &masked, &all, &[20], EvalMode::Test).unwrap();
        let sd = (0.2f64 * 0.8 / users as f64).sqrt();
        assert!((r.recall[0] - 0.2).abs() < 4.0 * sd, "{}", r.recall[0]);
    }

    #[test]
    fn report_files() {
        let s = toy_split(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let emb = Embeddings {
            users: Tensor::xavier_uniform(25, 3, &mut rng),
            items: Tensor::xavier_uniform(40, 3, &mut rng),
        };
        let r = evaluate(&emb, &s, EvalMode::Validation, &DEFAULT_CUTOFFS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), "validation").unwrap();
        let back: EvalReport = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("validation.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(back, r);
        let csv = std::fs::read_to_string(dir.path().join("validation.csv")).unwrap();
        assert!(csv.starts_with("cutoff,recall,ndcg\n20,"));
    }
}
