//! Training objectives: BPR ranking loss, cosine InfoNCE and the composite
//! upper/lower losses.

use serde::{Deserialize, Serialize};

use crate::diffmath::{DiffError, Tape, Var};
use crate::encoder::EmbeddingState;

/// `(user, positive item, negative item)` triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub users: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl TripletBatch {
    pub fn new(triples: &[(usize, usize, usize)]) -> Self {
        let mut b = TripletBatch::default();
        for &(u, i, j) in triples {
            b.push(u, i, j);
        }
        b
    }

    pub fn push(&mut self, user: usize, pos: usize, neg: usize) {
        self.users.push(user);
        self.positives.push(pos);
        self.negatives.push(neg);
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).map(|k| (self.users[k], self.positives[k], self.negatives[k]))
    }

    /// Distinct users, ascending.
    pub fn unique_users(&self) -> Vec<usize> {
        dedup_sorted(self.users.clone())
    }

    /// Distinct positive and negative items, ascending.
    pub fn unique_items(&self) -> Vec<usize> {
        dedup_sorted(
            self.positives
                .iter()
                .chain(&self.negatives)
                .copied()
                .collect(),
        )
    }
}

fn dedup_sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Which nodes enter the contrastive softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SslScope {
    /// Users and items appearing in the BPR batch.
    #[default]
    Batch,
    /// Every user and every item.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub scope: SslScope,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.2,
            lambda1: 0.1,
            lambda2: 1e-5,
            scope: SslScope::Batch,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), DiffError> {
        if !(self.tau > 0.0) {
            return Err(DiffError::Domain(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(DiffError::Domain(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Mean of `−log σ(ŷ_ui − ŷ_uj)` over the batch; 0 for an empty batch.
pub fn bpr_loss(
    tape: &mut Tape,
    user_emb: Var,
    item_emb: Var,
    batch: &TripletBatch,
) -> Result<Var, DiffError> {
    if batch.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let u = tape.gather_rows(user_emb, &batch.users)?;
    let p = tape.gather_rows(item_emb, &batch.positives)?;
    let n = tape.gather_rows(item_emb, &batch.negatives)?;
    let sp = tape.row_dot(u, p)?;
    let sn = tape.row_dot(u, n)?;
    let margin = tape.sub(sn, sp)?;
    let l = tape.softplus(margin);
    Ok(tape.mean(l))
}

/// [`bpr_loss`] on the final embeddings of a propagation.
pub fn bpr_on_state(
    tape: &mut Tape,
    state: &EmbeddingState,
    batch: &TripletBatch,
) -> Result<Var, DiffError> {
    bpr_loss(tape, state.final_user, state.final_item, batch)
}

/// Cosine InfoNCE with row `i` of each view as the positive pair and all
/// rows of `view2` (the positive included) in the denominator; averaged over
/// anchors.
pub fn infonce(tape: &mut Tape, view1: Var, view2: Var, tau: f64) -> Result<Var, DiffError> {
    if !(tau > 0.0) {
        return Err(DiffError::Domain(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let (s1, s2) = (tape.shape(view1), tape.shape(view2));
    if s1 != s2 {
        return Err(DiffError::Shape(format!("views {s1:?} and {s2:?} differ")));
    }
    if s1.0 == 0 {
        return Ok(tape.scalar_const(0.0));
    }
    let a = tape.normalize_rows(view1)?;
    let b = tape.normalize_rows(view2)?;
    let sim = tape.matmul_bt(a, b)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let lse = tape.logsumexp_rows(logits);
    let pos = tape.row_dot(a, b)?;
    let pos = tape.scale(pos, 1.0 / tau);
    let per = tape.sub(lse, pos)?;
    Ok(tape.mean(per))
}

/// User InfoNCE plus item InfoNCE between two views over the node set chosen
/// by `scope`.
pub fn ssl_loss(
    tape: &mut Tape,
    view1: (Var, Var),
    view2: (Var, Var),
    batch: &TripletBatch,
    cfg: &ContrastiveConfig,
) -> Result<Var, DiffError> {
    let pick = |tape: &mut Tape, v: Var, idx: &Option<Vec<usize>>| match idx {
        Some(i) => tape.gather_rows(v, i),
        None => Ok(v),
    };
    let (users, items) = match cfg.scope {
        SslScope::Batch => (Some(batch.unique_users()), Some(batch.unique_items())),
        SslScope::Full => (None, None),
    };
    let u1 = pick(tape, view1.0, &users)?;
    let u2 = pick(tape, view2.0, &users)?;
    let i1 = pick(tape, view1.1, &items)?;
    let i2 = pick(tape, view2.1, &items)?;
    let lu = infonce(tape, u1, u2, cfg.tau)?;
    let li = infonce(tape, i1, i2, cfg.tau)?;
    tape.add(lu, li)
}

/// Sum of squared Frobenius norms.
pub fn l2_penalty(tape: &mut Tape, vars: &[Var]) -> Result<Var, DiffError> {
    let terms: Vec<Var> = vars.iter().map(|v| tape.sq_frobenius(*v)).collect();
    if terms.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    tape.add_all(&terms)
}

/// `bpr + λ₁·ssl + λ₂·reg`, where `reg` is the squared norm of the main
/// parameters.
pub fn upper_loss(
    tape: &mut Tape,
    bpr: Var,
    ssl: Var,
    reg: Var,
    cfg: &ContrastiveConfig,
) -> Result<Var, DiffError> {
    let s = tape.scale(ssl, cfg.lambda1);
    let r = tape.scale(reg, cfg.lambda2);
    tape.add_all(&[bpr, s, r])
}

pub fn lower_loss(tape: &mut Tape, gen: Var, den: Var) -> Result<Var, DiffError> {
    tape.add(gen, den)
}
