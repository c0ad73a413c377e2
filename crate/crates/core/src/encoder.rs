//! Linear graph propagation over the normalised bipartite adjacency and
//! inner-product scoring.
//!
//! Each layer aggregates neighbours, `z_u = Ā · E_item`, `z_v = Āᵀ · E_user`.
//! In [`Propagation::Residual`] mode (the default) the layer output is
//! `z + previous`; [`Propagation::Standard`] uses `z` alone as in vanilla
//! LightGCN. The final representation is the sum over layers `0..=L`.
//! Note that the residual form counts lower layers more than once in that sum.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::InteractionGraph;
use crate::diffmath::{
    bind, dot, Bound, DiffError, ParamId, Params, SparseMatrix, Tape, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    #[default]
    Residual,
    Standard,
}

/// Per-layer and final user/item embeddings recorded on a tape.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub layer_user: Vec<Var>,
    pub layer_item: Vec<Var>,
    pub final_user: Var,
    pub final_item: Var,
}

impl EmbeddingState {
    pub fn layers(&self) -> usize {
        self.layer_user.len() - 1
    }

    pub fn snapshot(&self, tape: &Tape) -> Embeddings {
        Embeddings {
            users: tape.value(self.final_user).clone(),
            items: tape.value(self.final_item).clone(),
        }
    }
}

/// Frozen final embeddings, safe to share across evaluation workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub users: Tensor,
    pub items: Tensor,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.users.cols
    }

    /// Scores of `user` against every item.
    pub fn score_all_items(&self, user: usize) -> Result<Vec<f64>, DiffError> {
        if user >= self.users.rows {
            return Err(DiffError::Shape(format!(
                "user {user} out of {} users",
                self.users.rows
            )));
        }
        let u = self.users.row(user);
        Ok((0..self.items.rows)
            .map(|j| dot(u, self.items.row(j)))
            .collect())
    }

    /// `entity_type,index,v0,…,v{d-1}`; users first, then items.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d).map(|k| format!("v{k}")).collect();
        writeln!(w, "entity_type,index,{}", header.join(","))?;
        for (kind, t) in [("user", &self.users), ("item", &self.items)] {
            for r in 0..t.rows {
                let vals: Vec<String> = t.row(r).iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{kind},{r},{}", vals.join(","))?;
            }
        }
        Ok(())
    }
}

/// Inner-product preference score.
pub fn predict(user_row: &[f64], item_row: &[f64]) -> f64 {
    assert_eq!(
        user_row.len(),
        item_row.len(),
        "embedding dimension mismatch"
    );
    dot(user_row, item_row)
}

/// One propagation step. With `weights`, the matrix values are replaced by
/// the given per-edge weights (storage order).
pub(crate) fn propagate_layer(
    tape: &mut Tape,
    matrix: &Arc<SparseMatrix>,
    weights: Option<Var>,
    prev_user: Var,
    prev_item: Var,
    mode: Propagation,
) -> Result<(Var, Var), DiffError> {
    let (zu, zv) = match weights {
        None => (
            tape.spmm(matrix, prev_item)?,
            tape.spmm_t(matrix, prev_user)?,
        ),
        Some(w) => (
            tape.spmm_weighted(matrix, w, prev_item, false)?,
            tape.spmm_weighted(matrix, w, prev_user, true)?,
        ),
    };
    Ok(match mode {
        Propagation::Residual => (tape.add(zu, prev_user)?, tape.add(zv, prev_item)?),
        Propagation::Standard => (zu, zv),
    })
}

pub(crate) fn check_tables(
    tape: &Tape,
    graph: &InteractionGraph,
    user: Var,
    item: Var,
) -> Result<(), DiffError> {
    let (su, sv) = (tape.shape(user), tape.shape(item));
    if su.0 != graph.user_count() || sv.0 != graph.item_count() || su.1 != sv.1 {
        return Err(DiffError::Shape(format!(
            "tables {}x{} / {}x{} for a {}x{} graph",
            su.0,
            su.1,
            sv.0,
            sv.1,
            graph.user_count(),
            graph.item_count()
        )));
    }
    Ok(())
}

/// Fully differentiable multi-layer propagation from the given tables.
pub fn propagate(
    tape: &mut Tape,
    graph: &InteractionGraph,
    user_table: Var,
    item_table: Var,
    layers: usize,
    mode: Propagation,
) -> Result<EmbeddingState, DiffError> {
    check_tables(tape, graph, user_table, item_table)?;
    let mut layer_user = vec![user_table];
    let mut layer_item = vec![item_table];
    for _ in 0..layers {
        let (u, v) = propagate_layer(
            tape,
            graph.normalized(),
            None,
            *layer_user.last().unwrap(),
            *layer_item.last().unwrap(),
            mode,
        )?;
        layer_user.push(u);
        layer_item.push(v);
    }
    let final_user = tape.add_all(&layer_user)?;
    let final_item = tape.add_all(&layer_item)?;
    Ok(EmbeddingState {
        layer_user,
        layer_item,
        final_user,
        final_item,
    })
}

/// The main recommendation encoder: one user table and one item table.
#[derive(Debug, Clone, PartialEq)]
pub struct LightGcn {
    pub params: Params,
    pub layers: usize,
    pub mode: Propagation,
    user: ParamId,
    item: ParamId,
}

impl LightGcn {
    pub fn new<R: Rng + ?Sized>(
        users: usize,
        items: usize,
        dim: usize,
        layers: usize,
        mode: Propagation,
        rng: &mut R,
    ) -> Self {
        let mut params = Params::new();
        let user = params.add("user_table", Tensor::xavier_uniform(users, dim, rng));
        let item = params.add("item_table", Tensor::xavier_uniform(items, dim, rng));
        LightGcn {
            params,
            layers,
            mode,
            user,
            item,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.get(self.user).cols
    }

    pub fn user_table(&self) -> ParamId {
        self.user
    }

    pub fn item_table(&self) -> ParamId {
        self.item
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        bind(tape, &self.params, trainable)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graph: &InteractionGraph,
    ) -> Result<EmbeddingState, DiffError> {
        propagate(
            tape,
            graph,
            bound.get(self.user),
            bound.get(self.item),
            self.layers,
            self.mode,
        )
    }

    /// Final embeddings over `graph` without recording gradients.
    pub fn embed(&self, graph: &InteractionGraph) -> Result<Embeddings, DiffError> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let s = self.forward(&mut tape, &b, graph)?;
        Ok(s.snapshot(&tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionTable;
    use crate::diffmath::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(users: usize, items: usize, edges: Vec<(u32, u32)>) -> InteractionGraph {
        InteractionGraph::build(&InteractionTable::new(users, items, edges).unwrap()).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, users: usize, items: usize) -> InteractionGraph {
        let mut edges = Vec::new();
        for u in 0..users as u32 {
            for i in 0..items as u32 {
                if rng.random_bool(0.35) {
                    edges.push((u, i));
                }
            }
        }
        edges.push((0, 0));
        graph(users, items, edges)
    }

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn zero_layers_is_identity() {
        let g = graph(2, 2, vec![(0, 0), (1, 1)]);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]));
        let v = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
        let s = propagate(&mut tape, &g, u, v, 0, Propagation::Residual).unwrap();
        assert_eq!(tape.value(s.final_user), tape.value(u));
        assert_eq!(tape.value(s.final_item), tape.value(v));
    }

    #[test]
    fn two_node_hand_evaluation() {
        // Ā = [1]; z_u = 2, e_u1 = 3, final_u = 1 + 3; z_v = 1, e_v1 = 3, final_v = 2 + 3.
        let g = graph(1, 1, vec![(0, 0)]);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::scalar(1.0));
        let v = tape.constant(Tensor::scalar(2.0));
        let s = propagate(&mut tape, &g, u, v, 1, Propagation::Residual).unwrap();
        assert_eq!(tape.scalar(s.final_user), 4.0);
        assert_eq!(tape.scalar(s.final_item), 5.0);
        assert_eq!(tape.scalar(s.layer_user[1]), 3.0);
        // standard variant: layer = z only → final_u = 1 + 2, final_v = 2 + 1
        let s = propagate(&mut tape, &g, u, v, 1, Propagation::Standard).unwrap();
        assert_eq!(tape.scalar(s.final_user), 3.0);
        assert_eq!(tape.scalar(s.final_item), 3.0);
    }

    #[test]
    fn isolated_user_accumulates_its_own_row() {
        let g = graph(2, 1, vec![(0, 0)]);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::from_rows(&[vec![0.5, 1.0], vec![2.0, -3.0]]));
        let v = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0]]));
        let layers = 3;
        let s = propagate(&mut tape, &g, u, v, layers, Propagation::Residual).unwrap();
        let row = tape.value(s.final_user).row(1).to_vec();
        assert_eq!(
            row,
            vec![2.0 * (layers as f64 + 1.0), -3.0 * (layers as f64 + 1.0)]
        );
    }

    #[test]
    fn dimension_mismatch() {
        let g = graph(2, 2, vec![(0, 0)]);
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::zeros(3, 2));
        let v = tape.constant(Tensor::zeros(2, 2));
        assert!(propagate(&mut tape, &g, u, v, 1, Propagation::Residual).is_err());
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(predict(&[0.6, 0.8], &[0.6, 0.8]), 1.0);
        assert_eq!(predict(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
    }

    #[test]
    fn score_all_items_examples() {
        let e = Embeddings {
            users: Tensor::from_rows(&[vec![2.0], vec![0.0]]),
            items: Tensor::from_rows(&[vec![1.0], vec![3.0], vec![-1.0]]),
        };
        assert_eq!(e.score_all_items(0).unwrap(), vec![2.0, 6.0, -2.0]);
        assert_eq!(e.score_all_items(1).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(e.score_all_items(2).is_err());
    }

    #[test]
    fn score_all_matches_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = Embeddings {
            users: random_tensor(&mut rng, 4, 3),
            items: random_tensor(&mut rng, 6, 3),
        };
        for u in 0..4 {
            let s = e.score_all_items(u).unwrap();
            for j in 0..6 {
                assert_eq!(s[j], predict(e.users.row(u), e.items.row(j)));
            }
        }
    }

    #[test]
    fn linear_in_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let g = random_graph(&mut rng, 5, 7);
            let (u0, v0) = (random_tensor(&mut rng, 5, 3), random_tensor(&mut rng, 7, 3));
            let alpha = rng.random_range(-3.0..3.0);
            let mut tape = Tape::new();
            let (u, v) = (tape.constant(u0.clone()), tape.constant(v0.clone()));
            let (ua, va) = (
                tape.constant(u0.scaled(alpha)),
                tape.constant(v0.scaled(alpha)),
            );
            let s = propagate(&mut tape, &g, u, v, 3, Propagation::Residual).unwrap();
            let sa = propagate(&mut tape, &g, ua, va, 3, Propagation::Residual).unwrap();
            assert!(
                tape.value(s.final_user)
                    .scaled(alpha)
                    .max_abs_diff(tape.value(sa.final_user))
                    < 1e-6
            );
            assert!(
                tape.value(s.final_item)
                    .scaled(alpha)
                    .max_abs_diff(tape.value(sa.final_item))
                    < 1e-6
            );
        }
    }

    #[test]
    fn item_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (users, items) = (4, 6);
        let g = random_graph(&mut rng, users, items);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let pedges: Vec<(u32, u32)> = g
            .edges()
            .iter()
            .map(|&(u, i)| (u, perm[i as usize] as u32))
            .collect();
        let pg = graph(users, items, pedges);
        let (u0, v0) = (
            random_tensor(&mut rng, users, 2),
            random_tensor(&mut rng, items, 2),
        );
        let mut pv = Tensor::zeros(items, 2);
        for i in 0..items {
            pv.row_mut(perm[i]).copy_from_slice(v0.row(i));
        }
        let mut tape = Tape::new();
        let (u, v, pvv) = (tape.constant(u0), tape.constant(v0), tape.constant(pv));
        let s = propagate(&mut tape, &g, u, v, 2, Propagation::Residual).unwrap();
        let ps = propagate(&mut tape, &pg, u, pvv, 2, Propagation::Residual).unwrap();
        assert!(
            tape.value(s.final_user)
                .max_abs_diff(tape.value(ps.final_user))
                < 1e-12
        );
        for i in 0..items {
            let a = tape.value(s.final_item).row(i);
            let b = tape.value(ps.final_item).row(perm[i]);
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn gradient_wrt_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(&mut rng, 4, 5);
        let target = random_tensor(&mut rng, 4, 5);
        let params = [random_tensor(&mut rng, 4, 3), random_tensor(&mut rng, 5, 3)];
        let report = grad_check(
            |t, v| {
                let s = propagate(t, &g, v[0], v[1], 2, Propagation::Residual)?;
                let scores = t.matmul_bt(s.final_user, s.final_item)?;
                let tgt = t.constant(target.clone());
                let diff = t.sub(scores, tgt)?;
                let sq = t.sq_frobenius(diff);
                Ok(t.scale(sq, 0.1))
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn csv_export_layout() {
        let e = Embeddings {
            users: Tensor::from_rows(&[vec![1.0, 2.0]]),
            items: Tensor::from_rows(&[vec![0.5, -1.0], vec![0.0, 0.0]]),
        };
        let mut out = Vec::new();
        e.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "entity_type,index,v0,v1");
        assert_eq!(lines[1], "user,0,1,2");
        assert_eq!(lines.len(), 4);
    }
}
