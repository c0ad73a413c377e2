use std::sync::Arc;

use super::{DataError, InteractionTable};
use crate::diffmath::SparseMatrix;

/// Bipartite user–item graph with raw and symmetrically normalised
/// adjacency, `Ā[i][j] = 1 / sqrt(deg(i) · deg(j))` on every stored edge.
///
/// Both matrices share the same row-compressed pattern; a column-compressed
/// index (`col_ptr`, `col_row`, `col_edge`) maps each item to its users and to
/// the storage position of the corresponding edge.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    adjacency: Arc<SparseMatrix>,
    normalized: Arc<SparseMatrix>,
    col_ptr: Vec<usize>,
    col_row: Vec<usize>,
    col_edge: Vec<usize>,
    user_degrees: Vec<usize>,
    item_degrees: Vec<usize>,
}

impl InteractionGraph {
    pub fn build(train: &InteractionTable) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self::from_edges(
            train.user_count(),
            train.item_count(),
            train.records(),
        ))
    }

    /// `edges` must be sorted by (user, item) and free of duplicates.
    pub(crate) fn from_edges(user_count: usize, item_count: usize, edges: &[(u32, u32)]) -> Self {
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        let mut user_degrees = vec![0usize; user_count];
        let mut item_degrees = vec![0usize; item_count];
        for &(u, i) in edges {
            user_degrees[u as usize] += 1;
            item_degrees[i as usize] += 1;
        }
        let mut row_ptr = vec![0usize; user_count + 1];
        for u in 0..user_count {
            row_ptr[u + 1] = row_ptr[u] + user_degrees[u];
        }
        let col_idx: Vec<usize> = edges.iter().map(|&(_, i)| i as usize).collect();
        let norm: Vec<f64> = edges
            .iter()
            .map(|&(u, i)| {
                1.0 / ((user_degrees[u as usize] * item_degrees[i as usize]) as f64).sqrt()
            })
            .collect();
        let ones = vec![1.0; edges.len()];
        let adjacency = SparseMatrix::from_csr(
            user_count,
            item_count,
            row_ptr.clone(),
            col_idx.clone(),
            ones,
        )
        .expect("sorted unique edges form a valid CSR");
        let normalized = adjacency.with_values(norm);

        let mut col_ptr = vec![0usize; item_count + 1];
        for i in 0..item_count {
            col_ptr[i + 1] = col_ptr[i] + item_degrees[i];
        }
        let mut fill = col_ptr.clone();
        let mut col_row = vec![0usize; edges.len()];
        let mut col_edge = vec![0usize; edges.len()];
        for (e, &(u, i)) in edges.iter().enumerate() {
            let slot = &mut fill[i as usize];
            col_row[*slot] = u as usize;
            col_edge[*slot] = e;
            *slot += 1;
        }
        InteractionGraph {
            adjacency: Arc::new(adjacency),
            normalized: Arc::new(normalized),
            col_ptr,
            col_row,
            col_edge,
            user_degrees,
            item_degrees,
        }
    }

    pub fn user_count(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn item_count(&self) -> usize {
        self.adjacency.cols()
    }

    pub fn node_count(&self) -> usize {
        self.user_count() + self.item_count()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn adjacency(&self) -> &Arc<SparseMatrix> {
        &self.adjacency
    }

    pub fn normalized(&self) -> &Arc<SparseMatrix> {
        &self.normalized
    }

    pub fn user_degrees(&self) -> &[usize] {
        &self.user_degrees
    }

    pub fn item_degrees(&self) -> &[usize] {
        &self.item_degrees
    }

    pub fn density(&self) -> f64 {
        self.edge_count() as f64 / (self.user_count() as f64 * self.item_count() as f64)
    }

    /// Edges in storage order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        self.adjacency
            .iter()
            .map(|(u, i, _)| (u as u32, i as u32))
            .collect()
    }

    /// Users of `item` with the storage position of each edge.
    pub fn item_neighbors(&self, item: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.col_ptr[item]..self.col_ptr[item + 1];
        range.map(move |k| (self.col_row[k], self.col_edge[k]))
    }

    pub fn has_edge(&self, user: usize, item: usize) -> bool {
        self.adjacency.position(user, item).is_some()
    }

    /// Subgraph keeping the edges whose storage position is flagged, with
    /// degrees and normalisation recomputed.
    pub fn subgraph(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.edge_count());
        let edges: Vec<(u32, u32)> = self
            .edges()
            .into_iter()
            .zip(keep)
            .filter_map(|(e, k)| k.then_some(e))
            .collect();
        Self::from_edges(self.user_count(), self.item_count(), &edges)
    }

    pub fn to_table(&self, like: &InteractionTable) -> InteractionTable {
        like.derive(self.edges())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_normalises_to_one() {
        let t = InteractionTable::new(1, 1, vec![(0, 0)]).unwrap();
        let g = InteractionGraph::build(&t).unwrap();
        assert_eq!(g.normalized().values(), &[1.0]);
    }

    #[test]
    fn star_user() {
        let t = InteractionTable::new(1, 4, (0..4).map(|i| (0, i)).collect()).unwrap();
        let g = InteractionGraph::build(&t).unwrap();
        assert!(g.normalized().values().iter().all(|v| *v == 0.5));
        assert_eq!(g.user_degrees(), &[4]);
    }

    #[test]
    fn column_index_matches_rows() {
        let t = InteractionTable::new(3, 3, vec![(0, 1), (1, 1), (2, 0), (2, 2), (0, 2)]).unwrap();
        let g = InteractionGraph::build(&t).unwrap();
        for item in 0..3 {
            for (u, e) in g.item_neighbors(item) {
                assert_eq!(g.adjacency().col_idx()[e], item);
                assert_eq!(g.adjacency().position(u, item), Some(e));
            }
        }
        let users_of_1: Vec<usize> = g.item_neighbors(1).map(|(u, _)| u).collect();
        assert_eq!(users_of_1, vec![0, 1]);
    }

    #[test]
    fn zero_degree_rows_are_empty() {
        let t = InteractionTable::new(3, 2, vec![(0, 0), (2, 1)]).unwrap();
        let g = InteractionGraph::build(&t).unwrap();
        assert_eq!(g.user_degrees(), &[1, 0, 1]);
        assert!(g.normalized().row_range(1).is_empty());
    }

    #[test]
    fn empty_table_errors() {
        let t = InteractionTable::new(2, 2, vec![]).unwrap();
        assert!(matches!(InteractionGraph::build(&t), Err(DataError::Empty)));
    }
}
