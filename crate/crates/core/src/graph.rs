//! Symmetric CSR graph with self-loops and GCN normalization coefficients.

use crate::error::{input_err, Result};

/// Immutable undirected graph in compressed sparse row form.
///
/// Every node carries exactly one self-loop entry. Both orientations of an
/// undirected edge share one edge id; undirected edges are numbered
/// `0..num_undirected_edges` in `(min, max)` lexicographic order and the
/// self-loop of node `u` has id `num_undirected_edges + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_ids: Vec<usize>,
    degrees: Vec<usize>,
    norm_coeffs: Vec<f64>,
}

/// One CSR entry of a node's row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: usize,
    pub edge_id: usize,
    pub coeff: f64,
}

impl Graph {
    /// Builds the symmetrized graph. Duplicates, both orientations and
    /// explicit self-loops in `edges` collapse; a self-loop is always added.
    pub fn build(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        let mut undirected = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(input_err!("edge ({a}, {b}) references a node outside [0, {num_nodes})"));
            }
            if a != b {
                undirected.push((a.min(b), a.max(b)));
            }
        }
        undirected.sort_unstable();
        undirected.dedup();
        let num_edges = undirected.len();

        // (row, col, edge id) for both orientations plus self-loops.
        let mut entries = Vec::with_capacity(2 * num_edges + num_nodes);
        for (id, &(u, v)) in undirected.iter().enumerate() {
            entries.push((u, v, id));
            entries.push((v, u, id));
        }
        entries.extend((0..num_nodes).map(|u| (u, u, num_edges + u)));
        entries.sort_unstable();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(u, _, _) in &entries {
            row_offsets[u + 1] += 1;
        }
        for u in 0..num_nodes {
            row_offsets[u + 1] += row_offsets[u];
        }
        let degrees: Vec<usize> = row_offsets.windows(2).map(|w| w[1] - w[0]).collect();

        let col_indices: Vec<usize> = entries.iter().map(|e| e.1).collect();
        let edge_ids: Vec<usize> = entries.iter().map(|e| e.2).collect();
        let norm_coeffs = entries
            .iter()
            .map(|&(u, v, _)| 1.0 / ((degrees[u] * degrees[v]) as f64).sqrt())
            .collect();

        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            edge_ids,
            degrees,
            norm_coeffs,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_entries(&self) -> usize {
        self.col_indices.len()
    }

    pub fn num_undirected_edges(&self) -> usize {
        (self.num_entries() - self.num_nodes) / 2
    }

    /// Number of per-edge gate parameters: one per undirected edge plus one
    /// per self-loop.
    pub fn count_parameters_theta(&self) -> usize {
        self.num_undirected_edges() + self.num_nodes
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn edge_ids(&self) -> &[usize] {
        &self.edge_ids
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn norm_coeffs(&self) -> &[f64] {
        &self.norm_coeffs
    }

    pub fn self_loop_id(&self, u: usize) -> usize {
        self.num_undirected_edges() + u
    }

    pub fn neighbors(&self, u: usize) -> Result<Vec<Neighbor>> {
        if u >= self.num_nodes {
            return Err(input_err!("node {u} outside [0, {})", self.num_nodes));
        }
        Ok(self.row(u).collect())
    }

    /// CSR row of `u`; panics if `u` is out of range.
    pub(crate) fn row(&self, u: usize) -> impl Iterator<Item = Neighbor> + '_ {
        let span = self.row_offsets[u]..self.row_offsets[u + 1];
        span.map(move |i| Neighbor {
            node: self.col_indices[i],
            edge_id: self.edge_ids[i],
            coeff: self.norm_coeffs[i],
        })
    }

    /// Undirected edges as `(u, v)` with `u < v`, ordered by edge id.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut edges = vec![(0, 0); self.num_undirected_edges()];
        for u in 0..self.num_nodes {
            for nb in self.row(u) {
                if u < nb.node {
                    edges[nb.edge_id] = (u, nb.node);
                }
            }
        }
        edges
    }
}
