//! Sparse graph shift operators in compressed-sparse-row form.
//!
//! A [`SparseGraph`] is immutable once built. Edge lists may be supplied in
//! any order: the constructor sorts columns within each row and sums
//! duplicate `(row, col)` pairs.

mod io;
mod kernel;

pub use io::{read_coordinates, read_edge_list, write_edge_list};
pub use kernel::{build_gaussian_kernel_graph, DistanceMetric};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Result, SgpError};
use crate::real::Real;

/// Row sums are compared against this tolerance when checking stochasticity.
pub const ROW_SUM_TOL: f64 = 1e-6;

const PAR_SPMM_MIN_WORK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseGraph {
    /// Graph with `num_nodes` nodes and no edges.
    pub fn empty(num_nodes: usize) -> Self {
        SparseGraph {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a canonical CSR graph from `(src, dst, weight)` triples.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut triples: Vec<(usize, usize, f64)> = Vec::new();
        for (src, dst, w) in edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(SgpError::Index(format!(
                    "edge ({src}, {dst}) outside node range 0..{num_nodes}"
                )));
            }
            if !w.is_finite() {
                return Err(SgpError::InvalidGraph(format!(
                    "edge ({src}, {dst}) has non-finite weight {w}"
                )));
            }
            triples.push((src, dst, w));
        }
        triples.sort_by_key(|a| (a.0, a.1));

        let mut row_offsets = vec![0usize; num_nodes + 1];
        let mut col_indices = Vec::with_capacity(triples.len());
        let mut weights: Vec<f64> = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (src, dst, w) in triples {
            if last == Some((src, dst)) {
                *weights.last_mut().expect("duplicate follows an entry") += w;
                continue;
            }
            last = Some((src, dst));
            row_offsets[src + 1] += 1;
            col_indices.push(dst);
            weights.push(w);
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(SparseGraph {
            num_nodes,
            row_offsets,
            col_indices,
            weights,
        })
    }

    /// Dense square matrix to CSR, keeping only nonzero entries.
    pub fn from_dense(matrix: ArrayView2<f64>) -> Result<Self> {
        let (rows, cols) = matrix.dim();
        if rows != cols {
            return Err(SgpError::Shape(format!(
                "adjacency must be square, got {rows}x{cols}"
            )));
        }
        let edges = matrix
            .indexed_iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|((i, j), &w)| (i, j, w))
            .collect::<Vec<_>>();
        Self::from_edges(rows, edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Column indices and weights of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[range.clone()], &self.weights[range])
    }

    /// All edges as `(src, dst, weight)` in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            let (cols, ws) = self.row(i);
            cols.iter().zip(ws).map(move |(&j, &w)| (i, j, w))
        })
    }

    /// Out-degree (row sum) of every node.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (cols, ws) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => ws[pos],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.edges()
            .all(|(i, j, w)| (self.weight(j, i) - w).abs() <= tol)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.num_nodes, self.num_nodes));
        for (i, j, w) in self.edges() {
            dense[[i, j]] = w;
        }
        dense
    }

    fn check_nonnegative(&self) -> Result<()> {
        if let Some((i, j, w)) = self.edges().find(|&(_, _, w)| w < 0.0) {
            return Err(SgpError::InvalidGraph(format!(
                "negative weight {w} on edge ({i}, {j})"
            )));
        }
        Ok(())
    }

    fn with_weights(&self, weights: Vec<f64>) -> SparseGraph {
        SparseGraph {
            num_nodes: self.num_nodes,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            weights,
        }
    }

    /// Random-walk normalization `D⁻¹A`. Rows with zero degree stay empty.
    pub fn normalize_asymmetric(&self) -> Result<SparseGraph> {
        self.check_nonnegative()?;
        let degrees = self.degrees();
        let weights = self
            .edges()
            .map(|(i, _, w)| if degrees[i] > 0.0 { w / degrees[i] } else { 0.0 })
            .collect();
        Ok(self.with_weights(weights))
    }

    /// Symmetric normalization `D^{-1/2} A D^{-1/2}`; requires a symmetric input.
    pub fn normalize_symmetric(&self) -> Result<SparseGraph> {
        self.check_nonnegative()?;
        if !self.is_symmetric(1e-9) {
            return Err(SgpError::InvalidGraph(
                "symmetric normalization requires a symmetric adjacency".into(),
            ));
        }
        let degrees = self.degrees();
        let weights = self
            .edges()
            .map(|(i, j, w)| {
                let scale = degrees[i] * degrees[j];
                if scale > 0.0 {
                    w / scale.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Ok(self.with_weights(weights))
    }

    pub fn transpose(&self) -> SparseGraph {
        let n = self.num_nodes;
        let mut counts = vec![0usize; n + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut cursor = counts;
        let mut col_indices = vec![0usize; self.num_edges()];
        let mut weights = vec![0f64; self.num_edges()];
        // Rows are visited in increasing order, so columns of the transpose come out sorted.
        for (i, j, w) in self.edges() {
            let slot = cursor[j];
            col_indices[slot] = i;
            weights[slot] = w;
            cursor[j] += 1;
        }
        SparseGraph {
            num_nodes: n,
            row_offsets,
            col_indices,
            weights,
        }
    }

    /// Applies the operator to a node-feature matrix: `out[i] = Σ_j w(i,j)·features[j]`.
    ///
    /// Accumulation is done in `f64` in a fixed per-row order, so results do
    /// not depend on how rows are scheduled across threads.
    pub fn spmm<F: Real>(&self, features: ArrayView2<F>) -> Result<Array2<F>> {
        let (rows, width) = features.dim();
        if rows != self.num_nodes {
            return Err(SgpError::Shape(format!(
                "spmm: feature matrix has {rows} rows, graph has {} nodes",
                self.num_nodes
            )));
        }
        let mut out = Array2::<F>::zeros((rows, width));
        if width == 0 || rows == 0 {
            return Ok(out);
        }
        let owned;
        let src: &[F] = match features.as_slice() {
            Some(s) => s,
            None => {
                owned = features.as_standard_layout().to_owned();
                owned.as_slice().expect("standard layout")
            }
        };
        let out_slice = out.as_slice_mut().expect("fresh array is contiguous");
        let kernel = |acc: &mut Vec<f64>, (i, out_row): (usize, &mut [F])| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let (cols, ws) = self.row(i);
            for (&j, &w) in cols.iter().zip(ws) {
                let feat = &src[j * width..(j + 1) * width];
                for (a, &x) in acc.iter_mut().zip(feat) {
                    *a += w * x.as_f64();
                }
            }
            for (o, &a) in out_row.iter_mut().zip(acc.iter()) {
                *o = F::from_f64_lossy(a);
            }
        };
        if rows * width >= PAR_SPMM_MIN_WORK {
            out_slice
                .par_chunks_mut(width)
                .enumerate()
                .for_each_init(|| vec![0f64; width], kernel);
        } else {
            let mut acc = vec![0f64; width];
            for item in out_slice.chunks_mut(width).enumerate() {
                kernel(&mut acc, item);
            }
        }
        Ok(out)
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<SparseGraph> {
        if perm.len() != self.num_nodes {
            return Err(SgpError::Shape("permutation length differs from node count".into()));
        }
        Self::from_edges(
            self.num_nodes,
            self.edges().map(|(i, j, w)| (perm[i], perm[j], w)),
        )
    }
}

/// Normalization applied to a raw adjacency before propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `D⁻¹A`
    Asymmetric,
    /// `D^{-1/2} A D^{-1/2}`
    Symmetric,
    /// Symmetric when the adjacency is symmetric, asymmetric otherwise.
    Auto,
}

impl std::str::FromStr for Normalization {
    type Err = SgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymmetric" | "random_walk" => Ok(Normalization::Asymmetric),
            "symmetric" => Ok(Normalization::Symmetric),
            "auto" => Ok(Normalization::Auto),
            other => Err(SgpError::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

impl Normalization {
    pub fn apply(self, adjacency: &SparseGraph) -> Result<SparseGraph> {
        match self {
            Normalization::Asymmetric => adjacency.normalize_asymmetric(),
            Normalization::Symmetric => adjacency.normalize_symmetric(),
            Normalization::Auto if adjacency.is_symmetric(1e-9) => adjacency.normalize_symmetric(),
            Normalization::Auto => adjacency.normalize_asymmetric(),
        }
    }
}

/// Forward shift operator plus the reverse-direction operator used by the
/// bidirectional encoding. The reverse operator normalizes the transposed
/// raw adjacency, so both directions share the same normalization rule.
#[derive(Debug, Clone)]
pub struct ShiftOperators {
    pub forward: SparseGraph,
    pub backward: Option<SparseGraph>,
}

impl ShiftOperators {
    pub fn new(adjacency: &SparseGraph, normalization: Normalization, bidirectional: bool) -> Result<Self> {
        let forward = normalization.apply(adjacency)?;
        let backward = if bidirectional {
            Some(normalization.apply(&adjacency.transpose())?)
        } else {
            None
        };
        Ok(ShiftOperators { forward, backward })
    }

    pub fn num_nodes(&self) -> usize {
        self.forward.num_nodes()
    }
}
