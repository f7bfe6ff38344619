//! Spatiotemporal embeddings: reservoir encodings propagated through powers
//! of a graph shift operator, then stored on disk for training.
//!
//! One embedding row for node `i` at time `t` is laid out k-major, layer-minor:
//!
//! ```text
//! [S⁰: blocks 0..=L][S¹: blocks 0..=L]…[Sᴷ][reverse S¹..Sᴷ if bidirectional][global mean of H̄]
//! ```

mod precompute;
mod store;

pub use precompute::{precompute, PrecomputeSpec};
pub use store::{EmbeddingStore, StoreHeader, StoreWriter, STORE_HEADER_LEN, STORE_MAGIC, STORE_VERSION};

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use crate::error::{Result, SgpError};
use crate::graph::ShiftOperators;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingLayout {
    /// Widths of the temporal blocks `[d_in, d_h¹, …, d_hᴸ]`.
    pub block_widths: Vec<usize>,
    /// Number of shift applications `K`.
    pub spatial_orders: usize,
    pub bidirectional: bool,
    pub include_global: bool,
}

impl EmbeddingLayout {
    pub fn num_blocks(&self) -> usize {
        self.block_widths.len()
    }

    /// Number of reservoir layers (blocks minus the raw-input block).
    pub fn num_layers(&self) -> usize {
        self.block_widths.len().saturating_sub(1)
    }

    /// Width `d_H̄` of one temporal encoding.
    pub fn temporal_width(&self) -> usize {
        self.block_widths.iter().sum()
    }

    /// `K+1`, or `2K+1` when bidirectional.
    pub fn num_orders(&self) -> usize {
        if self.bidirectional {
            2 * self.spatial_orders + 1
        } else {
            self.spatial_orders + 1
        }
    }

    /// Width of the propagated part, before any global block.
    pub fn propagated_width(&self) -> usize {
        self.num_orders() * self.temporal_width()
    }

    pub fn total_width(&self) -> usize {
        self.propagated_width() + if self.include_global { self.temporal_width() } else { 0 }
    }

    /// Input widths of the decoder groups in row order: one group per
    /// (order, block) pair, plus one for the global block.
    pub fn group_widths(&self) -> Vec<usize> {
        let mut groups: Vec<usize> = (0..self.num_orders())
            .flat_map(|_| self.block_widths.iter().copied())
            .collect();
        if self.include_global {
            groups.push(self.temporal_width());
        }
        groups
    }

    pub fn flags(&self) -> u32 {
        (self.bidirectional as u32) | ((self.include_global as u32) << 1)
    }
}

/// Propagation for a single time step into `out` (`N × propagated_width`).
pub(crate) fn propagate_step(
    hbar: ArrayView2<f32>,
    ops: &ShiftOperators,
    layout: &EmbeddingLayout,
    mut out: ArrayViewMut2<f32>,
) -> Result<()> {
    let d = layout.temporal_width();
    out.slice_mut(s![.., ..d]).assign(&hbar);
    let mut column = d;
    let directions = std::iter::once(&ops.forward).chain(ops.backward.iter().filter(|_| layout.bidirectional));
    for op in directions {
        let mut current: Array2<f32> = hbar.to_owned();
        for _ in 0..layout.spatial_orders {
            current = op.spmm(current.view())?;
            out.slice_mut(s![.., column..column + d]).assign(&current);
            column += d;
        }
    }
    Ok(())
}

fn check_inputs(dims: (usize, usize, usize), ops: &ShiftOperators, layout: &EmbeddingLayout) -> Result<()> {
    let (_, n, d) = dims;
    if d != layout.temporal_width() {
        return Err(SgpError::Shape(format!(
            "temporal encoding width {d} does not match layout width {}",
            layout.temporal_width()
        )));
    }
    if n != ops.num_nodes() {
        return Err(SgpError::Shape(format!(
            "encoding has {n} nodes, shift operator has {}",
            ops.num_nodes()
        )));
    }
    if layout.bidirectional && ops.backward.is_none() {
        return Err(SgpError::Config("bidirectional layout needs a reverse shift operator".into()));
    }
    Ok(())
}

/// `S⁽⁰⁾ = H̄`, `S⁽ᵏ⁾ = Ã S⁽ᵏ⁻¹⁾`, concatenated per `layout` (without the global block).
pub fn propagate(hbar: &Array3<f32>, ops: &ShiftOperators, layout: &EmbeddingLayout) -> Result<Array3<f32>> {
    check_inputs(hbar.dim(), ops, layout)?;
    let (t, n, _) = hbar.dim();
    let mut out = Array3::<f32>::zeros((t, n, layout.propagated_width()));
    out.outer_iter_mut()
        .into_par_iter()
        .zip(hbar.outer_iter().into_par_iter())
        .try_for_each(|(dst, src)| propagate_step(src, ops, layout, dst))?;
    Ok(out)
}

/// Mean over nodes of `hbar` at one step, accumulated in `f64`.
pub(crate) fn node_mean(hbar: ArrayView2<f32>) -> Vec<f32> {
    let (n, d) = hbar.dim();
    let mut acc = vec![0f64; d];
    for row in hbar.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v as f64;
        }
    }
    acc.into_iter().map(|a| (a / n.max(1) as f64) as f32).collect()
}

/// Appends the node-average of `hbar` at each step to every node's row.
pub fn append_global_average(stbar: &Array3<f32>, hbar: &Array3<f32>) -> Result<Array3<f32>> {
    let (t, n, d) = stbar.dim();
    let (th, nh, dh) = hbar.dim();
    if (t, n) != (th, nh) {
        return Err(SgpError::Shape(format!(
            "global average: embeddings are {t}×{n}, temporal encodings {th}×{nh}"
        )));
    }
    let mut out = Array3::<f32>::zeros((t, n, d + dh));
    out.slice_mut(s![.., .., ..d]).assign(stbar);
    for step in 0..t {
        let mean = node_mean(hbar.slice(s![step, .., ..]));
        for i in 0..n {
            for (c, m) in mean.iter().enumerate() {
                out[[step, i, d + c]] = *m;
            }
        }
    }
    Ok(out)
}
