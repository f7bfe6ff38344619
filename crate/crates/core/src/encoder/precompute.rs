use std::path::Path;

use ndarray::{s, Array3, Axis};
use rayon::prelude::*;

use super::{node_mean, propagate_step, EmbeddingLayout, EmbeddingStore, StoreHeader, StoreWriter};
use crate::data::{ChannelStats, Dataset};
use crate::error::{Result, SgpError};
use crate::fingerprint::{Fingerprint, Hasher};
use crate::graph::{Normalization, ShiftOperators};
use crate::reservoir::{DeepEsn, ReservoirConfig};

const CHUNK_STEPS: usize = 1024;
const CHUNK_BYTES_BUDGET: usize = 512 << 20;

/// Everything that determines the contents of an embedding store besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputeSpec {
    pub reservoir: ReservoirConfig,
    pub spatial_orders: usize,
    pub bidirectional: bool,
    pub include_global: bool,
    pub normalization: Normalization,
    pub washout: usize,
}

impl PrecomputeSpec {
    pub fn layout(&self, input_width: usize) -> EmbeddingLayout {
        EmbeddingLayout {
            block_widths: std::iter::once(input_width).chain(self.reservoir.units.iter().copied()).collect(),
            spatial_orders: self.spatial_orders,
            bidirectional: self.bidirectional,
            include_global: self.include_global,
        }
    }

    pub fn fingerprint(&self, dataset: &Dataset, stats: &ChannelStats) -> Fingerprint {
        let r = &self.reservoir;
        let mut h = Hasher::new("sgp.store.v1");
        h.bytes(&dataset.fingerprint().0);
        h.f64s(&stats.mean).f64s(&stats.std);
        h.u64(r.units.len() as u64);
        for u in &r.units {
            h.u64(*u as u64);
        }
        h.f64(r.spectral_radius)
            .f64(r.leak_initial)
            .f64(r.leak_decrement)
            .f64(r.leak_floor)
            .f64(r.input_scale)
            .f64(r.density)
            .u64(r.seed);
        h.u64(self.spatial_orders as u64)
            .bool(self.bidirectional)
            .bool(self.include_global)
            .str(&format!("{:?}", self.normalization))
            .u64(self.washout as u64);
        h.finish()
    }
}

fn chunk_steps(num_nodes: usize, width: usize) -> usize {
    let per_step = (num_nodes * width * 4).max(1);
    (CHUNK_BYTES_BUDGET / per_step).clamp(1, CHUNK_STEPS)
}

/// Runs the reservoir over the dataset, propagates along the graph and
/// streams the embeddings to `out_path`.
///
/// An existing store with the same fingerprint is reused as is. A store with
/// a different fingerprint is only replaced when `force` is set.
pub fn precompute(
    dataset: &Dataset,
    stats: &ChannelStats,
    spec: &PrecomputeSpec,
    out_path: &Path,
    force: bool,
) -> Result<EmbeddingStore> {
    dataset.validate()?;
    let fingerprint = spec.fingerprint(dataset, stats);
    if out_path.exists() {
        match EmbeddingStore::open(out_path) {
            Ok(existing) if existing.fingerprint() == fingerprint => return Ok(existing),
            Ok(existing) if !force => {
                return Err(SgpError::Fingerprint(format!(
                    "{} was built from different inputs ({}); pass force to overwrite",
                    out_path.display(),
                    existing.fingerprint()
                )))
            }
            Err(e) if !force => {
                return Err(SgpError::Fingerprint(format!(
                    "{} exists but is not a readable store ({e}); pass force to overwrite",
                    out_path.display()
                )))
            }
            _ => {}
        }
    }

    let (steps, nodes) = (dataset.num_steps(), dataset.num_nodes());
    if steps <= spec.washout {
        return Err(SgpError::Config(format!(
            "dataset has {steps} steps, washout is {}",
            spec.washout
        )));
    }
    let esn = DeepEsn::new(&spec.reservoir, dataset.input_width())?;
    let layout = spec.layout(dataset.input_width());
    let ops = ShiftOperators::new(&dataset.graph, spec.normalization, spec.bidirectional)?;
    let inputs = dataset.reservoir_inputs(stats);

    let header = StoreHeader::for_layout(&layout, nodes, steps, spec.washout, fingerprint);
    let mut writer = StoreWriter::create(out_path, header)?;
    let d_h = layout.temporal_width();
    let d_prop = layout.propagated_width();
    let d_total = layout.total_width();
    let chunk = chunk_steps(nodes, d_total + d_h);

    let mut state = esn.zero_state(nodes);
    let mut start = 0;
    while start < steps {
        let len = chunk.min(steps - start);
        let mut hbar = Array3::<f32>::zeros((len, nodes, d_h));
        for (k, dst) in hbar.outer_iter_mut().enumerate() {
            let x = inputs.slice(s![start + k, .., ..]);
            esn.step(&mut state, x)?;
            esn.write_embedding(x, &state, dst);
        }
        let mut out = Array3::<f32>::zeros((len, nodes, d_total));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(hbar.axis_iter(Axis(0)).into_par_iter())
            .try_for_each(|(mut dst, src)| -> Result<()> {
                propagate_step(src, &ops, &layout, dst.slice_mut(s![.., ..d_prop]))?;
                if layout.include_global {
                    let mean = node_mean(src);
                    for mut row in dst.rows_mut() {
                        for (o, m) in row.slice_mut(s![d_prop..]).iter_mut().zip(&mean) {
                            *o = *m;
                        }
                    }
                }
                Ok(())
            })?;
        writer.write(out.as_slice().expect("fresh array is contiguous"))?;
        start += len;
    }
    log::info!(
        "precomputed {steps}×{nodes}×{d_total} embeddings into {}",
        out_path.display()
    );
    writer.finish()
}
