//! Datasets of graph-structured multivariate time series.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, write_long_csv, write_wide_csv, CsvFormat, LoadOptions};
pub use synth::{synth_diffusion, SynthCoefficients, SynthConfig, SynthOutput};

use std::f64::consts::TAU;

use ndarray::{concatenate, s, Array2, Array3, Axis};

use crate::error::{Result, SgpError};
use crate::fingerprint::{Fingerprint, Hasher};
use crate::graph::SparseGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `T×N×d_x` readings in sensor units (missing cells already filled).
    pub values: Array3<f64>,
    /// `T×N×d_x`, `true` where the reading was observed rather than filled.
    pub mask: Array3<bool>,
    /// `T×N×d_u` exogenous covariates.
    pub exog: Array3<f64>,
    /// `N×d_v` static node attributes, possibly zero-width.
    pub static_attrs: Array2<f64>,
    pub timestamps: Vec<i64>,
    /// Raw (unnormalized) adjacency.
    pub graph: SparseGraph,
}

impl Dataset {
    /// Dataset with a fully observed mask, no covariates and no static attributes.
    pub fn new(values: Array3<f64>, timestamps: Vec<i64>, graph: SparseGraph) -> Result<Self> {
        let (t, n, _) = values.dim();
        let ds = Dataset {
            mask: Array3::from_elem(values.dim(), true),
            exog: Array3::zeros((t, n, 0)),
            static_attrs: Array2::zeros((n, 0)),
            values,
            timestamps,
            graph,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_steps(&self) -> usize {
        self.values.dim().0
    }

    pub fn num_nodes(&self) -> usize {
        self.values.dim().1
    }

    pub fn num_channels(&self) -> usize {
        self.values.dim().2
    }

    pub fn exog_width(&self) -> usize {
        self.exog.dim().2
    }

    /// Width `d_x + d_u` of the reservoir input.
    pub fn input_width(&self) -> usize {
        self.num_channels() + self.exog_width()
    }

    /// Sampling step in timestamp units (1 for single-step series).
    pub fn step(&self) -> i64 {
        if self.timestamps.len() >= 2 {
            self.timestamps[1] - self.timestamps[0]
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t, n, _) = self.values.dim();
        if self.mask.dim() != self.values.dim() {
            return Err(SgpError::Shape("mask shape differs from values".into()));
        }
        if self.exog.dim().0 != t || self.exog.dim().1 != n {
            return Err(SgpError::Shape("exogenous covariates must be T×N×d_u".into()));
        }
        if self.static_attrs.nrows() != n {
            return Err(SgpError::Shape("static attributes must have one row per node".into()));
        }
        if self.timestamps.len() != t {
            return Err(SgpError::Shape(format!(
                "{} timestamps for {t} steps",
                self.timestamps.len()
            )));
        }
        if self.graph.num_nodes() != n {
            return Err(SgpError::Shape(format!(
                "graph has {} nodes, data has {n}",
                self.graph.num_nodes()
            )));
        }
        let all_finite = self.values.iter().chain(self.exog.iter()).chain(self.static_attrs.iter());
        if all_finite.into_iter().any(|v| !v.is_finite()) {
            return Err(SgpError::InvalidInput("dataset contains non-finite values".into()));
        }
        check_timestamps(&self.timestamps)
    }

    /// Appends two-column time-of-day covariates to `exog`.
    pub fn add_time_of_day(&mut self, period: i64) -> Result<()> {
        if period <= 0 {
            return Err(SgpError::Config(format!("time-of-day period must be positive, got {period}")));
        }
        let tod = time_of_day_features(&self.timestamps, period);
        let n = self.num_nodes();
        let broadcast = Array3::from_shape_fn((self.num_steps(), n, 2), |(t, _, c)| tod[[t, c]]);
        self.exog = concatenate(Axis(2), &[self.exog.view(), broadcast.view()])
            .map_err(|e| SgpError::Shape(e.to_string()))?;
        Ok(())
    }

    /// `[normalized x ‖ u]` rows fed to the reservoir, `T×N×(d_x+d_u)`.
    pub fn reservoir_inputs(&self, stats: &ChannelStats) -> Array3<f64> {
        let mut out = Array3::zeros((self.num_steps(), self.num_nodes(), self.input_width()));
        let dx = self.num_channels();
        out.slice_mut(s![.., .., ..dx]).assign(&stats.normalize(&self.values));
        out.slice_mut(s![.., .., dx..]).assign(&self.exog);
        out
    }

    /// Reorders nodes so node `i` becomes `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Dataset> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(SgpError::Shape("permutation length differs from node count".into()));
        }
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.values.slice_mut(s![.., p, ..]).assign(&self.values.slice(s![.., i, ..]));
            out.mask.slice_mut(s![.., p, ..]).assign(&self.mask.slice(s![.., i, ..]));
            out.exog.slice_mut(s![.., p, ..]).assign(&self.exog.slice(s![.., i, ..]));
            out.static_attrs.row_mut(p).assign(&self.static_attrs.row(i));
        }
        out.graph = self.graph.permute(perm)?;
        Ok(out)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Hasher::new("sgp.dataset.v1");
        for d in self.values.shape() {
            h.u64(*d as u64);
        }
        h.u64(self.exog_width() as u64).u64(self.static_attrs.ncols() as u64);
        h.f64s(self.values.iter());
        h.bytes(&self.mask.iter().map(|&m| m as u8).collect::<Vec<_>>());
        h.f64s(self.exog.iter()).f64s(self.static_attrs.iter());
        for ts in &self.timestamps {
            h.u64(*ts as u64);
        }
        h.u64(self.graph.num_edges() as u64);
        for (i, j, w) in self.graph.edges() {
            h.u64(i as u64).u64(j as u64).f64(w);
        }
        h.finish()
    }
}

pub(crate) fn check_timestamps(ts: &[i64]) -> Result<()> {
    if ts.len() < 2 {
        return Ok(());
    }
    let step = ts[1] - ts[0];
    for (k, w) in ts.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(SgpError::InvalidInput(format!(
                "timestamps not strictly increasing at row {}",
                k + 1
            )));
        }
        if w[1] - w[0] != step {
            return Err(SgpError::InvalidInput(format!(
                "non-uniform sampling step at row {}: {} vs {step}",
                k + 1,
                w[1] - w[0]
            )));
        }
    }
    Ok(())
}

/// `[sin(2πτ/period), cos(2πτ/period)]` with `τ = timestamp mod period`.
pub fn time_of_day_features(timestamps: &[i64], period: i64) -> Array2<f64> {
    let mut out = Array2::zeros((timestamps.len(), 2));
    for (t, ts) in timestamps.iter().enumerate() {
        let phase = TAU * ts.rem_euclid(period) as f64 / period as f64;
        out[[t, 0]] = phase.sin();
        out[[t, 1]] = phase.cos();
    }
    out
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics over observed cells of steps `0..train_end`. A channel with
    /// zero spread gets unit scale.
    pub fn from_training(dataset: &Dataset, train_end: usize) -> Result<Self> {
        let train_end = train_end.min(dataset.num_steps());
        let dx = dataset.num_channels();
        let mut mean = vec![0.0; dx];
        let mut std = vec![1.0; dx];
        for c in 0..dx {
            let vals = dataset.values.slice(s![..train_end, .., c]);
            let mask = dataset.mask.slice(s![..train_end, .., c]);
            let observed: Vec<f64> = vals
                .iter()
                .zip(mask.iter())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            if observed.is_empty() {
                return Err(SgpError::InvalidInput(format!(
                    "channel {c} has no observed values in the training split"
                )));
            }
            let count = observed.len() as f64;
            let mu = observed.iter().sum::<f64>() / count;
            let var = observed.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / count;
            mean[c] = mu;
            if var.sqrt() > 1e-12 {
                std[c] = var.sqrt();
            }
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn normalize(&self, values: &Array3<f64>) -> Array3<f64> {
        let mut out = values.clone();
        for (c, mut lane) in out.axis_iter_mut(Axis(2)).enumerate() {
            lane.mapv_inplace(|v| (v - self.mean[c]) / self.std[c]);
        }
        out
    }

    #[inline]
    pub fn normalize_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    #[inline]
    pub fn denormalize_value(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}
