//! Frozen deep echo-state reservoir with leaky-integrator layers.
//!
//! Every layer `l` updates, per node,
//!
//! ```text
//! ĥ = tanh(W_u h^(l-1)_t + W_h h^(l)_{t-1} + b)
//! h^(l)_t = (1 - γ_l) h^(l)_{t-1} + γ_l ĥ
//! ```
//!
//! with `h^(0)_t` the raw input row. Weights are shared by all nodes, so
//! nodes evolve independently and are processed in parallel.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SgpError};
use crate::linalg::spectral_radius;

const PAR_MIN_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirConfig {
    /// Units of each reservoir layer; its length is the number of layers.
    pub units: Vec<usize>,
    pub spectral_radius: f64,
    /// Leak of the first layer.
    pub leak_initial: f64,
    /// Subtracted from the leak at every deeper layer.
    pub leak_decrement: f64,
    pub leak_floor: f64,
    /// Scale of input weights and biases.
    pub input_scale: f64,
    /// Fraction of nonzero weights kept in every matrix.
    pub density: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            units: vec![32, 32, 32],
            spectral_radius: 0.9,
            leak_initial: 0.9,
            leak_decrement: 0.1,
            leak_floor: 0.1,
            input_scale: 1.0,
            density: 0.7,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn num_layers(&self) -> usize {
        self.units.len()
    }

    /// Leak of layer `layer` (0-based).
    pub fn leak(&self, layer: usize) -> f64 {
        (self.leak_initial - layer as f64 * self.leak_decrement).max(self.leak_floor)
    }

    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_open_unit(self.spectral_radius) {
            return Err(SgpError::Config(format!(
                "reservoir.spectral_radius must lie in (0, 1), got {}",
                self.spectral_radius
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(SgpError::Config(format!(
                "reservoir.density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if !(self.leak_floor > 0.0 && self.leak_floor <= 1.0) {
            return Err(SgpError::Config(format!(
                "reservoir leak floor must lie in (0, 1], got {}",
                self.leak_floor
            )));
        }
        if !(self.leak_initial > 0.0 && self.leak_initial <= 1.0) || self.leak_decrement < 0.0 {
            return Err(SgpError::Config(format!(
                "reservoir.leak must lie in (0, 1] with a nonnegative decrement, got {} / {}",
                self.leak_initial, self.leak_decrement
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(SgpError::Config("reservoir.input_scale must be positive".into()));
        }
        if self.units.contains(&0) {
            return Err(SgpError::Config("reservoir layers need at least one unit".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirLayer {
    /// `units × input width`
    pub input_weights: Array2<f64>,
    /// `units × units`
    pub recurrent_weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub leak: f64,
}

impl ReservoirLayer {
    pub fn units(&self) -> usize {
        self.bias.len()
    }

    fn input_width(&self) -> usize {
        self.input_weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepEsn {
    input_dim: usize,
    layers: Vec<ReservoirLayer>,
}

fn uniform_masked(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64, density: f64) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..=1.0) * scale);
    let len = rows * cols;
    let zeros = ((1.0 - density) * len as f64).round() as usize;
    if zeros > 0 {
        let flat = m.as_slice_mut().expect("fresh array is contiguous");
        for idx in sample(rng, len, zeros.min(len)) {
            flat[idx] = 0.0;
        }
    }
    m
}

impl DeepEsn {
    /// Draws a reservoir from `config`. Identical seeds give bit-identical weights.
    pub fn new(config: &ReservoirConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::with_capacity(config.num_layers());
        let mut prev = input_dim;
        for (l, &units) in config.units.iter().enumerate() {
            let input_weights = uniform_masked(&mut rng, units, prev, config.input_scale, config.density);
            let bias = Array1::from_shape_fn(units, |_| rng.random_range(-1.0..=1.0) * config.input_scale);
            let mut recurrent_weights = uniform_masked(&mut rng, units, units, 1.0, config.density);
            let rho = spectral_radius(&recurrent_weights);
            if rho < 1e-12 {
                return Err(SgpError::Init(format!(
                    "layer {l}: recurrent matrix has zero spectral radius after masking; \
                     increase reservoir.density or units"
                )));
            }
            recurrent_weights *= config.spectral_radius / rho;
            layers.push(ReservoirLayer {
                input_weights,
                recurrent_weights,
                bias,
                leak: config.leak(l),
            });
            prev = units;
        }
        Ok(DeepEsn { input_dim, layers })
    }

    /// Assembles a reservoir from explicit layers (used for hand-built reservoirs).
    pub fn from_layers(input_dim: usize, layers: Vec<ReservoirLayer>) -> Result<Self> {
        let mut prev = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            let units = layer.units();
            if layer.input_width() != prev
                || layer.input_weights.nrows() != units
                || layer.recurrent_weights.dim() != (units, units)
            {
                return Err(SgpError::Shape(format!("layer {l}: inconsistent weight shapes")));
            }
            if !(layer.leak >= 0.0 && layer.leak <= 1.0) {
                return Err(SgpError::Config(format!("layer {l}: leak {} outside [0, 1]", layer.leak)));
            }
            prev = units;
        }
        Ok(DeepEsn { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[ReservoirLayer] {
        &self.layers
    }

    pub fn total_units(&self) -> usize {
        self.layers.iter().map(ReservoirLayer::units).sum()
    }

    /// Width of the concatenated `[input ‖ layer 1 ‖ … ‖ layer L]` encoding.
    pub fn embedding_width(&self) -> usize {
        self.input_dim + self.total_units()
    }

    /// Widths of the blocks that make up one temporal embedding row.
    pub fn block_widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(ReservoirLayer::units))
            .collect()
    }

    pub fn zero_state(&self, num_nodes: usize) -> NodeState {
        NodeState {
            data: Array2::zeros((num_nodes, self.total_units())),
        }
    }

    fn step_node(&self, input: &[f64], mut state: ArrayViewMut1<f64>, scratch: &mut Vec<f64>) {
        let state = state.as_slice_mut().expect("state rows are contiguous");
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let units = layer.units();
            scratch.clear();
            {
                let (before, rest) = state.split_at(offset);
                let prev_own = &rest[..units];
                let below: &[f64] = if l == 0 {
                    input
                } else {
                    &before[offset - self.layers[l - 1].units()..]
                };
                for r in 0..units {
                    let mut acc = layer.bias[r];
                    for (w, x) in layer.input_weights.row(r).iter().zip(below) {
                        acc += w * x;
                    }
                    for (w, h) in layer.recurrent_weights.row(r).iter().zip(prev_own) {
                        acc += w * h;
                    }
                    scratch.push((1.0 - layer.leak) * prev_own[r] + layer.leak * acc.tanh());
                }
            }
            state[offset..offset + units].copy_from_slice(scratch);
            offset += units;
        }
    }

    /// Advances every node by one time step in place.
    pub fn step(&self, state: &mut NodeState, inputs: ArrayView2<f64>) -> Result<()> {
        let (n, width) = inputs.dim();
        if width != self.input_dim {
            return Err(SgpError::Shape(format!(
                "reservoir input width {width}, expected {}",
                self.input_dim
            )));
        }
        if n != state.num_nodes() {
            return Err(SgpError::Shape(format!(
                "input has {n} nodes, state has {}",
                state.num_nodes()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(SgpError::InvalidInput("non-finite reservoir input".into()));
        }
        if self.layers.is_empty() {
            return Ok(());
        }
        let inputs = inputs.as_standard_layout();
        let run = |(input, row): (ndarray::ArrayView1<f64>, ArrayViewMut1<f64>), scratch: &mut Vec<f64>| {
            self.step_node(input.as_slice().expect("standard layout"), row, scratch)
        };
        if n >= PAR_MIN_NODES {
            inputs
                .outer_iter()
                .into_par_iter()
                .zip(state.data.outer_iter_mut().into_par_iter())
                .for_each_init(Vec::new, |scratch, item| run(item, scratch));
        } else {
            let mut scratch = Vec::new();
            for item in inputs.outer_iter().zip(state.data.outer_iter_mut()) {
                run(item, &mut scratch);
            }
        }
        Ok(())
    }

    /// Writes `[input ‖ states]` rows as 32-bit values into `out` (`N × embedding_width`).
    pub fn write_embedding(&self, inputs: ArrayView2<f64>, state: &NodeState, mut out: ndarray::ArrayViewMut2<f32>) {
        let d_in = self.input_dim;
        out.slice_mut(s![.., ..d_in]).zip_mut_with(&inputs, |o, &v| *o = v as f32);
        out.slice_mut(s![.., d_in..]).zip_mut_with(&state.data, |o, &v| *o = v as f32);
    }

    /// Runs the reservoir over `T×N×d_in` inputs from a zero state and
    /// returns the `T×N×d_H̄` concatenated encodings.
    pub fn encode_sequence(&self, inputs: &Array3<f64>, washout: usize) -> Result<TemporalEmbedding> {
        let (steps, nodes, _) = inputs.dim();
        if steps <= washout {
            return Err(SgpError::Config(format!(
                "sequence of {steps} steps is not longer than the washout ({washout})"
            )));
        }
        let mut state = self.zero_state(nodes);
        let mut data = Array3::<f32>::zeros((steps, nodes, self.embedding_width()));
        for t in 0..steps {
            let x = inputs.slice(s![t, .., ..]);
            self.step(&mut state, x)?;
            self.write_embedding(x, &state, data.slice_mut(s![t, .., ..]));
        }
        Ok(TemporalEmbedding { data, washout })
    }
}

/// Hidden state of every node; row `i` holds node `i`'s layers back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    data: Array2<f64>,
}

impl NodeState {
    pub fn num_nodes(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn from_array(data: Array2<f64>) -> Self {
        NodeState { data }
    }

    /// Euclidean distance between two states of the same shape.
    pub fn distance(&self, other: &NodeState) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `T×N×d_H̄` reservoir encodings. Rows before `washout` are not used for training.
#[derive(Debug, Clone)]
pub struct TemporalEmbedding {
    pub data: Array3<f32>,
    pub washout: usize,
}

impl TemporalEmbedding {
    pub fn is_valid_step(&self, t: usize) -> bool {
        t >= self.washout && t < self.data.dim().0
    }
}
