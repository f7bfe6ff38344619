//! Trainable readout mapping one embedding row to an `H`-step forecast.
//!
//! ```text
//! z̄ ─ grouped SiLU layer ─┬─ [‖ static attrs ‖ positional enc] ─ MLP ─ affine ─ H×d_x
//! ```
//!
//! Hidden layers whose input and output widths agree use a gated residual,
//! `a + α·drop(SiLU(aW + b))`, with α starting at zero.

mod grouped;

pub use grouped::{silu, silu_grad, Activation, GroupedLinear};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, IxDyn, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::EmbeddingLayout;
use crate::error::{Result, SgpError};
use crate::Real;
use grouped::uniform_matrix;

static NEXT_DECODER_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_DECODER_ID.fetch_add(1, Ordering::Relaxed)
}

/// Architecture variants used in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// No spatial propagation (`K = 0`).
    NoSpaceEnc,
    /// One dense first layer instead of the block-diagonal one.
    FcDec,
    /// Only first-order propagation (`K = 1`).
    GcDec,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSpaceEnc, Variant::FcDec, Variant::GcDec];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSpaceEnc => "no_space_enc",
            Variant::FcDec => "fc_dec",
            Variant::GcDec => "gc_dec",
        }
    }

    pub fn spatial_orders(self, base: usize) -> usize {
        match self {
            Variant::NoSpaceEnc => 0,
            Variant::GcDec => 1,
            Variant::Full | Variant::FcDec => base,
        }
    }

    pub fn dense_first_layer(self) -> bool {
        self == Variant::FcDec
    }

    /// Spatial order and decoder configuration for this variant, everything else shared.
    pub fn configure(self, spatial_orders: usize, cfg: &DecoderConfig) -> (usize, DecoderConfig) {
        let mut cfg = cfg.clone();
        cfg.dense_first = self.dense_first_layer();
        (self.spatial_orders(spatial_orders), cfg)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = SgpError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            SgpError::Config(format!(
                "unknown variant '{s}' (expected full, no_space_enc, fc_dec or gc_dec)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Output width `d_z` of each group in the first layer.
    pub group_width: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Width of the learnable positional encodings; 0 disables them.
    pub pos_enc_dim: usize,
    pub pos_enc_std: f64,
    pub horizon: usize,
    pub channels: usize,
    pub dense_first: bool,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            group_width: 32,
            hidden: vec![256, 256],
            dropout: 0.3,
            pos_enc_dim: 16,
            pos_enc_std: 0.01,
            horizon: 12,
            channels: 1,
            dense_first: false,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_width == 0 || self.horizon == 0 || self.channels == 0 {
            return Err(SgpError::Config(
                "decoder group_width, horizon and channels must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(SgpError::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SgpError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.pos_enc_std >= 0.0 && self.pos_enc_std.is_finite()) {
            return Err(SgpError::Config("pos_enc_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Affine layer `aW + b` with an optional residual gate.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub gate: Option<F>,
}

impl<F: Real> DenseLayer<F> {
    fn random<R: Rng>(input: usize, output: usize, gated: bool, rng: &mut R) -> Self {
        DenseLayer {
            weight: uniform_matrix(rng, input, output, 1.0 / (input.max(1) as f64).sqrt()),
            bias: Array1::zeros(output),
            gate: gated.then(F::zero),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.ncols()
    }
}

/// Per-node features appended after the grouped layer: frozen static
/// attributes and trainable positional encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAttributes<F> {
    static_attrs: Array2<F>,
    pos_enc: Array2<F>,
}

impl<F: Real> NodeAttributes<F> {
    pub fn new(static_attrs: Array2<F>, pos_enc: Array2<F>) -> Result<Self> {
        if static_attrs.nrows() != pos_enc.nrows() {
            return Err(SgpError::Shape(format!(
                "static attributes cover {} nodes, positional encodings {}",
                static_attrs.nrows(),
                pos_enc.nrows()
            )));
        }
        Ok(NodeAttributes {
            static_attrs: static_attrs.as_standard_layout().into_owned(),
            pos_enc: pos_enc.as_standard_layout().into_owned(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.static_attrs.nrows()
    }

    pub fn static_width(&self) -> usize {
        self.static_attrs.ncols()
    }

    pub fn pos_enc_width(&self) -> usize {
        self.pos_enc.ncols()
    }

    pub fn width(&self) -> usize {
        self.static_width() + self.pos_enc_width()
    }

    pub fn static_attrs(&self) -> &Array2<F> {
        &self.static_attrs
    }

    pub fn pos_enc(&self) -> &Array2<F> {
        &self.pos_enc
    }
}

/// Borrowed view of one trainable tensor.
#[derive(Debug)]
pub struct TensorRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

#[derive(Debug)]
pub struct TensorMut<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [F],
}

/// Cotangents of every trainable tensor. Dense entries follow the order of
/// [`Decoder::tensors`] without the positional encodings, which are kept as
/// sparse rows for the nodes present in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<F> {
    pub dense: Vec<ArrayD<F>>,
    pub pos_enc: BTreeMap<usize, Array1<F>>,
}

impl<F: Real> GradientSet<F> {
    pub fn max_abs(&self) -> F {
        self.dense
            .iter()
            .flat_map(|a| a.iter())
            .chain(self.pos_enc.values().flat_map(|r| r.iter()))
            .fold(F::zero(), |m, v| m.max(v.abs()))
    }

    /// Positional-encoding cotangent as a dense `N × d_p` matrix.
    pub fn pos_enc_dense(&self, num_nodes: usize, width: usize) -> Array2<F> {
        let mut out = Array2::zeros((num_nodes, width));
        for (node, row) in &self.pos_enc {
            out.row_mut(*node).assign(row);
        }
        out
    }
}

#[derive(Debug)]
struct LayerCache<F> {
    input: Array2<F>,
    pre: Array2<F>,
    mask: Option<Array2<F>>,
    /// Activation after dropout.
    out: Array2<F>,
}

/// Intermediate values of one forward pass, consumed by [`Decoder::backward`].
#[derive(Debug)]
pub struct ForwardCache<F> {
    decoder_id: u64,
    generation: u64,
    z: Array2<F>,
    nodes: Vec<usize>,
    first_pre: Array2<F>,
    layers: Vec<LayerCache<F>>,
    last: Array2<F>,
}

impl<F> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, PartialEq)]
pub struct Decoder<F> {
    id: u64,
    generation: u64,
    layout: EmbeddingLayout,
    first: GroupedLinear<F>,
    hidden: Vec<DenseLayer<F>>,
    output: DenseLayer<F>,
    attrs: NodeAttributes<F>,
    horizon: usize,
    channels: usize,
    dropout: f64,
}

impl<F: Real> Clone for Decoder<F> {
    fn clone(&self) -> Self {
        Decoder {
            id: next_id(),
            generation: 0,
            layout: self.layout.clone(),
            first: self.first.clone(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
            attrs: self.attrs.clone(),
            horizon: self.horizon,
            channels: self.channels,
            dropout: self.dropout,
        }
    }
}

impl<F: Real> Decoder<F> {
    /// Randomly initialised decoder for embeddings with the given layout.
    /// `static_attrs` is `N × d_v` and fixes the number of nodes.
    pub fn new(cfg: &DecoderConfig, layout: &EmbeddingLayout, static_attrs: Array2<F>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let group_widths = layout.group_widths();
        let groups: Vec<(usize, usize)> = if cfg.dense_first {
            vec![(layout.total_width(), group_widths.len() * cfg.group_width)]
        } else {
            group_widths.iter().map(|&w| (w, cfg.group_width)).collect()
        };
        let first = GroupedLinear::random(&groups, Activation::Silu, &mut rng)?;
        let mut width = first.output_width() + static_attrs.ncols() + cfg.pos_enc_dim;
        let mut hidden = Vec::with_capacity(cfg.hidden.len());
        for &h in &cfg.hidden {
            hidden.push(DenseLayer::random(width, h, width == h, &mut rng));
            width = h;
        }
        let output = DenseLayer::random(width, cfg.horizon * cfg.channels, false, &mut rng);
        let normal = Normal::new(0.0, cfg.pos_enc_std).map_err(|e| SgpError::Config(e.to_string()))?;
        let pos_enc = Array2::from_shape_simple_fn((static_attrs.nrows(), cfg.pos_enc_dim), || {
            F::from_f64_lossy(normal.sample(&mut rng))
        });
        let attrs = NodeAttributes::new(static_attrs, pos_enc)?;
        Self::from_parts(layout.clone(), first, hidden, output, attrs, cfg.horizon, cfg.channels, cfg.dropout)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        layout: EmbeddingLayout,
        first: GroupedLinear<F>,
        hidden: Vec<DenseLayer<F>>,
        output: DenseLayer<F>,
        attrs: NodeAttributes<F>,
        horizon: usize,
        channels: usize,
        dropout: f64,
    ) -> Result<Self> {
        if first.input_width() != layout.total_width() {
            return Err(SgpError::Shape(format!(
                "first layer reads {} columns, embeddings have {}",
                first.input_width(),
                layout.total_width()
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(SgpError::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut width = first.output_width() + attrs.width();
        for (l, layer) in hidden.iter().chain(std::iter::once(&output)).enumerate() {
            if layer.input_width() != width || layer.bias.len() != layer.output_width() {
                return Err(SgpError::Shape(format!(
                    "layer {l} has shape {:?} with bias {}, expected input width {width}",
                    layer.weight.dim(),
                    layer.bias.len()
                )));
            }
            let residual = layer.input_width() == layer.output_width() && l < hidden.len();
            if layer.gate.is_some() != residual {
                return Err(SgpError::Shape(format!(
                    "layer {l} gate must be present exactly when its widths match"
                )));
            }
            width = layer.output_width();
        }
        if width != horizon * channels || horizon == 0 || channels == 0 {
            return Err(SgpError::Shape(format!(
                "output width {width} does not equal horizon {horizon} × channels {channels}"
            )));
        }
        let standard = |l: DenseLayer<F>| DenseLayer {
            weight: l.weight.as_standard_layout().into_owned(),
            bias: l.bias.as_standard_layout().into_owned(),
            gate: l.gate,
        };
        Ok(Decoder {
            id: next_id(),
            generation: 0,
            layout,
            first,
            hidden: hidden.into_iter().map(standard).collect(),
            output: standard(output),
            attrs,
            horizon,
            channels,
            dropout,
        })
    }

    pub fn layout(&self) -> &EmbeddingLayout {
        &self.layout
    }

    pub fn first_layer(&self) -> &GroupedLinear<F> {
        &self.first
    }

    pub fn hidden_layers(&self) -> &[DenseLayer<F>] {
        &self.hidden
    }

    pub fn output_layer(&self) -> &DenseLayer<F> {
        &self.output
    }

    pub fn attributes(&self) -> &NodeAttributes<F> {
        &self.attrs
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn num_nodes(&self) -> usize {
        self.attrs.num_nodes()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// All trainable tensors; the positional encodings come last.
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        for (j, w) in self.first.weights().iter().enumerate() {
            out.push(TensorRef {
                name: format!("group.{j}.weight"),
                shape: w.shape().to_vec(),
                data: w.as_slice().expect("standard layout"),
            });
        }
        for (l, layer) in self.hidden.iter().enumerate() {
            push_dense(&mut out, &format!("hidden.{l}"), layer);
        }
        push_dense(&mut out, "output", &self.output);
        out.push(TensorRef {
            name: "node.pos_enc".into(),
            shape: self.attrs.pos_enc.shape().to_vec(),
            data: self.attrs.pos_enc.as_slice().expect("standard layout"),
        });
        out
    }

    /// Mutable counterpart of [`Decoder::tensors`]. Invalidates outstanding
    /// forward caches.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        self.generation += 1;
        let mut out = Vec::new();
        for (j, w) in self.first.weights_mut().iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("group.{j}.weight"),
                shape: w.shape().to_vec(),
                data: w.as_slice_mut().expect("standard layout"),
            });
        }
        for (l, layer) in self.hidden.iter_mut().enumerate() {
            push_dense_mut(&mut out, &format!("hidden.{l}"), layer);
        }
        push_dense_mut(&mut out, "output", &mut self.output);
        out.push(TensorMut {
            name: "node.pos_enc".into(),
            shape: self.attrs.pos_enc.shape().to_vec(),
            data: self.attrs.pos_enc.as_slice_mut().expect("standard layout"),
        });
        out
    }

    /// Dense tensors and the positional-encoding matrix, for optimisers that
    /// treat the latter row-sparsely.
    pub(crate) fn split_params_mut(&mut self) -> (Vec<&mut [F]>, &mut Array2<F>) {
        self.generation += 1;
        let mut dense: Vec<&mut [F]> = Vec::new();
        for w in self.first.weights_mut() {
            dense.push(w.as_slice_mut().expect("standard layout"));
        }
        for layer in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            dense.push(layer.weight.as_slice_mut().expect("standard layout"));
            dense.push(layer.bias.as_slice_mut().expect("standard layout"));
            if let Some(g) = layer.gate.as_mut() {
                dense.push(std::slice::from_mut(g));
            }
        }
        (dense, &mut self.attrs.pos_enc)
    }

    /// Copies `data` into the tensor called `name`.
    pub fn set_tensor(&mut self, name: &str, shape: &[usize], data: &[F]) -> Result<()> {
        let mut tensors = self.tensors_mut();
        let t = tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| SgpError::Format(format!("decoder has no tensor '{name}'")))?;
        if t.shape != shape || t.data.len() != data.len() {
            return Err(SgpError::Shape(format!(
                "tensor '{name}' has shape {:?}, got {shape:?}",
                t.shape
            )));
        }
        t.data.copy_from_slice(data);
        Ok(())
    }

    fn check_batch(&self, z: &ArrayView2<F>, nodes: &[usize]) -> Result<()> {
        if z.nrows() != nodes.len() {
            return Err(SgpError::Shape(format!(
                "batch has {} rows but {} node ids",
                z.nrows(),
                nodes.len()
            )));
        }
        if let Some(bad) = nodes.iter().find(|&&n| n >= self.num_nodes()) {
            return Err(SgpError::Index(format!(
                "node id {bad} out of range for {} nodes",
                self.num_nodes()
            )));
        }
        Ok(())
    }

    /// Inference forward pass without dropout: `B × H × d_x`.
    pub fn forward(&self, z: ArrayView2<F>, nodes: &[usize]) -> Result<Array3<F>> {
        Ok(self.forward_train::<ChaCha8Rng>(z, nodes, None)?.0)
    }

    /// Forward pass that keeps what the backward pass needs. Dropout masks
    /// are drawn from `rng` when one is given and the rate is positive.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        z: ArrayView2<F>,
        nodes: &[usize],
        mut rng: Option<&mut R>,
    ) -> Result<(Array3<F>, ForwardCache<F>)> {
        self.check_batch(&z, nodes)?;
        let b = nodes.len();
        let first_pre = self.first.preactivations(z)?;
        let act = self.first.activation();
        let d_g = self.first.output_width();
        let d_v = self.attrs.static_width();

        let mut a = Array2::zeros((b, d_g + self.attrs.width()));
        Zip::from(a.slice_mut(s![.., ..d_g]))
            .and(&first_pre)
            .for_each(|o, &p| *o = act.apply(p));
        for (r, &node) in nodes.iter().enumerate() {
            a.slice_mut(s![r, d_g..d_g + d_v]).assign(&self.attrs.static_attrs.row(node));
            a.slice_mut(s![r, d_g + d_v..]).assign(&self.attrs.pos_enc.row(node));
        }

        let keep = 1.0 - self.dropout;
        let scale = F::from_f64_lossy(1.0 / keep);
        let mut layers = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let pre = a.dot(&layer.weight) + &layer.bias;
            let mut h = pre.mapv(silu);
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                        if r.random::<f64>() < keep {
                            scale
                        } else {
                            F::zero()
                        }
                    });
                    h *= &m;
                    Some(m)
                }
                _ => None,
            };
            let next = match layer.gate {
                Some(alpha) => &a + &(&h * alpha),
                None => h.clone(),
            };
            layers.push(LayerCache {
                input: a,
                pre,
                mask,
                out: h,
            });
            a = next;
        }
        let y = a.dot(&self.output.weight) + &self.output.bias;
        let y = y
            .into_shape_with_order((b, self.horizon, self.channels))
            .expect("output width is horizon × channels");
        let cache = ForwardCache {
            decoder_id: self.id,
            generation: self.generation,
            z: z.to_owned(),
            nodes: nodes.to_vec(),
            first_pre,
            layers,
            last: a,
        };
        Ok((y, cache))
    }

    /// Reverse-mode gradients of `Σ upstream ⊙ forward(…)` for the pass recorded in `cache`.
    pub fn backward(&self, cache: ForwardCache<F>, upstream: ArrayView3<F>) -> Result<GradientSet<F>> {
        if cache.decoder_id != self.id || cache.generation != self.generation {
            return Err(SgpError::Usage(
                "forward cache belongs to a different decoder or to parameters that have since changed".into(),
            ));
        }
        let b = cache.nodes.len();
        if upstream.dim() != (b, self.horizon, self.channels) {
            return Err(SgpError::Usage(format!(
                "upstream shape {:?} does not match forward output ({b}, {}, {})",
                upstream.dim(),
                self.horizon,
                self.channels
            )));
        }
        let g = upstream
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b, self.horizon * self.channels))
            .expect("contiguous");

        let d_out_w = cache.last.t().dot(&g);
        let d_out_b = g.sum_axis(Axis(0));
        let mut da = g.dot(&self.output.weight.t());

        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(cache.layers).rev() {
            let (mut d_pre, d_gate) = match layer.gate {
                Some(alpha) => (&da * alpha, Some((&da * &lc.out).sum())),
                None => (da.clone(), None),
            };
            if let Some(m) = &lc.mask {
                d_pre *= m;
            }
            Zip::from(&mut d_pre).and(&lc.pre).for_each(|d, &p| *d *= silu_grad(p));
            let d_w = lc.input.t().dot(&d_pre);
            let d_b = d_pre.sum_axis(Axis(0));
            let back = d_pre.dot(&layer.weight.t());
            da = if d_gate.is_some() { da + back } else { back };
            hidden_grads.push((d_w, d_b, d_gate));
        }
        hidden_grads.reverse();

        let d_g = self.first.output_width();
        let d_v = self.attrs.static_width();
        let mut dense: Vec<ArrayD<F>> = self
            .first
            .weight_grads(cache.z.view(), &cache.first_pre, da.slice(s![.., ..d_g]))
            .into_iter()
            .map(standard)
            .collect();
        for (d_w, d_b, d_gate) in hidden_grads {
            dense.push(standard(d_w));
            dense.push(d_b.into_dyn());
            if let Some(v) = d_gate {
                dense.push(ArrayD::from_elem(IxDyn(&[]), v));
            }
        }
        dense.push(standard(d_out_w));
        dense.push(d_out_b.into_dyn());

        let d_p = self.attrs.pos_enc_width();
        let mut pos_enc: BTreeMap<usize, Array1<F>> = BTreeMap::new();
        if d_p > 0 {
            for (r, &node) in cache.nodes.iter().enumerate() {
                let row = pos_enc.entry(node).or_insert_with(|| Array1::zeros(d_p));
                *row += &da.slice(s![r, d_g + d_v..]);
            }
        }
        Ok(GradientSet { dense, pos_enc })
    }
}

fn standard<F: Real>(a: Array2<F>) -> ArrayD<F> {
    if a.is_standard_layout() {
        a.into_dyn()
    } else {
        a.as_standard_layout().into_owned().into_dyn()
    }
}

fn push_dense<'a, F: Real>(out: &mut Vec<TensorRef<'a, F>>, prefix: &str, layer: &'a DenseLayer<F>) {
    out.push(TensorRef {
        name: format!("{prefix}.weight"),
        shape: layer.weight.shape().to_vec(),
        data: layer.weight.as_slice().expect("standard layout"),
    });
    out.push(TensorRef {
        name: format!("{prefix}.bias"),
        shape: layer.bias.shape().to_vec(),
        data: layer.bias.as_slice().expect("standard layout"),
    });
    if let Some(g) = layer.gate.as_ref() {
        out.push(TensorRef {
            name: format!("{prefix}.gate"),
            shape: vec![],
            data: std::slice::from_ref(g),
        });
    }
}

fn push_dense_mut<'a, F: Real>(out: &mut Vec<TensorMut<'a, F>>, prefix: &str, layer: &'a mut DenseLayer<F>) {
    out.push(TensorMut {
        name: format!("{prefix}.weight"),
        shape: layer.weight.shape().to_vec(),
        data: layer.weight.as_slice_mut().expect("standard layout"),
    });
    out.push(TensorMut {
        name: format!("{prefix}.bias"),
        shape: layer.bias.shape().to_vec(),
        data: layer.bias.as_slice_mut().expect("standard layout"),
    });
    if let Some(g) = layer.gate.as_mut() {
        out.push(TensorMut {
            name: format!("{prefix}.gate"),
            shape: vec![],
            data: std::slice::from_mut(g),
        });
    }
}
