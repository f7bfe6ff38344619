//! Decoder checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "SGPC" u32 version
//! layout   u32 blocks, u64 widths…, u32 K, u32 flags
//! decoder  u32 horizon, u32 channels, f64 dropout, u8 first-layer activation
//! stats    u32 channels, f64 mean…, f64 std…
//! metadata u32 bytes, UTF-8 `key=value` lines
//! tensors  u32 count, then per tensor: u32 name bytes, name, u32 rank, u64 dims…, f32 data…
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::ChannelStats;
use crate::decoder::{Activation, Decoder, DenseLayer, GroupedLinear, NodeAttributes};
use crate::encoder::EmbeddingLayout;
use crate::error::{Result, SgpError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGPC";
pub const CHECKPOINT_VERSION: u32 = 1;

const STATIC_ATTRS: &str = "node.static";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub decoder: Decoder<f32>,
    pub stats: ChannelStats,
    pub metadata: Vec<(String, String)>,
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Silu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, shape.len() as u32);
    for d in shape {
        put_u64(buf, *d as u64);
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(path: &Path, decoder: &Decoder<f32>, stats: &ChannelStats, metadata: &[(String, String)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);

    let layout = decoder.layout();
    put_u32(&mut buf, layout.block_widths.len() as u32);
    for w in &layout.block_widths {
        put_u64(&mut buf, *w as u64);
    }
    put_u32(&mut buf, layout.spatial_orders as u32);
    put_u32(&mut buf, layout.flags());

    put_u32(&mut buf, decoder.horizon() as u32);
    put_u32(&mut buf, decoder.channels() as u32);
    buf.extend_from_slice(&decoder.dropout().to_le_bytes());
    buf.push(activation_code(decoder.first_layer().activation()));

    put_u32(&mut buf, stats.mean.len() as u32);
    for v in stats.mean.iter().chain(&stats.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let mut meta = String::new();
    for (k, v) in metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(SgpError::InvalidInput(format!("metadata entry '{k}' cannot be stored")));
        }
        meta.push_str(&format!("{k}={v}\n"));
    }
    put_u32(&mut buf, meta.len() as u32);
    buf.extend_from_slice(meta.as_bytes());

    let tensors = decoder.tensors();
    put_u32(&mut buf, tensors.len() as u32 + 1);
    for t in &tensors {
        put_tensor(&mut buf, &t.name, &t.shape, t.data);
    }
    let statics = decoder.attributes().static_attrs();
    put_tensor(&mut buf, STATIC_ATTRS, statics.shape(), statics.as_slice().expect("standard layout"));

    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SgpError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl RawTensor {
    fn matrix(self, name: &str) -> Result<Array2<f32>> {
        match self.shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.data).expect("length checked on read")),
            _ => Err(SgpError::Format(format!("tensor '{name}' should be a matrix"))),
        }
    }

    fn vector(self, name: &str) -> Result<Array1<f32>> {
        match self.shape[..] {
            [_] => Ok(Array1::from_vec(self.data)),
            _ => Err(SgpError::Format(format!("tensor '{name}' should be a vector"))),
        }
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => SgpError::MissingArtifact(format!("checkpoint {} not found", path.display())),
        _ => SgpError::Io(e),
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(SgpError::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SgpError::Format(format!("unsupported checkpoint version {version}")));
    }

    let blocks = r.len()?;
    let block_widths = (0..blocks).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let spatial_orders = r.u32()? as usize;
    let flags = r.u32()?;
    let layout = EmbeddingLayout {
        block_widths,
        spatial_orders,
        bidirectional: flags & 1 != 0,
        include_global: flags & 2 != 0,
    };

    let horizon = r.len()?;
    let channels = r.len()?;
    let dropout = r.f64()?;
    let activation = match r.u8()? {
        0 => Activation::Silu,
        1 => Activation::Tanh,
        2 => Activation::Identity,
        c => return Err(SgpError::Format(format!("unknown activation code {c}"))),
    };

    let c = r.len()?;
    let mean = (0..c).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let std = (0..c).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;

    let meta_len = r.len()?;
    let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|e| SgpError::Format(e.to_string()))?;
    let metadata = meta
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();

    let mut tensors = BTreeMap::new();
    for _ in 0..r.len()? {
        let name_len = r.len()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| SgpError::Format(e.to_string()))?;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(4).ok_or_else(|| SgpError::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.insert(name, RawTensor { shape, data });
    }
    if r.pos != bytes.len() {
        return Err(SgpError::Format("trailing bytes after checkpoint tensors".into()));
    }

    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| SgpError::Format(format!("checkpoint lacks tensor '{name}'")))
    };
    let mut groups = Vec::new();
    while let Ok(t) = take(&format!("group.{}.weight", groups.len())) {
        groups.push(t.matrix("group weight")?);
    }
    let first = GroupedLinear::from_weights(groups, activation)?;
    let mut hidden = Vec::new();
    while let Ok(w) = take(&format!("hidden.{}.weight", hidden.len())) {
        let l = hidden.len();
        let bias = take(&format!("hidden.{l}.bias"))?.vector("bias")?;
        let gate = take(&format!("hidden.{l}.gate")).ok().map(|g| g.data[0]);
        hidden.push(DenseLayer {
            weight: w.matrix("hidden weight")?,
            bias,
            gate,
        });
    }
    let output = DenseLayer {
        weight: take("output.weight")?.matrix("output.weight")?,
        bias: take("output.bias")?.vector("output.bias")?,
        gate: None,
    };
    let attrs = NodeAttributes::new(
        take(STATIC_ATTRS)?.matrix(STATIC_ATTRS)?,
        take("node.pos_enc")?.matrix("node.pos_enc")?,
    )?;
    if let Some(extra) = tensors.keys().next() {
        return Err(SgpError::Format(format!("unexpected tensor '{extra}' in checkpoint")));
    }
    let decoder = Decoder::from_parts(layout, first, hidden, output, attrs, horizon, channels, dropout)?;
    Ok(Checkpoint {
        decoder,
        stats: ChannelStats { mean, std },
        metadata,
    })
}
