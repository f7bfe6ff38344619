use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use ndarray::{Array3, ArrayViewMut2};

use super::EmbeddingLayout;
use crate::error::{Result, SgpError};
use crate::fingerprint::Fingerprint;

pub const STORE_MAGIC: &[u8; 4] = b"SGPE";
pub const STORE_VERSION: u32 = 1;
pub const STORE_HEADER_LEN: usize = 128;

/// Fixed 128-byte little-endian header of an embedding store.
///
/// | offset | field |
/// |-------:|-------|
/// | 0  | magic `SGPE` |
/// | 4  | version `u32` |
/// | 8  | `N` `u64` |
/// | 16 | `T` `u64` |
/// | 24 | `d` `u64` |
/// | 32 | `K` `u32` |
/// | 36 | `L` `u32` |
/// | 40 | flags `u32` (bit 0 bidirectional, bit 1 global) |
/// | 44 | washout `u64` |
/// | 52 | fingerprint, 32 bytes |
/// | 84 | zero padding |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHeader {
    pub num_nodes: u64,
    pub num_steps: u64,
    pub width: u64,
    pub spatial_orders: u32,
    pub num_layers: u32,
    pub flags: u32,
    pub washout: u64,
    pub fingerprint: Fingerprint,
}

impl StoreHeader {
    pub fn for_layout(
        layout: &EmbeddingLayout,
        num_nodes: usize,
        num_steps: usize,
        washout: usize,
        fingerprint: Fingerprint,
    ) -> Self {
        StoreHeader {
            num_nodes: num_nodes as u64,
            num_steps: num_steps as u64,
            width: layout.total_width() as u64,
            spatial_orders: layout.spatial_orders as u32,
            num_layers: layout.num_layers() as u32,
            flags: layout.flags(),
            washout: washout as u64,
            fingerprint,
        }
    }

    pub fn to_bytes(&self) -> [u8; STORE_HEADER_LEN] {
        let mut b = [0u8; STORE_HEADER_LEN];
        b[0..4].copy_from_slice(STORE_MAGIC);
        b[4..8].copy_from_slice(&STORE_VERSION.to_le_bytes());
        b[8..16].copy_from_slice(&self.num_nodes.to_le_bytes());
        b[16..24].copy_from_slice(&self.num_steps.to_le_bytes());
        b[24..32].copy_from_slice(&self.width.to_le_bytes());
        b[32..36].copy_from_slice(&self.spatial_orders.to_le_bytes());
        b[36..40].copy_from_slice(&self.num_layers.to_le_bytes());
        b[40..44].copy_from_slice(&self.flags.to_le_bytes());
        b[44..52].copy_from_slice(&self.washout.to_le_bytes());
        b[52..84].copy_from_slice(&self.fingerprint.0);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < STORE_HEADER_LEN {
            return Err(SgpError::Format("embedding store shorter than its header".into()));
        }
        if &b[0..4] != STORE_MAGIC {
            return Err(SgpError::Format("not an embedding store (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != STORE_VERSION {
            return Err(SgpError::Format(format!("unsupported store version {version}")));
        }
        let mut fp = [0u8; 32];
        fp.copy_from_slice(&b[52..84]);
        Ok(StoreHeader {
            num_nodes: u64_at(8),
            num_steps: u64_at(16),
            width: u64_at(24),
            spatial_orders: u32_at(32),
            num_layers: u32_at(36),
            flags: u32_at(40),
            washout: u64_at(44),
            fingerprint: Fingerprint(fp),
        })
    }

    pub fn bidirectional(&self) -> bool {
        self.flags & 1 != 0
    }

    pub fn include_global(&self) -> bool {
        self.flags & 2 != 0
    }

    fn data_len(&self) -> Option<u64> {
        self.num_steps
            .checked_mul(self.num_nodes)?
            .checked_mul(self.width)?
            .checked_mul(4)
    }
}

/// Sequential writer: rows must arrive time-major, then node-major.
///
/// Data goes to `<path>.partial` and is renamed into place by [`StoreWriter::finish`].
pub struct StoreWriter {
    header: StoreHeader,
    path: PathBuf,
    tmp_path: PathBuf,
    out: BufWriter<File>,
    written: u64,
}

impl StoreWriter {
    pub fn create(path: &Path, header: StoreHeader) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp_path = PathBuf::from(tmp);
        let mut out = BufWriter::with_capacity(1 << 20, File::create(&tmp_path)?);
        out.write_all(&header.to_bytes())?;
        Ok(StoreWriter {
            header,
            path: path.to_path_buf(),
            tmp_path,
            out,
            written: 0,
        })
    }

    pub fn write(&mut self, values: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.written += values.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<EmbeddingStore> {
        let expected = self.header.num_steps * self.header.num_nodes * self.header.width;
        if self.written != expected {
            return Err(SgpError::Shape(format!(
                "store writer received {} values, header promises {expected}",
                self.written
            )));
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        drop(self.out);
        fs::rename(&self.tmp_path, &self.path)?;
        EmbeddingStore::open(&self.path)
    }
}

/// Read-only, memory-mapped `T×N×d` embedding tensor.
#[derive(Debug)]
pub struct EmbeddingStore {
    path: PathBuf,
    header: StoreHeader,
    mmap: Mmap,
}

impl EmbeddingStore {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| SgpError::MissingArtifact(format!("embedding store {}: {e}", path.display())))?;
        // SAFETY: the store is written once and renamed into place; readers never mutate it.
        let mmap = unsafe { Mmap::map(&file)? };
        let header = StoreHeader::from_bytes(&mmap)?;
        let expected = header
            .data_len()
            .and_then(|d| d.checked_add(STORE_HEADER_LEN as u64))
            .ok_or_else(|| SgpError::Format("store dimensions overflow".into()))?;
        if mmap.len() as u64 != expected {
            return Err(SgpError::Format(format!(
                "store is {} bytes, header implies {expected}",
                mmap.len()
            )));
        }
        Ok(EmbeddingStore {
            path: path.to_path_buf(),
            header,
            mmap,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn num_nodes(&self) -> usize {
        self.header.num_nodes as usize
    }

    pub fn num_steps(&self) -> usize {
        self.header.num_steps as usize
    }

    pub fn width(&self) -> usize {
        self.header.width as usize
    }

    pub fn washout(&self) -> usize {
        self.header.washout as usize
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.header.fingerprint
    }

    /// Checks the header against a layout descriptor.
    pub fn check_layout(&self, layout: &EmbeddingLayout) -> Result<()> {
        let h = &self.header;
        if h.width as usize != layout.total_width()
            || h.spatial_orders as usize != layout.spatial_orders
            || h.num_layers as usize != layout.num_layers()
            || h.flags != layout.flags()
        {
            return Err(SgpError::Shape(format!(
                "store layout (d={}, K={}, L={}, flags={}) differs from decoder layout (d={}, K={}, L={}, flags={})",
                h.width,
                h.spatial_orders,
                h.num_layers,
                h.flags,
                layout.total_width(),
                layout.spatial_orders,
                layout.num_layers(),
                layout.flags()
            )));
        }
        Ok(())
    }

    fn row_bytes(&self, t: usize, i: usize) -> Result<&[u8]> {
        if t >= self.num_steps() || i >= self.num_nodes() {
            return Err(SgpError::Index(format!(
                "row ({t}, {i}) outside store of {}×{}",
                self.num_steps(),
                self.num_nodes()
            )));
        }
        let d = self.width();
        let start = STORE_HEADER_LEN + ((t * self.num_nodes() + i) * d) * 4;
        Ok(&self.mmap[start..start + d * 4])
    }

    /// Copies row `(t, i)` into `out` (length `d`).
    pub fn read_row(&self, t: usize, i: usize, out: &mut [f32]) -> Result<()> {
        let bytes = self.row_bytes(t, i)?;
        if out.len() != self.width() {
            return Err(SgpError::Shape(format!("row buffer {} vs width {}", out.len(), self.width())));
        }
        for (o, chunk) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Ok(())
    }

    pub fn row(&self, t: usize, i: usize) -> Result<Vec<f32>> {
        let mut out = vec![0f32; self.width()];
        self.read_row(t, i, &mut out)?;
        Ok(out)
    }

    /// Gathers rows `(t, i)` into the rows of `out` (`B × d`).
    pub fn gather(&self, indices: &[(usize, usize)], mut out: ArrayViewMut2<f32>) -> Result<()> {
        if out.nrows() != indices.len() || out.ncols() != self.width() {
            return Err(SgpError::Shape("gather buffer does not match batch".into()));
        }
        for (&(t, i), mut dst) in indices.iter().zip(out.rows_mut()) {
            let bytes = self.row_bytes(t, i)?;
            for (o, chunk) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
                *o = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        Ok(())
    }

    /// Loads the whole tensor into memory.
    pub fn to_array(&self) -> Array3<f32> {
        let data: Vec<f32> = self.mmap[STORE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Array3::from_shape_vec((self.num_steps(), self.num_nodes(), self.width()), data)
            .expect("length checked on open")
    }
}
