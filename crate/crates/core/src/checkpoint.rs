//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "TCUR"
//! 4       4         u32 format version (1)
//! 8       1         u8 payload kind: 0 raw_tensor, 1 tcur_factors, 2 adapter
//! 9       3         reserved, zero
//! 12      4         u32 rank (0 for raw_tensor)
//! 16      4         u32 layout descriptor length L
//! 20      L         layout descriptor, UTF-8
//! ..      4         u32 tensor count T
//! ..      24*T      per tensor: u64 n1, u64 n2, u64 n3
//! ..      16*rank   tcur_factors only: u64 row indices I, then u64 column indices J
//! ..      8*sum     tensor data as f64, tensors in order, each slice-major
//! end-4   4         u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Tensor order: raw_tensor `[W]`; tcur_factors `[C, U, R]`;
//! adapter `[base, C, R, core]`.

use std::fs;
use std::path::Path;

use crate::adapter::Adapter;
use crate::cur::{IndexSet, TcurFactors};
use crate::error::{Result, TcurError};
use crate::tensor::{Dims, Tensor3};

pub const MAGIC: [u8; 4] = *b"TCUR";
pub const FORMAT_VERSION: u32 = 1;
/// Storage order of every tensor in the file.
pub const TENSOR_LAYOUT: &str = "frontal-slice-major;row-major";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    RawTensor = 0,
    TcurFactors = 1,
    Adapter = 2,
}

impl PayloadKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::RawTensor),
            1 => Ok(Self::TcurFactors),
            2 => Ok(Self::Adapter),
            other => Err(corrupt(format!("unknown payload kind {other}"))),
        }
    }

    fn tensor_count(self) -> usize {
        match self {
            Self::RawTensor => 1,
            Self::TcurFactors => 3,
            Self::Adapter => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RawTensor => "raw_tensor",
            Self::TcurFactors => "tcur_factors",
            Self::Adapter => "adapter",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    RawTensor(Tensor3),
    TcurFactors(TcurFactors),
    Adapter(Adapter),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::RawTensor(_) => PayloadKind::RawTensor,
            Payload::TcurFactors(_) => PayloadKind::TcurFactors,
            Payload::Adapter(_) => PayloadKind::Adapter,
        }
    }

    fn rank(&self) -> usize {
        match self {
            Payload::RawTensor(_) => 0,
            Payload::TcurFactors(f) => f.rank(),
            Payload::Adapter(a) => a.rank(),
        }
    }

    fn tensors(&self) -> Vec<&Tensor3> {
        match self {
            Payload::RawTensor(t) => vec![t],
            Payload::TcurFactors(f) => vec![f.column_slab(), f.intersection(), f.row_slab()],
            Payload::Adapter(a) => vec![a.base(), a.column_slab(), a.row_slab(), a.core()],
        }
    }
}

/// A payload plus the layout descriptor stored with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Describes how slices are ordered, e.g. the stacking layout of an
    /// adapter's base tensor.
    pub layout: String,
    pub payload: Payload,
}

impl Checkpoint {
    pub fn new(payload: Payload) -> Self {
        Self {
            layout: TENSOR_LAYOUT.to_string(),
            payload,
        }
    }

    pub fn with_layout(payload: Payload, layout: impl Into<String>) -> Self {
        Self {
            layout: layout.into(),
            payload,
        }
    }
}

fn corrupt(msg: impl Into<String>) -> TcurError {
    TcurError::CorruptCheckpoint(msg.into())
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| TcurError::InvalidArgument(format!("{what} too large: {n}")))
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = ckpt.payload.tensors();
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(64 + ckpt.layout.len() + 24 * tensors.len() + 8 * total);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(ckpt.payload.kind() as u8);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&u32_len(ckpt.payload.rank(), "rank")?.to_le_bytes());
    out.extend_from_slice(&u32_len(ckpt.layout.len(), "layout descriptor")?.to_le_bytes());
    out.extend_from_slice(ckpt.layout.as_bytes());
    out.extend_from_slice(&u32_len(tensors.len(), "tensor count")?.to_le_bytes());
    for t in &tensors {
        let (n1, n2, n3) = t.dims();
        for n in [n1, n2, n3] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
    }
    if let Payload::TcurFactors(f) = &ckpt.payload {
        for &i in f.rows().indices().iter().chain(f.cols().indices()) {
            out.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    for t in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("dimension does not fit in usize"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(TcurError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { buf: body, pos: 8 };
    let kind = PayloadKind::from_byte(r.take(1)?[0])?;
    if r.take(3)? != [0, 0, 0] {
        return Err(corrupt("reserved bytes are not zero"));
    }
    let rank = r.u32()? as usize;
    let layout_len = r.u32()? as usize;
    let layout = std::str::from_utf8(r.take(layout_len)?)
        .map_err(|_| corrupt("layout descriptor is not UTF-8"))?
        .to_string();
    let count = r.u32()? as usize;
    if count != kind.tensor_count() {
        return Err(corrupt(format!(
            "{} payload needs {} tensors, header declares {count}",
            kind.name(),
            kind.tensor_count()
        )));
    }
    let mut dims: Vec<Dims> = Vec::with_capacity(count);
    for _ in 0..count {
        let d = (r.usize()?, r.usize()?, r.usize()?);
        if d.0 == 0 || d.1 == 0 || d.2 == 0 {
            return Err(corrupt(format!("zero dimension in {d:?}")));
        }
        dims.push(d);
    }
    let (rows, cols) = if kind == PayloadKind::TcurFactors {
        let rows = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let cols = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        (rows, cols)
    } else {
        (Vec::new(), Vec::new())
    };

    let remaining = body.len() - r.pos;
    let expected = dims
        .iter()
        .try_fold(0usize, |acc, &(a, b, c)| {
            a.checked_mul(b)?.checked_mul(c)?.checked_mul(8)?.checked_add(acc)
        })
        .ok_or_else(|| corrupt("declared dimensions overflow"))?;
    if remaining != expected {
        return Err(corrupt(format!(
            "declared dims need {expected} payload bytes, found {remaining}"
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for &d in &dims {
        let raw = r.take(d.0 * d.1 * d.2 * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor3::from_vec(d, data).map_err(|e| corrupt(e.to_string()))?);
    }

    let bad = |e: TcurError| corrupt(e.to_string());
    let mut it = tensors.into_iter();
    let payload = match kind {
        PayloadKind::RawTensor => {
            if rank != 0 {
                return Err(corrupt("raw tensor declares a nonzero rank"));
            }
            Payload::RawTensor(it.next().unwrap())
        }
        PayloadKind::TcurFactors => {
            let (c, u, rr) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            let rows = IndexSet::new(rows, c.dims().0).map_err(bad)?;
            let cols = IndexSet::new(cols, rr.dims().1).map_err(bad)?;
            Payload::TcurFactors(TcurFactors::from_parts(c, u, rr, rows, cols).map_err(bad)?)
        }
        PayloadKind::Adapter => {
            let (base, c, rr, core) = (
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            );
            let a = Adapter::from_parts(base, c, rr, core).map_err(bad)?;
            if a.rank() != rank {
                return Err(corrupt(format!("header rank {rank} disagrees with core rank {}", a.rank())));
            }
            Payload::Adapter(a)
        }
    };
    if payload.rank() != rank {
        return Err(corrupt(format!("header rank {rank} disagrees with payload")));
    }
    Ok(Checkpoint { layout, payload })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
