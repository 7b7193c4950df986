//! RTEN raw tensor files.
//!
//! ```text
//! "RTEN"  u32 version (1)  u8 dtype (0 f32, 1 f64, 2 i32, 3 bits)
//! u8 rank  u32 extents[rank]  payload
//! ```
//!
//! Numeric payloads are little-endian in row-major order. Bit tensors have
//! rank 4 (n, h, w, c) and store, per pixel, `ceil(c/128)` blocks of two
//! little-endian `u64` words, least significant bit first; pad lanes are 0.

use std::fs;
use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::bitcore::{BitTensor, ChannelLayout};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum RawData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    Bits(BitTensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: RawData,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: RawData) -> Result<Self> {
        let count: usize = dims.iter().product();
        let ok = match &data {
            RawData::F32(v) => v.len() == count,
            RawData::F64(v) => v.len() == count,
            RawData::I32(v) => v.len() == count,
            RawData::Bits(b) => dims == [b.n(), b.h(), b.w(), b.c()],
        };
        if !ok || dims.len() > 255 {
            return Err(Error::Layout(format!(
                "payload does not match extents {dims:?}"
            )));
        }
        Ok(RawTensor { dims, data })
    }

    pub fn bits(t: BitTensor) -> Self {
        RawTensor {
            dims: vec![t.n(), t.h(), t.w(), t.c()],
            data: RawData::Bits(t),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION as usize)?;
        w.u8(match self.data {
            RawData::F32(_) => 0,
            RawData::F64(_) => 1,
            RawData::I32(_) => 2,
            RawData::Bits(_) => 3,
        });
        w.u8(self.dims.len() as u8);
        for &d in &self.dims {
            w.u32(d)?;
        }
        match &self.data {
            RawData::F32(v) => v
                .iter()
                .for_each(|x| w.buf.extend_from_slice(&x.to_le_bytes())),
            RawData::F64(v) => w.f64s(v),
            RawData::I32(v) => v.iter().for_each(|&x| w.i32(x)),
            RawData::Bits(b) => w.u64s(b.data()),
        }
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return r.fail(0, "bad magic, expected \"RTEN\"");
        }
        let v = r.u32("version")?;
        if v != VERSION {
            return r.fail(4, format!("unsupported version {v}"));
        }
        let dtype = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.usize32("extent"))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::at_offset(10, "extents overflow"))?;
        let at = r.pos();
        let data = match dtype {
            0 => RawData::F32(
                r.take(count.saturating_mul(4), "f32 payload")?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            1 => RawData::F64(r.f64s(count, "f64 payload")?),
            2 => RawData::I32(
                r.take(count.saturating_mul(4), "i32 payload")?
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            3 => {
                if rank != 4 {
                    return r.fail(9, format!("bit tensors need rank 4, found {rank}"));
                }
                let layout = ChannelLayout::single(dims[3]);
                let words = r.u64s(dims[0] * dims[1] * dims[2] * layout.words(), "bit payload")?;
                RawData::Bits(
                    BitTensor::from_words(dims[0], dims[1], dims[2], layout, words)
                        .or_else(|e| r.fail(at, e.to_string()))?,
                )
            }
            d => return r.fail(8, format!("unknown dtype code {d}")),
        };
        r.expect_end()?;
        Ok(RawTensor { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
