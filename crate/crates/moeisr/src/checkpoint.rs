//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MOEI" | u32 version | u32 feat_dim | u32 n_res_blocks
//! | u32 mapper_layers | u32 mapper_hidden | u32 J
//! | per expert: u32 depth, u32 hidden, u32 in_dim, u32 out_dim
//! | u64 seed
//! | per parameter (fixed visit order):
//!     u32 name_len, name bytes, u32 rank, u64 extents..., f32 data...
//! ```
//!
//! Round-trips are bit-exact: the f32 payload is copied verbatim.

use crate::error::{Error, Result};
use crate::model::{EncoderSpec, MapperSpec, ModelParams, ModelSpecs};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MOEI";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    let bytes = encode(params);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let s = &params.specs;
    put_u32(&mut out, s.encoder.feat_dim as u32);
    put_u32(&mut out, s.encoder.n_res_blocks as u32);
    put_u32(&mut out, s.mapper.n_layers as u32);
    put_u32(&mut out, s.mapper.hidden_channels as u32);
    put_u32(&mut out, s.j() as u32);
    for e in &s.experts {
        put_u32(&mut out, e.depth as u32);
        put_u32(&mut out, e.hidden as u32);
        put_u32(&mut out, e.in_dim as u32);
        put_u32(&mut out, e.out_dim as u32);
    }
    out.extend_from_slice(&params.seed.to_le_bytes());

    params.visit(|name, tensor| {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.shape().len() as u32);
        for &ext in tensor.shape() {
            out.extend_from_slice(&(ext as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::parse(0, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let feat_dim = r.u32()? as usize;
    let n_res_blocks = r.u32()? as usize;
    let mapper_layers = r.u32()? as usize;
    let mapper_hidden = r.u32()? as usize;
    let j = r.u32()? as usize;
    let mut depths = Vec::with_capacity(j);
    let mut hidden = 0usize;
    for _ in 0..j {
        depths.push(r.u32()? as usize);
        hidden = r.u32()? as usize;
        let _in_dim = r.u32()?;
        let _out_dim = r.u32()?;
    }
    let seed = r.u64()?;

    let specs = ModelSpecs::new(
        EncoderSpec {
            feat_dim,
            n_res_blocks,
        },
        MapperSpec {
            n_layers: mapper_layers,
            hidden_channels: mapper_hidden,
        },
        hidden,
        &depths,
    )?;

    // Shapes come from the specs; the stream must agree with them.
    let mut params: ModelParams<f32> = ModelParams::init(specs, seed);
    let mut failure: Option<Error> = None;
    params.visit_mut(|name, tensor| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = read_named_tensor(&mut r, name, tensor) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after last parameter"));
    }
    Ok(params)
}

fn read_named_tensor(r: &mut Reader, expect_name: &str, tensor: &mut Tensor<f32>) -> Result<()> {
    let name_len = r.u32()? as usize;
    let start = r.pos;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::parse(start, "parameter name not utf-8"))?
        .to_string();
    if name != expect_name {
        return Err(Error::parse(
            start,
            format!("parameter order mismatch: got {name:?}, want {expect_name:?}"),
        ));
    }
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u64()? as usize);
    }
    if shape != tensor.shape() {
        return Err(Error::parse(
            r.pos,
            format!(
                "shape mismatch for {name}: stored {:?}, specs imply {:?}",
                shape,
                tensor.shape()
            ),
        ));
    }
    for v in tensor.data_mut() {
        let raw = r.take(4)?;
        *v = f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
    }
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.pos, "unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

/// Serialize/deserialize via an arbitrary reader/writer (kept for parity
/// with file IO in tests).
pub fn write_to(w: &mut impl Write, params: &ModelParams<f32>) -> std::io::Result<()> {
    w.write_all(&encode(params))
}

pub fn read_from(r: &mut impl Read) -> Result<ModelParams<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderSpec, MapperSpec, ModelSpecs};

    fn specs() -> ModelSpecs {
        ModelSpecs::new(
            EncoderSpec {
                feat_dim: 6,
                n_res_blocks: 2,
            },
            MapperSpec {
                n_layers: 3,
                hidden_channels: 6,
            },
            8,
            &[2, 3, 4, 5],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let params: ModelParams<f32> = ModelParams::init(specs(), 1234);
        let bytes = encode(&params);
        let restored = decode(&bytes).unwrap();
        assert_eq!(params, restored);
        assert_eq!(bytes, encode(&restored));
    }

    #[test]
    fn truncation_detected() {
        let params: ModelParams<f32> = ModelParams::init(specs(), 1);
        let bytes = encode(&params);
        assert!(decode(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn bad_magic_detected() {
        let params: ModelParams<f32> = ModelParams::init(specs(), 1);
        let mut bytes = encode(&params);
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
