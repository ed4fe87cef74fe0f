//! `FIER` packed key indexes.
//!
//! ```text
//! magic "FIER" | version u16 | l u32 | d u32 | g u32
//! (s, z) as half, channel-major: d × ceil(l/g) pairs
//! bit plane: l rows of ceil(d/8) bytes, channel c in bit c % 8 of byte c / 8
//! ```

use fier_core::{GroupSpec, LoadRatio, PackedKeys, ParamPrecision};
use half::f16;

use crate::dump::{read_u32, to_u32};
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"FIER";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

/// Serializes an index built with [`ParamPrecision::F16`].
pub fn encode(pk: &PackedKeys) -> Result<Vec<u8>, FormatError> {
    if pk.precision() != ParamPrecision::F16 {
        return Err(FormatError::Unrepresentable("an index with f64 group parameters"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + pk.payload_bytes() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32("l", pk.len())?.to_le_bytes());
    out.extend_from_slice(&to_u32("d", pk.dim())?.to_le_bytes());
    out.extend_from_slice(&to_u32("g", pk.group_size())?.to_le_bytes());
    for c in 0..pk.dim() {
        for j in 0..pk.groups_per_channel() {
            out.extend_from_slice(&f16::from_f64(pk.scale(c, j)).to_le_bytes());
            out.extend_from_slice(&f16::from_f64(pk.zero(c, j)).to_le_bytes());
        }
    }
    for t in 0..pk.len() {
        pk.write_row_bytes(t, &mut out);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<PackedKeys, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::TruncatedHeader { what: "packed index", actual: bytes.len(), needed: HEADER_LEN });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(FormatError::BadMagic { expected: "FIER", found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let len = read_u32(bytes, 6) as usize;
    let dim = read_u32(bytes, 10) as usize;
    let g = read_u32(bytes, 14) as usize;
    for (field, v) in [("l", len), ("d", dim), ("g", g)] {
        if v == 0 {
            return Err(FormatError::ZeroField(field));
        }
    }
    let groups = len.div_ceil(g);
    let table = dim as u64 * groups as u64 * 4;
    let plane = len as u64 * dim.div_ceil(8) as u64;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != table + plane {
        return Err(FormatError::PayloadLength { expected: table + plane, actual: payload.len() as u64 });
    }
    let (params, plane) = payload.split_at(table as usize);
    let mut scales = Vec::with_capacity(dim * groups);
    let mut zeros = Vec::with_capacity(dim * groups);
    for p in params.chunks_exact(4) {
        scales.push(f16::from_le_bytes([p[0], p[1]]).to_f64());
        zeros.push(f16::from_le_bytes([p[2], p[3]]).to_f64());
    }
    Ok(PackedKeys::from_parts(len, dim, GroupSpec::new(g)?, ParamPrecision::F16, scales, zeros, plane)?)
}

/// Load ratio from the byte length of an encoded index, header excluded.
pub fn file_load_ratio(bytes: &[u8], pk: &PackedKeys) -> LoadRatio {
    let payload = (bytes.len() - HEADER_LEN) as u64;
    LoadRatio::from_bytes(payload, pk.len() as u64 * pk.dim() as u64 * 2, false)
}
