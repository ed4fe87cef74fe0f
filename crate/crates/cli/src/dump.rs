//! `KVD1` cache dumps.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "KVD1" | version u16 | l u32 | d u32 | dtype u16 | query_count u32
//! K (l × d) | V (l × d) | queries (query_count × d)
//! ```
//!
//! `dtype` 0 stores IEEE half values, 1 stores `f32`. Values are widened to
//! `f64` on load, which is exact, so load → save reproduces the input bytes.

use fier_core::harness::Instance;
use fier_core::{KeyCache, QueryVector, ValueCache};
use half::f16;

use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"KVD1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F16,
    F32,
}

impl Dtype {
    pub fn code(self) -> u16 {
        match self {
            Dtype::F16 => 0,
            Dtype::F32 => 1,
        }
    }

    pub fn from_code(code: u16) -> Result<Self, FormatError> {
        match code {
            0 => Ok(Dtype::F16),
            1 => Ok(Dtype::F32),
            other => Err(FormatError::BadDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
        }
    }

    /// Nearest representable value; `None` on overflow.
    pub fn round(self, v: f64) -> Option<f64> {
        let r = match self {
            Dtype::F16 => f16::from_f64(v).to_f64(),
            Dtype::F32 => v as f32 as f64,
        };
        r.is_finite().then_some(r)
    }
}

/// A decoded dump: the cache of one head plus its decode-step queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheDump {
    pub dtype: Dtype,
    pub instance: Instance,
}

impl CacheDump {
    /// Rounds every value of `instance` to `dtype`.
    pub fn from_instance(instance: &Instance, dtype: Dtype) -> Result<Self, FormatError> {
        let (len, dim) = (instance.len(), instance.dim());
        let round = |what: &'static str, values: &[f64]| -> Result<Vec<f64>, FormatError> {
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| dtype.round(v).ok_or(FormatError::NonFinite { what, index: i }))
                .collect()
        };
        let keys = KeyCache::new(len, dim, round("key", instance.keys.as_slice())?)?;
        let values = ValueCache::new(len, dim, round("value", instance.values.as_slice())?)?;
        let queries = instance
            .queries
            .iter()
            .map(|q| Ok(QueryVector::new(round("query", q.as_slice())?)?))
            .collect::<Result<Vec<_>, FormatError>>()?;
        let mut rounded = Instance::new(keys, values, queries)?;
        rounded.spikes = instance.spikes.clone();
        Ok(Self { dtype, instance: rounded })
    }

    pub fn payload_len(len: usize, dim: usize, queries: usize, dtype: Dtype) -> u64 {
        (2 * len as u64 * dim as u64 + queries as u64 * dim as u64) * dtype.width() as u64
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let inst = &self.instance;
        let (len, dim, nq) = (inst.len(), inst.dim(), inst.queries.len());
        let mut out = Vec::with_capacity(HEADER_LEN + Self::payload_len(len, dim, nq, self.dtype) as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&to_u32("l", len)?.to_le_bytes());
        out.extend_from_slice(&to_u32("d", dim)?.to_le_bytes());
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        out.extend_from_slice(&to_u32("query_count", nq)?.to_le_bytes());

        let mut put = |values: &[f64]| -> Result<(), FormatError> {
            for &v in values {
                if self.dtype.round(v) != Some(v) {
                    return Err(FormatError::Unrepresentable("a cache value"));
                }
                match self.dtype {
                    Dtype::F16 => out.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
            Ok(())
        };
        put(inst.keys.as_slice())?;
        put(inst.values.as_slice())?;
        for q in &inst.queries {
            put(q.as_slice())?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::TruncatedHeader { what: "cache dump", actual: bytes.len(), needed: HEADER_LEN });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(FormatError::BadMagic { expected: "KVD1", found: magic });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(FormatError::BadVersion(version));
        }
        let len = read_u32(bytes, 6) as usize;
        let dim = read_u32(bytes, 10) as usize;
        let dtype = Dtype::from_code(u16::from_le_bytes([bytes[14], bytes[15]]))?;
        let nq = read_u32(bytes, 16) as usize;
        for (field, v) in [("l", len), ("d", dim), ("query_count", nq)] {
            if v == 0 {
                return Err(FormatError::ZeroField(field));
            }
        }
        let expected = Self::payload_len(len, dim, nq, dtype);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != expected {
            return Err(FormatError::PayloadLength { expected, actual: payload.len() as u64 });
        }

        let mut values: Vec<f64> = match dtype {
            Dtype::F16 => payload.chunks_exact(2).map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64()).collect(),
            Dtype::F32 => payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { what: "payload", index: i });
        }
        let tail = values.split_off(2 * len * dim);
        let v_part = values.split_off(len * dim);
        let keys = KeyCache::new(len, dim, values)?;
        let vals = ValueCache::new(len, dim, v_part)?;
        let queries = tail.chunks_exact(dim).map(|q| QueryVector::new(q.to_vec())).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dtype, instance: Instance::new(keys, vals, queries)? })
    }
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub(crate) fn to_u32(field: &'static str, value: usize) -> Result<u32, FormatError> {
    u32::try_from(value).map_err(|_| FormatError::FieldOverflow { field, value })
}
