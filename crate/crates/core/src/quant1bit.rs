//! Group-wise 1-bit round-to-nearest key quantization.
//!
//! Groups are runs of `g` consecutive tokens within one channel, so every
//! channel carries `ceil(l / g)` `(scale, zero)` pairs and the final group is
//! short when `g` does not divide `l`. For a group with range `[min, max]`:
//!
//! ```text
//! z = (max + min) / 2        s = (max - min) / 2
//! code = +1 if k >= z else -1
//! k~ = code * s + z
//! ```
//!
//! which is the error-minimizing two-level quantizer for the group. Codes are
//! stored as one bit per entry (`1` means `+1`), row-major, 64 channels per
//! word. A zero-scale group stores all-ones codes so its encoding is unique.

use alloc::vec::Vec;

use half::f16;

use crate::error::{Error, Result};
use crate::kvcore::{KeyCache, QueryVector, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpec {
    group_size: usize,
}

impl GroupSpec {
    pub fn new(group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::InvalidParameter("group size must be at least 1"));
        }
        Ok(Self { group_size })
    }

    #[inline]
    pub fn group_size(&self) -> usize {
        self.group_size
    }
}

/// Precision of the in-memory group parameters.
///
/// `F16` rounds every `(s, z)` through IEEE half precision before codes are
/// assigned, so an index decoded from disk is bit-identical to the one built in
/// memory. `F64` keeps the parameters exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamPrecision {
    #[default]
    F64,
    F16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedKeys {
    len: usize,
    dim: usize,
    group_size: usize,
    precision: ParamPrecision,
    groups_per_channel: usize,
    words_per_row: usize,
    /// Channel-major: entry `c * groups_per_channel + j`.
    scales: Vec<f64>,
    zeros: Vec<f64>,
    bits: Vec<u64>,
}

impl PackedKeys {
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    #[inline]
    pub fn precision(&self) -> ParamPrecision {
        self.precision
    }

    #[inline]
    pub fn groups_per_channel(&self) -> usize {
        self.groups_per_channel
    }

    #[inline]
    pub fn scale(&self, channel: usize, group: usize) -> f64 {
        self.scales[channel * self.groups_per_channel + group]
    }

    #[inline]
    pub fn zero(&self, channel: usize, group: usize) -> f64 {
        self.zeros[channel * self.groups_per_channel + group]
    }

    /// `+1` or `-1`.
    #[inline]
    pub fn code(&self, token: usize, channel: usize) -> i8 {
        let word = self.bits[token * self.words_per_row + channel / 64];
        if (word >> (channel % 64)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Token range covered by group `j` of any channel.
    pub fn group_tokens(&self, group: usize) -> core::ops::Range<usize> {
        let start = group * self.group_size;
        start..(start + self.group_size).min(self.len)
    }

    /// Bytes of one serialized bit-plane row (channel `c` is bit `c % 8` of byte `c / 8`).
    #[inline]
    pub fn row_bytes_len(&self) -> usize {
        self.dim.div_ceil(8)
    }

    /// Appends the serialized bit-plane row of `token` to `out`.
    pub fn write_row_bytes(&self, token: usize, out: &mut Vec<u8>) {
        let words = &self.bits[token * self.words_per_row..(token + 1) * self.words_per_row];
        let mut remaining = self.row_bytes_len();
        for w in words {
            let bytes = w.to_le_bytes();
            let take = remaining.min(8);
            out.extend_from_slice(&bytes[..take]);
            remaining -= take;
        }
    }

    /// Serialized payload size (parameter table plus bit plane), header excluded.
    pub fn payload_bytes(&self) -> u64 {
        let params = self.dim as u64 * self.groups_per_channel as u64 * 4;
        let plane = self.len as u64 * self.row_bytes_len() as u64;
        params + plane
    }

    /// Rebuilds an index from stored parts.
    ///
    /// `scales`/`zeros` are channel-major, `plane` holds `len` rows of
    /// [`row_bytes_len`](Self::row_bytes_len) bytes. Padding bits must be zero
    /// and zero-scale groups must carry all-ones codes.
    pub fn from_parts(
        len: usize,
        dim: usize,
        spec: GroupSpec,
        precision: ParamPrecision,
        scales: Vec<f64>,
        zeros: Vec<f64>,
        plane: &[u8],
    ) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::Empty);
        }
        let g = spec.group_size();
        let groups_per_channel = len.div_ceil(g);
        let n_params = dim * groups_per_channel;
        if scales.len() != n_params {
            return Err(Error::DimensionMismatch { expected: n_params, actual: scales.len() });
        }
        if zeros.len() != n_params {
            return Err(Error::DimensionMismatch { expected: n_params, actual: zeros.len() });
        }
        for (i, (&s, &z)) in scales.iter().zip(&zeros).enumerate() {
            if !s.is_finite() || !z.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if s < 0.0 {
                return Err(Error::InvalidParameter("group scale must be non-negative"));
            }
        }
        let row_bytes = dim.div_ceil(8);
        if plane.len() != len * row_bytes {
            return Err(Error::DimensionMismatch { expected: len * row_bytes, actual: plane.len() });
        }
        if !dim.is_multiple_of(8) {
            let pad_mask = !((1u8 << (dim % 8)) - 1);
            if plane.chunks_exact(row_bytes).any(|row| row[row_bytes - 1] & pad_mask != 0) {
                return Err(Error::InvalidParameter("bit-plane padding bits must be zero"));
            }
        }
        let words_per_row = dim.div_ceil(64);
        let mut bits = alloc::vec![0u64; len * words_per_row];
        for (t, row) in plane.chunks_exact(row_bytes).enumerate() {
            for (w, chunk) in row.chunks(8).enumerate() {
                let mut buf = [0u8; 8];
                buf[..chunk.len()].copy_from_slice(chunk);
                bits[t * words_per_row + w] = u64::from_le_bytes(buf);
            }
        }
        let pk = Self {
            len,
            dim,
            group_size: g,
            precision,
            groups_per_channel,
            words_per_row,
            scales,
            zeros,
            bits,
        };
        for c in 0..dim {
            for j in 0..groups_per_channel {
                if pk.scale(c, j) == 0.0 && pk.group_tokens(j).any(|t| pk.code(t, c) != 1) {
                    return Err(Error::NonCanonicalGroup { channel: c, group: j });
                }
            }
        }
        Ok(pk)
    }
}

#[inline]
fn midpoint(max: f64, min: f64) -> f64 {
    let mid = 0.5 * (max + min);
    if mid.is_finite() {
        mid
    } else {
        0.5 * max + 0.5 * min
    }
}

#[inline]
fn half_range(max: f64, min: f64) -> f64 {
    let h = 0.5 * (max - min);
    if h.is_finite() {
        h
    } else {
        0.5 * max - 0.5 * min
    }
}

/// Shrinks `s` by ulps until both levels `z ± s` stay inside `[min, max]`.
#[inline]
fn clamp_levels(z: f64, mut s: f64, min: f64, max: f64) -> f64 {
    while s > 0.0 && (z + s > max || z - s < min) {
        s = s.next_down();
    }
    s
}

fn round_param(v: f64, precision: ParamPrecision) -> Option<f64> {
    match precision {
        ParamPrecision::F64 => Some(v),
        ParamPrecision::F16 => {
            let r = f16::from_f64(v).to_f64();
            r.is_finite().then_some(r)
        }
    }
}

/// Quantizes with exact (`f64`) group parameters.
pub fn quantize(keys: &KeyCache, spec: GroupSpec) -> PackedKeys {
    quantize_with(keys, spec, ParamPrecision::F64).expect("f64 parameters of finite keys are finite")
}

/// Quantizes with the requested parameter precision.
///
/// Fails only for [`ParamPrecision::F16`] when a group parameter exceeds the
/// half-precision range.
pub fn quantize_with(keys: &KeyCache, spec: GroupSpec, precision: ParamPrecision) -> Result<PackedKeys> {
    let (len, dim, g) = (keys.len(), keys.dim(), spec.group_size());
    let groups_per_channel = len.div_ceil(g);
    let words_per_row = dim.div_ceil(64);
    let mut scales = alloc::vec![0.0; dim * groups_per_channel];
    let mut zeros = alloc::vec![0.0; dim * groups_per_channel];
    let mut bits = alloc::vec![0u64; len * words_per_row];

    for c in 0..dim {
        let (word, bit) = (c / 64, 1u64 << (c % 64));
        for j in 0..groups_per_channel {
            let tokens = j * g..((j + 1) * g).min(len);
            let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in tokens.clone() {
                let v = keys.get(t, c);
                min = min.min(v);
                max = max.max(v);
            }
            let (z, s) = if max == min { (max, 0.0) } else { (midpoint(max, min), half_range(max, min)) };
            let s = if precision == ParamPrecision::F64 { clamp_levels(z, s, min, max) } else { s };
            let overflow = Error::HalfOverflow { channel: c, group: j };
            let z = round_param(z, precision).ok_or(overflow.clone())?;
            let s = round_param(s, precision).ok_or(overflow)?;
            scales[c * groups_per_channel + j] = s;
            zeros[c * groups_per_channel + j] = z;
            for t in tokens {
                if s == 0.0 || keys.get(t, c) >= z {
                    bits[t * words_per_row + word] |= bit;
                }
            }
        }
    }
    Ok(PackedKeys { len, dim, group_size: g, precision, groups_per_channel, words_per_row, scales, zeros, bits })
}

/// Materializes `K~ = code * s + z`.
pub fn dequantize(pk: &PackedKeys) -> KeyCache {
    let mut data = Vec::with_capacity(pk.len * pk.dim);
    for t in 0..pk.len {
        let j = t / pk.group_size;
        for c in 0..pk.dim {
            data.push(f64::from(pk.code(t, c)) * pk.scale(c, j) + pk.zero(c, j));
        }
    }
    KeyCache::new(pk.len, pk.dim, data).expect("dequantized keys are finite")
}

/// `q·K~ᵀ` straight from the bit plane.
///
/// Per group `j` the query is folded into `a_c = q_c * s_cj` and a constant
/// offset `Σ_c q_c * z_cj`; each token then adds `±a_c` according to its sign
/// bits, without materializing `K~`.
pub fn approx_scores(q: &QueryVector, pk: &PackedKeys) -> Result<ScoreVector> {
    if q.dim() != pk.dim {
        return Err(Error::DimensionMismatch { expected: pk.dim, actual: q.dim() });
    }
    let q = q.as_slice();
    let mut weights = alloc::vec![0.0f64; pk.dim];
    let mut scores = Vec::with_capacity(pk.len);
    for j in 0..pk.groups_per_channel {
        let mut offset = 0.0;
        for (c, w) in weights.iter_mut().enumerate() {
            *w = q[c] * pk.scale(c, j);
            offset += q[c] * pk.zero(c, j);
        }
        for t in pk.group_tokens(j) {
            let row = &pk.bits[t * pk.words_per_row..(t + 1) * pk.words_per_row];
            let mut acc = offset;
            for (wi, &word) in row.iter().enumerate() {
                let chunk = &weights[wi * 64..((wi + 1) * 64).min(pk.dim)];
                for (b, &a) in chunk.iter().enumerate() {
                    // Flip the sign bit of `a` when the code is -1.
                    let negate = (!(word >> b) & 1) << 63;
                    acc += f64::from_bits(a.to_bits() ^ negate);
                }
            }
            scores.push(acc);
        }
    }
    ScoreVector::logits(scores)
}

/// Bytes read during importance estimation relative to a 16-bit key cache.
///
/// Counts are kept in bits so every quantity is an exact integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadRatio {
    numerator_bits: u64,
    denominator_bits: u64,
    /// True when the closed-form expression applies (no short group or page).
    pub from_formula: bool,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl LoadRatio {
    pub fn from_bits(numerator_bits: u64, denominator_bits: u64, from_formula: bool) -> Self {
        assert!(denominator_bits > 0, "load ratio denominator must be positive");
        Self { numerator_bits, denominator_bits, from_formula }
    }

    pub fn from_bytes(numerator_bytes: u64, denominator_bytes: u64, from_formula: bool) -> Self {
        Self::from_bits(numerator_bytes * 8, denominator_bytes * 8, from_formula)
    }

    pub fn numerator_bits(&self) -> u64 {
        self.numerator_bits
    }

    pub fn denominator_bits(&self) -> u64 {
        self.denominator_bits
    }

    pub fn numerator_bytes(&self) -> f64 {
        self.numerator_bits as f64 / 8.0
    }

    pub fn denominator_bytes(&self) -> f64 {
        self.denominator_bits as f64 / 8.0
    }

    /// Reduced `(numerator, denominator)`.
    pub fn rational(&self) -> (u64, u64) {
        let g = gcd(self.numerator_bits, self.denominator_bits).max(1);
        (self.numerator_bits / g, self.denominator_bits / g)
    }

    pub fn value(&self) -> f64 {
        let (n, d) = self.rational();
        n as f64 / d as f64
    }

    /// Exact rational comparison.
    pub fn equals_fraction(&self, numerator: u64, denominator: u64) -> bool {
        self.numerator_bits as u128 * denominator as u128 == numerator as u128 * self.denominator_bits as u128
    }
}

/// `(l·1 + (l/g)·2·16) / (l·16) = (1 + 32/g) / 16`, per channel.
///
/// When `g` does not divide `l` the short final group still costs a full
/// parameter pair; the ratio is then counted exactly and flagged.
pub fn load_ratio_fier(len: usize, group_size: usize) -> Result<LoadRatio> {
    if len == 0 {
        return Err(Error::InvalidParameter("token count must be at least 1"));
    }
    if group_size == 0 {
        return Err(Error::InvalidParameter("group size must be at least 1"));
    }
    let (l, g) = (len as u64, group_size as u64);
    let numerator = l + l.div_ceil(g) * 2 * 16;
    Ok(LoadRatio::from_bits(numerator, l * 16, l % g == 0))
}

/// `2 / L`: two 16-bit summary vectors per page of `L` tokens.
pub fn load_ratio_quest(page_size: usize) -> Result<LoadRatio> {
    if page_size == 0 {
        return Err(Error::InvalidParameter("page size must be at least 1"));
    }
    Ok(LoadRatio::from_bits(2 * 16, page_size as u64 * 16, true))
}

/// Exact Quest cost for an `l`-token cache, counting a short final page in full.
pub fn load_ratio_quest_counted(len: usize, page_size: usize) -> Result<LoadRatio> {
    if len == 0 {
        return Err(Error::InvalidParameter("token count must be at least 1"));
    }
    if page_size == 0 {
        return Err(Error::InvalidParameter("page size must be at least 1"));
    }
    let (l, p) = (len as u64, page_size as u64);
    Ok(LoadRatio::from_bits(l.div_ceil(p) * 2 * 16, l * 16, l % p == 0))
}

/// Serialized estimation bytes of `pk` against `l·d` 16-bit keys.
pub fn counted_load_ratio(pk: &PackedKeys) -> LoadRatio {
    let full = pk.len as u64 * pk.dim as u64 * 2;
    LoadRatio::from_bytes(pk.payload_bytes(), full, pk.len.is_multiple_of(pk.group_size) && pk.dim.is_multiple_of(8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvcore::exact_scores;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_keys(rng: &mut ChaCha8Rng, l: usize, d: usize) -> KeyCache {
        KeyCache::new(l, d, (0..l * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    fn spec(g: usize) -> GroupSpec {
        GroupSpec::new(g).unwrap()
    }

    #[test]
    fn group_spec_rejects_zero() {
        assert!(GroupSpec::new(0).is_err());
    }

    #[test]
    fn hand_example_group() {
        let k = KeyCache::new(4, 1, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let pk = quantize(&k, spec(4));
        assert_eq!(pk.zero(0, 0), 1.5);
        assert_eq!(pk.scale(0, 0), 1.5);
        let codes: Vec<i8> = (0..4).map(|t| pk.code(t, 0)).collect();
        assert_eq!(codes, vec![-1, 1, 1, -1]);
        assert_eq!(dequantize(&pk).as_slice(), &[0.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn constant_group_is_canonical() {
        let k = KeyCache::new(4, 1, vec![5.0; 4]).unwrap();
        let pk = quantize(&k, spec(4));
        assert_eq!((pk.zero(0, 0), pk.scale(0, 0)), (5.0, 0.0));
        assert!((0..4).all(|t| pk.code(t, 0) == 1));
        assert_eq!(dequantize(&pk).as_slice(), &[5.0; 4]);
    }

    #[test]
    fn short_final_group_has_own_parameters() {
        let k = KeyCache::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 10.0]).unwrap();
        let pk = quantize(&k, spec(4));
        assert_eq!(pk.groups_per_channel(), 2);
        assert_eq!((pk.zero(0, 1), pk.scale(0, 1)), (10.0, 0.0));
        assert_eq!(pk.group_tokens(1), 4..5);
        assert_eq!(dequantize(&pk).get(4, 0), 10.0);
    }

    #[test]
    fn wide_rows_span_multiple_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_keys(&mut rng, 9, 130);
        let pk = quantize(&k, spec(3));
        let kt = dequantize(&pk);
        let q = QueryVector::new((0..130).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = approx_scores(&q, &pk).unwrap();
        let b = exact_scores(&q, &kt, false).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9);
        }
        let mut row = Vec::new();
        pk.write_row_bytes(0, &mut row);
        assert_eq!(row.len(), 17);
    }

    #[test]
    fn single_token_score() {
        let k = KeyCache::new(1, 2, vec![2.0, 4.0]).unwrap();
        let pk = quantize(&k, spec(1));
        let q = QueryVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(approx_scores(&q, &pk).unwrap().values(), &[6.0]);
        let bad = QueryVector::new(vec![1.0]).unwrap();
        assert!(matches!(approx_scores(&bad, &pk), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn f16_parameters_are_rounded_before_coding() {
        let k = KeyCache::new(2, 1, vec![0.1, 0.30000001]).unwrap();
        let pk = quantize_with(&k, spec(2), ParamPrecision::F16).unwrap();
        let z = pk.zero(0, 0);
        assert_eq!(z, f16::from_f64(z).to_f64());
        assert_eq!(pk.precision(), ParamPrecision::F16);
        let big = KeyCache::new(2, 1, vec![-1e6, 1e6]).unwrap();
        assert_eq!(
            quantize_with(&big, spec(2), ParamPrecision::F16),
            Err(Error::HalfOverflow { channel: 0, group: 0 })
        );
    }

    /// Materialized oracle: |dot(q, k~)| scale for relative comparison.
    fn score_tolerance(q: &QueryVector, kt: &KeyCache, t: usize) -> f64 {
        let mag: f64 = q.as_slice().iter().zip(kt.row(t)).map(|(a, b)| (a * b).abs()).sum();
        1e-9 * mag.max(1e-300)
    }

    #[test]
    fn approx_matches_materialized_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(128);
        let k = random_keys(&mut rng, 128, 16);
        let pk = quantize(&k, spec(32));
        let kt = dequantize(&pk);
        let q = QueryVector::new((0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = approx_scores(&q, &pk).unwrap();
        let b = exact_scores(&q, &kt, false).unwrap();
        for t in 0..128 {
            assert!((a.values()[t] - b.values()[t]).abs() <= score_tolerance(&q, &kt, t));
        }
    }

    #[test]
    fn approx_matches_materialized_at_full_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4096);
        let k = random_keys(&mut rng, 4096, 128);
        let q = QueryVector::new((0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for g in [32, 100] {
            let pk = quantize(&k, spec(g));
            let kt = dequantize(&pk);
            let a = approx_scores(&q, &pk).unwrap();
            let b = exact_scores(&q, &kt, false).unwrap();
            for t in 0..4096 {
                assert!((a.values()[t] - b.values()[t]).abs() <= score_tolerance(&q, &kt, t));
            }
        }
    }

    #[test]
    fn lossless_at_unit_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_keys(&mut rng, 32, 8);
        let pk = quantize(&k, spec(1));
        assert_eq!(dequantize(&pk), k);
        let q = QueryVector::new((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = approx_scores(&q, &pk).unwrap();
        let b = exact_scores(&q, &k, false).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn load_ratio_table_values() {
        assert!(load_ratio_fier(4096, 32).unwrap().equals_fraction(1, 8));
        assert!(load_ratio_fier(4096, 128).unwrap().equals_fraction(78125, 1_000_000));
        assert!(load_ratio_fier(4096, 256).unwrap().equals_fraction(703125, 10_000_000));
        assert_eq!(load_ratio_quest(16).unwrap().rational(), (1, 8));
        assert_eq!(load_ratio_quest(32).unwrap().rational(), (1, 16));
        assert_eq!(load_ratio_quest(8).unwrap().rational(), (1, 4));
        let short = load_ratio_fier(100, 32).unwrap();
        assert!(!short.from_formula);
        assert_eq!(short.rational(), (57, 400));
        assert!(load_ratio_fier(0, 1).is_err());
        assert!(load_ratio_fier(1, 0).is_err());
        assert!(load_ratio_quest(0).is_err());
    }

    #[test]
    fn fier_cost_strictly_decreases_in_group_size() {
        let l = 4096;
        let mut prev = load_ratio_fier(l, 1).unwrap().value();
        for g in [2usize, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096] {
            let r = load_ratio_fier(l, g).unwrap().value();
            assert!(r < prev, "g={g}");
            prev = r;
        }
    }

    #[test]
    fn counted_bytes_agree_with_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (l, d) = (256, 16);
        let k = random_keys(&mut rng, l, d);
        for g in [1, 8, 32, 256] {
            let pk = quantize(&k, spec(g));
            assert_eq!(pk.payload_bytes(), (l * d / 8 + (l * d / g) * 4) as u64);
            assert_eq!(counted_load_ratio(&pk), {
                let f = load_ratio_fier(l, g).unwrap();
                LoadRatio::from_bits(f.numerator_bits() * d as u64, f.denominator_bits() * d as u64, true)
            });
            assert_eq!(counted_load_ratio(&pk).rational(), load_ratio_fier(l, g).unwrap().rational());
        }
    }

    #[test]
    fn from_parts_rejects_non_canonical_input() {
        let k = KeyCache::new(2, 3, vec![1.0, 2.0, 3.0, 1.0, 5.0, 0.0]).unwrap();
        let pk = quantize(&k, spec(2));
        let mut plane = Vec::new();
        for t in 0..2 {
            pk.write_row_bytes(t, &mut plane);
        }
        let rebuilt = PackedKeys::from_parts(2, 3, spec(2), ParamPrecision::F64, pk.scales.clone(), pk.zeros.clone(), &plane).unwrap();
        assert_eq!(rebuilt, pk);

        // channel 0 is constant; clearing its code breaks canonical form.
        let mut bad = plane.clone();
        bad[0] &= !1;
        assert_eq!(
            PackedKeys::from_parts(2, 3, spec(2), ParamPrecision::F64, pk.scales.clone(), pk.zeros.clone(), &bad),
            Err(Error::NonCanonicalGroup { channel: 0, group: 0 })
        );
        let mut padded = plane.clone();
        padded[1] |= 0x80;
        assert!(PackedKeys::from_parts(2, 3, spec(2), ParamPrecision::F64, pk.scales.clone(), pk.zeros.clone(), &padded).is_err());
        assert!(PackedKeys::from_parts(2, 3, spec(2), ParamPrecision::F64, pk.scales.clone(), pk.zeros.clone(), &plane[..1]).is_err());
        let mut neg = pk.scales.clone();
        neg[1] = -1.0;
        assert!(PackedKeys::from_parts(2, 3, spec(2), ParamPrecision::F64, neg, pk.zeros.clone(), &plane).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_within_half_range(l in 1usize..80, d in 1usize..12, g in 1usize..40, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_keys(&mut rng, l, d);
            let kt = dequantize(&quantize(&k, spec(g)));
            for c in 0..d {
                for start in (0..l).step_by(g) {
                    let end = (start + g).min(l);
                    let vals: Vec<f64> = (start..end).map(|t| k.get(t, c)).collect();
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    for t in start..end {
                        let r = kt.get(t, c);
                        prop_assert!((r - k.get(t, c)).abs() <= (hi - lo) / 2.0);
                        prop_assert!(r >= lo && r <= hi);
                    }
                }
            }
        }

        #[test]
        fn scale_covariance(l in 1usize..64, d in 1usize..8, g in 1usize..16, factor in 0.25f64..8.0, seed in any::<u64>()) {
            // Power-of-two factors keep the comparison exact.
            let c = libm::exp2(libm::round(libm::log2(factor)));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_keys(&mut rng, l, d);
            let scaled = KeyCache::new(l, d, k.as_slice().iter().map(|v| v * c).collect()).unwrap();
            let a = quantize(&k, spec(g));
            let b = quantize(&scaled, spec(g));
            prop_assert_eq!(&a.bits, &b.bits);
            for (x, y) in a.scales.iter().zip(&b.scales) {
                prop_assert_eq!(x * c, *y);
            }
            for (x, y) in a.zeros.iter().zip(&b.zeros) {
                prop_assert_eq!(x * c, *y);
            }
        }
    }
}
