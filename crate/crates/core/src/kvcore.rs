//! Single-head cache model and the exact full-precision oracles.
//!
//! Everything here is a pure function over immutable inputs. Arithmetic is
//! `f64` throughout; half precision only appears in serialized formats.

use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty);
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Shape { rows, cols, len: data.len() });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, actual: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

macro_rules! cache_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Matrix);

        impl $name {
            /// `len` tokens of dimension `dim`, row-major.
            pub fn new(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
                Matrix::new(len, dim, data).map(Self)
            }

            pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
                Matrix::from_rows(rows).map(Self)
            }

            /// Token count `l`.
            #[inline]
            pub fn len(&self) -> usize {
                self.0.rows()
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.0.rows() == 0
            }

            /// Head dimension `d`.
            #[inline]
            pub fn dim(&self) -> usize {
                self.0.cols()
            }

            pub fn matrix(&self) -> &Matrix {
                &self.0
            }
        }

        impl From<Matrix> for $name {
            fn from(m: Matrix) -> Self {
                Self(m)
            }
        }

        impl Deref for $name {
            type Target = Matrix;
            fn deref(&self) -> &Matrix {
                &self.0
            }
        }
    };
}

cache_newtype!(
    /// Key cache `K`, one row per token.
    KeyCache
);
cache_newtype!(
    /// Value cache `V`, row-aligned with its [`KeyCache`].
    ValueCache
);

/// Decode-step query `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector(Vec<f64>);

impl QueryVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        check_finite(&data)?;
        Ok(Self(data))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Logit,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreVector {
    pub fn logits(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values, kind: ScoreKind::Logit })
    }

    /// Wraps an attention distribution; entries must lie in `[0, 1]` and sum to one.
    pub fn probabilities(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter("softmax scores must lie in [0, 1]"));
        }
        let total: f64 = values.iter().sum();
        if libm::fabs(total - 1.0) > 1e-6 {
            return Err(Error::InvalidParameter("softmax scores must sum to 1"));
        }
        Ok(Self { values, kind: ScoreKind::Softmax })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Attention output `o = sV`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput(pub Vec<f64>);

impl AttentionOutput {
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sorted, duplicate-free token positions retained under a cache budget.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selection {
    indices: Vec<usize>,
    budget: usize,
}

impl Selection {
    /// Validates `indices` against a cache of `len` tokens.
    pub fn new(indices: Vec<usize>, budget: usize, len: usize) -> Result<Self> {
        if indices.len() > budget {
            return Err(Error::OverBudget { count: indices.len(), budget });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedSelection);
        }
        if let Some(&last) = indices.last() {
            if last >= len {
                return Err(Error::IndexOutOfRange { index: last, len });
            }
        }
        Ok(Self { indices, budget })
    }

    /// Every position of a `len`-token cache.
    pub fn all(len: usize) -> Self {
        Self { indices: (0..len).collect(), budget: len }
    }

    /// Sorts and wraps indices produced internally. Caller guarantees uniqueness and range.
    pub(crate) fn from_unsorted(mut indices: Vec<usize>, budget: usize) -> Self {
        indices.sort_unstable();
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.len() <= budget);
        Self { indices, budget }
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn budget(&self) -> usize {
        self.budget
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Number of positions present in both selections.
    pub fn intersection_len(&self, other: &Selection) -> usize {
        let (mut a, mut b, mut n) = (0, 0, 0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                core::cmp::Ordering::Less => a += 1,
                core::cmp::Ordering::Greater => b += 1,
                core::cmp::Ordering::Equal => {
                    n += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        n
    }

    /// Length-`len` 0/1 map of the selected positions.
    pub fn to_mask(&self, len: usize) -> Vec<u8> {
        let mut mask = alloc::vec![0u8; len];
        for &i in &self.indices {
            mask[i] = 1;
        }
        mask
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `qKᵀ`, optionally divided by `sqrt(d)`.
pub fn exact_scores(q: &QueryVector, keys: &KeyCache, scaled: bool) -> Result<ScoreVector> {
    if q.dim() != keys.dim() {
        return Err(Error::DimensionMismatch { expected: keys.dim(), actual: q.dim() });
    }
    let scale = if scaled { 1.0 / libm::sqrt(keys.dim() as f64) } else { 1.0 };
    let values = (0..keys.len())
        .map(|t| {
            let logit = dot(q.as_slice(), keys.row(t));
            if scaled {
                logit * scale
            } else {
                logit
            }
        })
        .collect();
    Ok(ScoreVector { values, kind: ScoreKind::Logit })
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Max-subtracted softmax over logits.
pub fn softmax(scores: &ScoreVector) -> ScoreVector {
    let mut values = scores.values.clone();
    if !values.is_empty() {
        softmax_in_place(&mut values);
    }
    ScoreVector { values, kind: ScoreKind::Softmax }
}

/// Indices of the `k` largest values; ties go to the lower index.
pub(crate) fn top_k(values: &[f64], k: usize) -> Result<Selection> {
    let len = values.len();
    if k == 0 || k > len {
        return Err(Error::KOutOfRange { k, len });
    }
    check_finite(values)?;
    // `+ 0.0` folds -0.0 into +0.0 so signed zeros tie.
    let key = |i: usize| values[i] + 0.0;
    let mut order: Vec<usize> = (0..len).collect();
    let cmp = |a: &usize, b: &usize| key(*b).total_cmp(&key(*a)).then(a.cmp(b));
    if k < len {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    Ok(Selection::from_unsorted(order, k))
}

pub fn topk_oracle(scores: &ScoreVector, k: usize) -> Result<Selection> {
    top_k(&scores.values, k)
}

/// `softmax(q·K[sel]ᵀ)·V[sel]` in full precision over the selected rows only.
pub fn gather_attention(
    q: &QueryVector,
    keys: &KeyCache,
    values: &ValueCache,
    sel: &Selection,
    scaled: bool,
) -> Result<AttentionOutput> {
    if q.dim() != keys.dim() {
        return Err(Error::DimensionMismatch { expected: keys.dim(), actual: q.dim() });
    }
    if keys.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: keys.len(), actual: values.len() });
    }
    if sel.is_empty() {
        return Err(Error::EmptySelection);
    }
    if let Some(&last) = sel.indices().last() {
        if last >= keys.len() {
            return Err(Error::IndexOutOfRange { index: last, len: keys.len() });
        }
    }
    let scale = if scaled { 1.0 / libm::sqrt(keys.dim() as f64) } else { 1.0 };
    let mut weights: Vec<f64> = sel
        .indices()
        .iter()
        .map(|&t| dot(q.as_slice(), keys.row(t)) * scale)
        .collect();
    softmax_in_place(&mut weights);

    let mut out = alloc::vec![0.0; values.dim()];
    for (&t, &w) in sel.indices().iter().zip(&weights) {
        for (o, &v) in out.iter_mut().zip(values.row(t)) {
            *o += w * v;
        }
    }
    Ok(AttentionOutput(out))
}

/// Exact attention over the whole cache.
pub fn full_attention(
    q: &QueryVector,
    keys: &KeyCache,
    values: &ValueCache,
    scaled: bool,
) -> Result<AttentionOutput> {
    gather_attention(q, keys, values, &Selection::all(keys.len()), scaled)
}
