use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kvcore::{exact_scores, KeyCache, QueryVector, Selection};
use crate::quant1bit::{approx_scores, PackedKeys};

/// `|selection ∩ oracle| / n` for two selections of the same budget `n`.
pub fn recall(selection: &Selection, oracle: &Selection) -> Result<f64> {
    if selection.budget() != oracle.budget() {
        return Err(Error::BudgetMismatch { left: selection.budget(), right: oracle.budget() });
    }
    Ok(selection.intersection_len(oracle) as f64 / oracle.budget() as f64)
}

/// Fraction of `reference` present in `selection`, whatever its size.
pub fn coverage(selection: &Selection, reference: &Selection) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    selection.intersection_len(reference) as f64 / reference.len() as f64
}

/// `‖a − b‖₂ / ‖b‖₂`; zero when both are zero.
pub fn relative_l2(actual: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = actual.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    libm::sqrt(num / den)
}

/// Ranking diagnostics of estimated logits against exact logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginReport {
    /// Gap between the k-th and (k+1)-th largest exact logits.
    pub margin: f64,
    /// `max_i |exact_i − approx_i|`.
    pub max_err: f64,
    /// `Σ_i (exact_i − approx_i)²`.
    pub l2_loss: f64,
    /// `Σ_i max(0, m/2 − (exact_i − approx_i))`, one-sided.
    pub hinge_loss: f64,
    /// `Σ_i max(0, |exact_i − approx_i| − m/2)`; zero iff every error is within `m/2`.
    pub symmetric_hinge_loss: f64,
}

impl MarginReport {
    /// Every estimate is within half the margin, which pins the Top-k set.
    pub fn preserves_top_k(&self) -> bool {
        self.max_err < self.margin / 2.0
    }
}

pub fn margin_from_logits(exact: &[f64], approx: &[f64], k: usize) -> Result<MarginReport> {
    if exact.len() != approx.len() {
        return Err(Error::DimensionMismatch { expected: exact.len(), actual: approx.len() });
    }
    if k == 0 || k >= exact.len() {
        return Err(Error::KOutOfRange { k, len: exact.len().saturating_sub(1) });
    }
    let mut sorted: Vec<f64> = exact.to_vec();
    let (above, kth_next, _) = sorted.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    let kth = above.iter().copied().fold(f64::INFINITY, f64::min);
    let margin = kth - *kth_next;

    let (mut max_err, mut l2_loss, mut hinge_loss, mut symmetric_hinge_loss) = (0.0f64, 0.0, 0.0, 0.0);
    for (&e, &a) in exact.iter().zip(approx) {
        let diff = e - a;
        max_err = max_err.max(libm::fabs(diff));
        l2_loss += diff * diff;
        hinge_loss += (margin / 2.0 - diff).max(0.0);
        symmetric_hinge_loss += (libm::fabs(diff) - margin / 2.0).max(0.0);
    }
    Ok(MarginReport { margin, max_err, l2_loss, hinge_loss, symmetric_hinge_loss })
}

/// Margin and estimation error of `pk` for query `q` at Top-`k`, on unscaled logits.
pub fn margin_and_errors(q: &QueryVector, keys: &KeyCache, pk: &PackedKeys, k: usize) -> Result<MarginReport> {
    let exact = exact_scores(q, keys, false)?;
    let approx = approx_scores(q, pk)?;
    margin_from_logits(exact.values(), approx.values(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn recall_examples() {
        let a = Selection::new(vec![1, 2, 3, 4], 4, 10).unwrap();
        assert_eq!(recall(&a, &a).unwrap(), 1.0);
        let b = Selection::new(vec![5, 6, 7, 8], 4, 10).unwrap();
        assert_eq!(recall(&a, &b).unwrap(), 0.0);
        let c = Selection::new(vec![3, 4, 5, 6], 4, 10).unwrap();
        assert_eq!(recall(&a, &c).unwrap(), 0.5);
        let d = Selection::new(vec![3, 4, 5], 3, 10).unwrap();
        assert_eq!(recall(&a, &d), Err(Error::BudgetMismatch { left: 4, right: 3 }));
        assert_eq!(coverage(&Selection::all(10), &d), 1.0);
    }

    #[test]
    fn margin_examples() {
        let r = margin_from_logits(&[5.0, 3.0, 1.0], &[5.0, 3.0, 1.0], 1).unwrap();
        assert_eq!(r.margin, 2.0);
        assert_eq!((r.max_err, r.l2_loss, r.symmetric_hinge_loss), (0.0, 0.0, 0.0));

        let r = margin_from_logits(&[4.0, 1.0], &[3.5, 1.2], 1).unwrap();
        assert_eq!(r.margin, 3.0);
        assert_eq!(r.max_err, 0.5);
        assert!((r.l2_loss - 0.29).abs() < 1e-12);
        assert_eq!(r.symmetric_hinge_loss, 0.0);
        // One-sided form: max(0, 1.5 - 0.5) + max(0, 1.5 + 0.2).
        assert!((r.hinge_loss - 2.7).abs() < 1e-12);
        assert!(r.preserves_top_k());

        assert!(matches!(margin_from_logits(&[1.0, 2.0], &[1.0, 2.0], 2), Err(Error::KOutOfRange { .. })));
        assert!(margin_from_logits(&[1.0, 2.0], &[1.0], 1).is_err());
    }

    #[test]
    fn margin_uses_kth_gap() {
        let r = margin_from_logits(&[0.0, 9.0, 4.0, 7.0, 4.5], &[0.0; 5], 2).unwrap();
        assert_eq!(r.margin, 7.0 - 4.5);
    }

    #[test]
    fn relative_error() {
        assert_eq!(relative_l2(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_l2(&[0.0], &[0.0]), 0.0);
        assert!((relative_l2(&[3.0, 4.0], &[0.0, 5.0]) - (9.0f64 + 1.0).sqrt() / 5.0).abs() < 1e-15);
    }
}
