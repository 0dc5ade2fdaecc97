//! Training-objective dispatch and the scalar losses it selects.
//!
//! Which terms apply depends only on whether the acquisition pair is in the
//! training domain and on where it sits in b-value space: an unpaired
//! consistency-style term always applies, detection supervision applies
//! in-domain, and the cross-protocol consistency penalty only for pairs
//! with low b in [50, 100] and high b in [800, 1000]. The reference
//! acquisition itself, exactly (50, 800), has its own predicate because
//! consistency targets are synthesized from it.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::signal::MetaInfo;
use crate::tensor::Tensor;

/// Probability clamp for the cross-entropy terms.
pub const BCE_EPS: f64 = 1e-7;

/// Consistency-eligible b-value windows.
pub const CONSISTENCY_LOW_B: (f64, f64) = (50.0, 100.0);
pub const CONSISTENCY_HIGH_B: (f64, f64) = (800.0, 1000.0);

/// Reference acquisition pair.
pub const REFERENCE_LOW_B: f64 = 50.0;
pub const REFERENCE_HIGH_B: f64 = 800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossTerm {
    /// Voxel-wise detection supervision (binary cross-entropy).
    Det,
    /// Unpaired translation objective; always active.
    Cut,
    /// Cross-protocol output consistency (mean squared error).
    Consistency,
}

/// The active set of loss terms for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossSpec {
    terms: BTreeSet<LossTerm>,
}

impl LossSpec {
    /// Builds a spec; `Cut` membership is an invariant.
    pub fn new(terms: impl IntoIterator<Item = LossTerm>) -> Result<Self> {
        let terms: BTreeSet<LossTerm> = terms.into_iter().collect();
        if !terms.contains(&LossTerm::Cut) {
            return Err(Error::Input("loss spec must always include Cut".into()));
        }
        Ok(Self { terms })
    }

    pub fn contains(&self, term: LossTerm) -> bool {
        self.terms.contains(&term)
    }

    pub fn terms(&self) -> impl Iterator<Item = LossTerm> + '_ {
        self.terms.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        false // Cut membership is an invariant
    }
}

/// One sample as seen by the dispatcher.
#[derive(Debug, Clone, Copy)]
pub struct SampleContext {
    pub meta: MetaInfo,
    pub in_train: bool,
}

/// True exactly for the reference acquisition (50, 800).
pub fn is_reference_pair(meta: MetaInfo) -> bool {
    meta.low_b == REFERENCE_LOW_B && meta.high_b == REFERENCE_HIGH_B
}

/// True when the pair falls in the consistency-eligible window.
pub fn in_consistency_window(meta: MetaInfo) -> bool {
    (CONSISTENCY_LOW_B.0..=CONSISTENCY_LOW_B.1).contains(&meta.low_b)
        && (CONSISTENCY_HIGH_B.0..=CONSISTENCY_HIGH_B.1).contains(&meta.high_b)
}

/// Selects the loss terms for a sample:
///
/// * inference: `{Cut}`
/// * training: `{Det, Cut}`
/// * training inside the consistency window: `{Det, Cut, Consistency}`
pub fn loss_select(ctx: SampleContext) -> LossSpec {
    let mut terms = BTreeSet::from([LossTerm::Cut]);
    if ctx.in_train {
        terms.insert(LossTerm::Det);
        if in_consistency_window(ctx.meta) {
            terms.insert(LossTerm::Consistency);
        }
    }
    LossSpec { terms }
}

/// Mean binary cross-entropy with predictions clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`. Targets must be exactly 0 or 1.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut acc = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        if t != 0.0 && t != 1.0 {
            return Err(Error::Input(format!("targets must be 0 or 1, got {t}")));
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(acc / pred.len() as f64)
}

/// Mean squared difference between two equally shaped tensors.
pub fn mse_consistency(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut acc = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(low: f64, high: f64) -> MetaInfo {
        MetaInfo::new(low, high).unwrap()
    }

    fn select(low: f64, high: f64, in_train: bool) -> Vec<LossTerm> {
        loss_select(SampleContext { meta: meta(low, high), in_train }).terms().collect()
    }

    #[test]
    fn inference_always_selects_cut_only() {
        for (l, h) in [(0.0, 800.0), (50.0, 800.0), (100.0, 1000.0), (200.0, 2000.0)] {
            assert_eq!(select(l, h, false), vec![LossTerm::Cut]);
        }
    }

    #[test]
    fn training_adds_detection() {
        assert_eq!(select(0.0, 800.0, true), vec![LossTerm::Det, LossTerm::Cut]);
        assert_eq!(select(200.0, 2000.0, true), vec![LossTerm::Det, LossTerm::Cut]);
    }

    #[test]
    fn consistency_window_boundaries_are_inclusive() {
        for (l, h) in [(50.0, 800.0), (100.0, 1000.0), (50.0, 1000.0), (100.0, 800.0), (75.0, 900.0)] {
            assert_eq!(
                select(l, h, true),
                vec![LossTerm::Det, LossTerm::Cut, LossTerm::Consistency],
                "({l}, {h})"
            );
        }
        // just outside the window on each edge
        for (l, h) in [(49.0, 800.0), (101.0, 900.0), (50.0, 799.0), (50.0, 1001.0)] {
            assert_eq!(select(l, h, true), vec![LossTerm::Det, LossTerm::Cut], "({l}, {h})");
        }
    }

    #[test]
    fn reference_pair_is_exact_equality() {
        assert!(is_reference_pair(meta(50.0, 800.0)));
        assert!(!is_reference_pair(meta(50.0, 900.0)));
        assert!(!is_reference_pair(meta(100.0, 800.0)));
        // inside the window but not the reference pair
        assert!(in_consistency_window(meta(60.0, 850.0)));
        assert!(!is_reference_pair(meta(60.0, 850.0)));
    }

    #[test]
    fn loss_spec_requires_cut() {
        assert!(LossSpec::new([LossTerm::Det]).is_err());
        let s = LossSpec::new([LossTerm::Cut, LossTerm::Det]).unwrap();
        assert!(s.contains(LossTerm::Cut));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn bce_hand_values() {
        let pred = Tensor::new(vec![2], vec![0.9, 0.2]).unwrap();
        let tgt = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        // -(ln 0.9 + ln 0.8) / 2
        assert!((bce_loss(&pred, &tgt).unwrap() - 0.164252033486018).abs() < 1e-15);

        // clamp keeps saturated predictions finite
        let sure = Tensor::new(vec![1], vec![1.0]).unwrap();
        let one = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!((bce_loss(&sure, &one).unwrap() - 1.0000000494736474e-7).abs() < 1e-20);
        let wrong = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!((bce_loss(&wrong, &one).unwrap() - 16.11809565095832).abs() < 1e-12);
    }

    #[test]
    fn bce_validates_shape_and_targets() {
        let pred = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let bad_shape = Tensor::new(vec![3], vec![1.0, 0.0, 1.0]).unwrap();
        assert!(bce_loss(&pred, &bad_shape).is_err());
        let soft = Tensor::new(vec![2], vec![0.5, 1.0]).unwrap();
        assert!(bce_loss(&pred, &soft).is_err());
    }

    #[test]
    fn mse_hand_value_and_identity() {
        let a = Tensor::new(vec![2], vec![0.0, 0.5]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, 1.0]).unwrap();
        assert_eq!(mse_consistency(&a, &b).unwrap(), 0.25);
        assert_eq!(mse_consistency(&a, &a).unwrap(), 0.0);
        let c = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(mse_consistency(&a, &c).is_err());
    }
}
