//! Evaluation metrics for predicted label grids.
//!
//! mIoU follows the usual convention: per-class intersection over union,
//! averaged over the classes present in ground truth. UNKNOWN predictions
//! belong to no class, so they contribute nothing to any intersection while
//! the ground-truth pixels still enlarge the union; an UNKNOWN prediction is
//! therefore wrong for every class. Precision is measured over labeled
//! (non-UNKNOWN) predictions only and defined as 1.0 when nothing is labeled
//! so that monotonicity suites never divide by zero.

use crate::error::Result;
use crate::grid::{LabelGrid, UNKNOWN};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mean_iou: f64,
    /// Per-class IoU; `None` for classes absent from ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub precision: f64,
    /// True when no pixel was labeled and precision is vacuously 1.0.
    pub precision_vacuous: bool,
    /// Normalized Laplacian energy of the stage that produced the
    /// prediction; filled in by the driver, zero for standalone evaluation.
    pub energy: f64,
}

/// Pooled confusion counts, usable for a single image or a whole corpus.
#[derive(Debug, Clone)]
pub struct IouAccumulator {
    num_classes: usize,
    intersection: Vec<u64>,
    pred_count: Vec<u64>,
    gt_count: Vec<u64>,
    labeled: u64,
    correct: u64,
}

impl IouAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            intersection: vec![0; num_classes],
            pred_count: vec![0; num_classes],
            gt_count: vec![0; num_classes],
            labeled: 0,
            correct: 0,
        }
    }

    /// Accumulate one prediction/ground-truth pair. The ground truth must be
    /// fully labeled; predictions may contain UNKNOWN.
    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        pred.same_shape(gt)?;
        if gt.has_unknown() {
            return Err(crate::error::Error::UnexpectedUnknown);
        }
        for (&p, &g) in pred.values().iter().zip(gt.values()) {
            self.gt_count[g as usize] += 1;
            if p != UNKNOWN {
                self.pred_count[p as usize] += 1;
                self.labeled += 1;
                if p == g {
                    self.intersection[p as usize] += 1;
                    self.correct += 1;
                }
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> Metrics {
        let mut per_class = Vec::with_capacity(self.num_classes);
        let mut sum = 0.0;
        let mut present = 0usize;
        for c in 0..self.num_classes {
            if self.gt_count[c] == 0 {
                per_class.push(None);
                continue;
            }
            let union = self.pred_count[c] + self.gt_count[c] - self.intersection[c];
            let iou = if union == 0 {
                0.0
            } else {
                self.intersection[c] as f64 / union as f64
            };
            per_class.push(Some(iou));
            sum += iou;
            present += 1;
        }
        let mean_iou = if present > 0 {
            sum / present as f64
        } else {
            0.0
        };
        let (precision, vacuous) = if self.labeled == 0 {
            (1.0, true)
        } else {
            (self.correct as f64 / self.labeled as f64, false)
        };
        Metrics {
            mean_iou,
            per_class_iou: per_class,
            precision,
            precision_vacuous: vacuous,
            energy: 0.0,
        }
    }
}

/// Mean intersection-over-union of a single prediction, with precision
/// filled in alongside.
pub fn mean_iou(pred: &LabelGrid, gt: &LabelGrid) -> Result<Metrics> {
    let mut acc = IouAccumulator::new(gt.num_classes());
    acc.add(pred, gt)?;
    Ok(acc.metrics())
}

/// Fraction of labeled predicted pixels that match ground truth;
/// 1.0 when no pixel is labeled.
pub fn precision(pred: &LabelGrid, gt: &LabelGrid) -> Result<f64> {
    let mut acc = IouAccumulator::new(gt.num_classes());
    acc.add(pred, gt)?;
    Ok(acc.metrics().precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, c: usize, values: Vec<u8>) -> LabelGrid {
        LabelGrid::from_values(w, h, c, values).unwrap()
    }

    #[test]
    fn identical_grids_score_one() {
        let g = grid(4, 2, 3, vec![0, 1, 2, 0, 1, 2, 0, 1]);
        let m = mean_iou(&g, &g).unwrap();
        assert_eq!(m.mean_iou, 1.0);
        assert_eq!(m.precision, 1.0);
        assert!(!m.precision_vacuous);
    }

    #[test]
    fn all_background_vs_half_split() {
        // gt: half background, half class 1; prediction all background.
        // IoU(bg) = 0.5, IoU(1) = 0, mean = 0.25.
        let gt = grid(4, 2, 2, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let pred = grid(4, 2, 2, vec![0; 8]);
        let m = mean_iou(&pred, &gt).unwrap();
        assert!((m.mean_iou - 0.25).abs() < 1e-12);
        assert_eq!(m.per_class_iou[0], Some(0.5));
        assert_eq!(m.per_class_iou[1], Some(0.0));
    }

    #[test]
    fn all_unknown_prediction_scores_zero_iou_vacuous_precision() {
        let gt = grid(2, 2, 2, vec![0, 0, 1, 1]);
        let pred = grid(2, 2, 2, vec![UNKNOWN; 4]);
        let m = mean_iou(&pred, &gt).unwrap();
        assert_eq!(m.mean_iou, 0.0);
        assert_eq!(m.precision, 1.0);
        assert!(m.precision_vacuous);
    }

    #[test]
    fn partial_labeling_precision() {
        // four labeled pixels, three of them correct
        let gt = grid(5, 1, 2, vec![0, 0, 1, 1, 1]);
        let pred = grid(5, 1, 2, vec![0, 0, 1, 0, UNKNOWN]);
        assert!((precision(&pred, &gt).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = grid(2, 2, 2, vec![0; 4]);
        let b = grid(2, 3, 2, vec![0; 6]);
        assert!(matches!(
            mean_iou(&a, &b),
            Err(Error::DimensionMismatch(..))
        ));
    }

    #[test]
    fn unknown_ground_truth_rejected() {
        let gt = grid(2, 1, 2, vec![0, UNKNOWN]);
        let pred = grid(2, 1, 2, vec![0, 0]);
        assert!(matches!(
            mean_iou(&pred, &gt),
            Err(Error::UnexpectedUnknown)
        ));
    }

    proptest! {
        #[test]
        fn identity_means_perfect_iou(values in proptest::collection::vec(0u8..3, 12)) {
            let g = grid(4, 3, 3, values);
            let m = mean_iou(&g, &g).unwrap();
            prop_assert!((m.mean_iou - 1.0).abs() < 1e-12);
        }

        #[test]
        fn flipping_a_correct_pixel_never_raises_precision(
            values in proptest::collection::vec(0u8..3, 12),
            pick in 0usize..12,
        ) {
            let gt = grid(4, 3, 3, values.clone());
            let before = precision(&gt, &gt).unwrap();
            let mut flipped = values;
            flipped[pick] = (flipped[pick] + 1) % 3;
            let pred = grid(4, 3, 3, flipped);
            let after = precision(&pred, &gt).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }
}
