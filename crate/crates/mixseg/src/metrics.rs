//! Segmentation evaluation: confusion-matrix accumulation, per-class
//! intersection-over-union, and seed-averaged mIoU summaries.

use crate::error::{ensure_same_hw, Error, Result};
use crate::grid::LabelMap;

/// `C x C` pixel counts; entry `[t][p]` counts pixels with ground truth `t`
/// predicted as `p`. Merging matrices by addition is associative and
/// commutative, so per-thread matrices can be combined in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Add one image's pixels.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        ensure_same_hw(
            "confusion accumulate",
            (truth.height(), truth.width()),
            (pred.height(), pred.width()),
        )?;
        if pred.num_classes() != self.num_classes || truth.num_classes() != self.num_classes {
            return Err(Error::ShapeMismatch {
                context: "confusion accumulate num_classes",
                expected: self.num_classes.to_string(),
                actual: format!("{}/{}", truth.num_classes(), pred.num_classes()),
            });
        }
        for (&t, &p) in truth.data().iter().zip(pred.data()) {
            self.counts[t as usize * self.num_classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch {
                context: "confusion merge",
                expected: self.num_classes.to_string(),
                actual: other.num_classes.to_string(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU: `diag / (row + col - diag)`. A class absent from both
    /// prediction and truth has zero union and is undefined (`None`); such
    /// classes are excluded from the mean rather than scored 0 or 1.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|cls| {
                let diag = self.count(cls, cls);
                let row: u64 = (0..c).map(|p| self.count(cls, p)).sum();
                let col: u64 = (0..c).map(|t| self.count(t, cls)).sum();
                let union = row + col - diag;
                if union == 0 {
                    None
                } else {
                    Some(diag as f64 / union as f64)
                }
            })
            .collect()
    }

    /// Mean of the defined per-class IoUs; `None` when no class is defined.
    pub fn mean_iou(&self) -> Option<f64> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}

/// Arithmetic mean and sample (n-1) standard deviation of per-seed mIoU
/// values. A single value has standard deviation 0.
pub fn mean_iou_over_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("mean_iou_over_seeds needs at least one value"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}

/// Render a fraction-valued mean and stddev as a percent cell like
/// `62.25 ± 1.22`.
pub fn format_mean_std_percent(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", mean * 100.0, std * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn labels(h: usize, w: usize, c: usize, data: Vec<u8>) -> LabelMap {
        LabelMap::new(h, w, c, data).unwrap()
    }

    #[test]
    fn perfect_prediction_only_increments_diagonal() {
        let y = labels(2, 2, 3, vec![0, 1, 2, 1]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&y, &y).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                if t != p {
                    assert_eq!(cm.count(t, p), 0);
                }
            }
        }
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.mean_iou(), Some(1.0));
        assert!(cm.iou_per_class().iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pixel_increments_one_cell() {
        let truth = labels(1, 1, 3, vec![1]);
        let pred = labels(1, 1, 3, vec![2]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&pred, &truth).unwrap();
        assert_eq!(cm.count(1, 2), 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn accumulation_is_additive() {
        let mut rng = Rng::new(1);
        let make = |rng: &mut Rng| {
            labels(2, 3, 4, (0..6).map(|_| rng.below(4) as u8).collect())
        };
        let (p1, t1, p2, t2) = (make(&mut rng), make(&mut rng), make(&mut rng), make(&mut rng));

        let mut two_steps = ConfusionMatrix::new(4);
        two_steps.accumulate(&p1, &t1).unwrap();
        two_steps.accumulate(&p2, &t2).unwrap();

        let mut merged = ConfusionMatrix::new(4);
        let mut second = ConfusionMatrix::new(4);
        merged.accumulate(&p1, &t1).unwrap();
        second.accumulate(&p2, &t2).unwrap();
        merged.merge(&second).unwrap();

        assert_eq!(two_steps, merged);
    }

    #[test]
    fn disjoint_class_has_zero_iou() {
        let truth = labels(1, 2, 2, vec![1, 1]);
        let pred = labels(1, 2, 2, vec![0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &truth).unwrap();
        let ious = cm.iou_per_class();
        assert_eq!(ious[1], Some(0.0));
        assert_eq!(ious[0], Some(0.0)); // predicted everywhere, true nowhere
    }

    #[test]
    fn hand_derived_2x2_example() {
        // truth [0,0,1,1], pred [0,1,1,1]:
        // class 0: intersection 1, union 2 -> 1/2
        // class 1: intersection 2, union 3 -> 2/3
        let truth = labels(2, 2, 2, vec![0, 0, 1, 1]);
        let pred = labels(2, 2, 2, vec![0, 1, 1, 1]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &truth).unwrap();
        let ious = cm.iou_per_class();
        assert_eq!(ious[0], Some(1.0 / 2.0));
        assert_eq!(ious[1], Some(2.0 / 3.0));
        let miou = cm.mean_iou().unwrap();
        assert_eq!(miou, (0.5 + 2.0 / 3.0) / 2.0);
        assert!((miou - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded_from_mean() {
        let truth = labels(1, 2, 3, vec![0, 0]);
        let pred = labels(1, 2, 3, vec![0, 0]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&pred, &truth).unwrap();
        let ious = cm.iou_per_class();
        assert_eq!(ious[0], Some(1.0));
        assert_eq!(ious[1], None);
        assert_eq!(ious[2], None);
        assert_eq!(cm.mean_iou(), Some(1.0));
    }

    #[test]
    fn matrix_iou_matches_set_based_computation() {
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let c = 2 + rng.below(3) as usize;
            let h = 1 + rng.below(6) as usize;
            let w = 1 + rng.below(6) as usize;
            let truth = labels(h, w, c, (0..h * w).map(|_| rng.below(c as u64) as u8).collect());
            let pred = labels(h, w, c, (0..h * w).map(|_| rng.below(c as u64) as u8).collect());
            let mut cm = ConfusionMatrix::new(c);
            cm.accumulate(&pred, &truth).unwrap();

            // Set-based oracle: explicit pixel-set intersection and union.
            for cls in 0..c {
                let mut inter = 0u64;
                let mut union = 0u64;
                for px in 0..h * w {
                    let in_t = truth.data()[px] as usize == cls;
                    let in_p = pred.data()[px] as usize == cls;
                    inter += (in_t && in_p) as u64;
                    union += (in_t || in_p) as u64;
                }
                let expected = if union == 0 { None } else { Some(inter as f64 / union as f64) };
                assert_eq!(cm.iou_per_class()[cls], expected);
            }
        }
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let mut rng = Rng::new(23);
        let imgs: Vec<(LabelMap, LabelMap)> = (0..5)
            .map(|_| {
                let t = labels(3, 3, 3, (0..9).map(|_| rng.below(3) as u8).collect());
                let p = labels(3, 3, 3, (0..9).map(|_| rng.below(3) as u8).collect());
                (p, t)
            })
            .collect();
        let mut forward = ConfusionMatrix::new(3);
        for (p, t) in &imgs {
            forward.accumulate(p, t).unwrap();
        }
        let mut reversed = ConfusionMatrix::new(3);
        for (p, t) in imgs.iter().rev() {
            reversed.accumulate(p, t).unwrap();
        }
        assert_eq!(forward, reversed);
    }

    #[test]
    fn miou_is_bounded() {
        let mut rng = Rng::new(31);
        for _ in 0..50 {
            let truth = labels(4, 4, 3, (0..16).map(|_| rng.below(3) as u8).collect());
            let pred = labels(4, 4, 3, (0..16).map(|_| rng.below(3) as u8).collect());
            let mut cm = ConfusionMatrix::new(3);
            cm.accumulate(&pred, &truth).unwrap();
            let miou = cm.mean_iou().unwrap();
            assert!((0.0..=1.0).contains(&miou));
        }
    }

    #[test]
    fn seed_average_examples() {
        assert_eq!(mean_iou_over_seeds(&[0.6]).unwrap(), (0.6, 0.0));
        let (m, s) = mean_iou_over_seeds(&[0.5, 0.7]).unwrap();
        assert!((m - 0.6).abs() < 1e-15);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-15);
        assert!(mean_iou_over_seeds(&[]).is_err());
    }

    #[test]
    fn percent_cell_formatting() {
        assert_eq!(format_mean_std_percent(0.6225, 0.0122), "62.25 ± 1.22");
        assert_eq!(format_mean_std_percent(0.6, 0.0), "60.00 ± 0.00");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = labels(2, 2, 2, vec![0; 4]);
        let p = labels(2, 3, 2, vec![0; 6]);
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&p, &t).is_err());
        let p3 = labels(2, 2, 3, vec![0; 4]);
        assert!(cm.accumulate(&p3, &t).is_err());
        assert!(cm.merge(&ConfusionMatrix::new(3)).is_err());
    }
}
