//! Cross-entropy losses with gradients w.r.t. logits: the supervised term,
//! the confidence-gated unsupervised (consistency) term, and their weighted
//! combination.
//!
//! Both losses expect `pred` to come from [`crate::model::softmax`] and
//! return the exact gradient of the scalar loss w.r.t. the logits that
//! produced `pred`, ready for [`crate::model::backward`]. Log arguments are
//! clamped below at [`LOG_EPS`] so saturated wrong predictions yield a large
//! finite loss instead of infinity; the gradient is that of the unclamped
//! loss.

use crate::error::{ensure_same_hw, Error, Result};
use crate::grid::{Grid, LabelMap, ProbMap};
use crate::model::Logits;

/// Lower clamp for log arguments.
pub const LOG_EPS: f64 = 1e-12;

/// Normalization of the gated unsupervised loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsupNorm {
    /// Divide by the number of gated-in pixels, so the term's scale does not
    /// collapse when confidence is low.
    #[default]
    GatedPixels,
    /// Divide by all H*W pixels (the plain batch-mean form).
    AllPixels,
}

/// Per-iteration loss summary.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
    pub lambda: f64,
    pub total: f64,
    /// Fraction of unsupervised pixels that passed the confidence gate.
    pub gated_pixel_fraction: f64,
    /// The whole unsupervised image was gated out (or there was no
    /// unsupervised branch this iteration).
    pub all_gated_out: bool,
}

impl LossReport {
    pub fn new(
        supervised_loss: f64,
        unsupervised_loss: f64,
        lambda: f64,
        gated_pixel_fraction: f64,
        all_gated_out: bool,
    ) -> Self {
        LossReport {
            supervised_loss,
            unsupervised_loss,
            lambda,
            total: combined_loss(supervised_loss, unsupervised_loss, lambda),
            gated_pixel_fraction,
            all_gated_out,
        }
    }

    pub fn supervised_only(supervised_loss: f64, lambda: f64) -> Self {
        LossReport::new(supervised_loss, 0.0, lambda, 0.0, true)
    }
}

fn check_pred_target(context: &'static str, pred: &ProbMap, target: &LabelMap) -> Result<()> {
    ensure_same_hw(
        context,
        (pred.height(), pred.width()),
        (target.height(), target.width()),
    )?;
    if pred.num_classes() != target.num_classes() {
        return Err(Error::ShapeMismatch {
            context,
            expected: pred.num_classes().to_string(),
            actual: target.num_classes().to_string(),
        });
    }
    Ok(())
}

/// Mean categorical cross entropy over pixels for one image:
/// `-(1/(H*W)) * sum_j log pred[target_j, j]`, with gradient
/// `(pred - one_hot(target)) / (H*W)` w.r.t. the logits.
///
/// Batch averaging is the caller's `1/N` scale on top of the per-image terms.
pub fn supervised_ce(pred: &ProbMap, target: &LabelMap) -> Result<(f64, Logits)> {
    check_pred_target("supervised_ce", pred, target)?;
    let (c, h, w) = (pred.num_classes(), pred.height(), pred.width());
    let hw = h * w;
    let inv = 1.0 / hw as f64;

    let mut loss = 0.0;
    let mut grad = Logits::zeros(c, h, w);
    for px in 0..hw {
        let t = target.data()[px] as usize;
        loss -= pred.data()[t * hw + px].max(LOG_EPS).ln();
        for ch in 0..c {
            let y = (ch == t) as usize as f64;
            grad.data[ch * hw + px] = (pred.data()[ch * hw + px] - y) * inv;
        }
    }
    Ok((loss * inv, grad))
}

/// Result of the gated unsupervised cross entropy.
#[derive(Debug, Clone)]
pub struct GatedCe {
    pub loss: f64,
    pub grad_logits: Logits,
    /// Fraction of pixels with nonzero gate weight.
    pub gated_in_fraction: f64,
    /// Every pixel was gated out; loss and gradient are zero.
    pub all_gated_out: bool,
}

/// Cross entropy against pseudo-labels with per-pixel gate weights.
///
/// Each pixel's term is scaled by `gate[i,j]`; the sum is divided by the
/// gated-in weight or by `H*W` depending on `norm`. Gradient is zero at
/// gated-out pixels. An image whose gate is all zero produces zero loss and
/// gradient and is flagged.
pub fn unsupervised_ce(
    pred: &ProbMap,
    pseudo: &LabelMap,
    gate: &Grid,
    norm: UnsupNorm,
) -> Result<GatedCe> {
    check_pred_target("unsupervised_ce", pred, pseudo)?;
    ensure_same_hw(
        "unsupervised_ce gate",
        (pred.height(), pred.width()),
        (gate.height(), gate.width()),
    )?;
    let (c, h, w) = (pred.num_classes(), pred.height(), pred.width());
    let hw = h * w;

    let gate_sum: f64 = gate.data().iter().sum();
    let gated_in = gate.data().iter().filter(|&&g| g != 0.0).count();
    if gate_sum == 0.0 {
        return Ok(GatedCe {
            loss: 0.0,
            grad_logits: Logits::zeros(c, h, w),
            gated_in_fraction: 0.0,
            all_gated_out: true,
        });
    }
    let denom = match norm {
        UnsupNorm::GatedPixels => gate_sum,
        UnsupNorm::AllPixels => hw as f64,
    };
    let inv = 1.0 / denom;

    let mut loss = 0.0;
    let mut grad = Logits::zeros(c, h, w);
    for px in 0..hw {
        let g = gate.data()[px];
        if g == 0.0 {
            continue;
        }
        let t = pseudo.data()[px] as usize;
        loss -= g * pred.data()[t * hw + px].max(LOG_EPS).ln();
        for ch in 0..c {
            let y = (ch == t) as usize as f64;
            grad.data[ch * hw + px] = g * (pred.data()[ch * hw + px] - y) * inv;
        }
    }
    Ok(GatedCe {
        loss: loss * inv,
        grad_logits: grad,
        gated_in_fraction: gated_in as f64 / hw as f64,
        all_gated_out: false,
    })
}

/// `sup + lambda * unsup`.
pub fn combined_loss(sup: f64, unsup: f64, lambda: f64) -> f64 {
    sup + lambda * unsup
}

/// Binary gate from teacher confidence: 1 where the maximum class probability
/// reaches `tau`, else 0.
pub fn confidence_gate(teacher_probs: &ProbMap, tau: f64) -> Result<Grid> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau {tau} outside (0, 1]")));
    }
    let conf = crate::grid::confidence_map(teacher_probs);
    let data = conf.data().iter().map(|&v| (v >= tau) as usize as f64).collect();
    Grid::new(teacher_probs.height(), teacher_probs.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::one_hot;
    use crate::rng::Rng;

    fn random_probmap(rng: &mut Rng, c: usize, h: usize, w: usize) -> ProbMap {
        let hw = h * w;
        let mut data = vec![0.0; c * hw];
        for px in 0..hw {
            let raw: Vec<f64> = (0..c).map(|_| rng.next_f64() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            for (ch, v) in raw.iter().enumerate() {
                data[ch * hw + px] = v / sum;
            }
        }
        ProbMap::new(c, h, w, data).unwrap()
    }

    fn random_labels(rng: &mut Rng, c: usize, h: usize, w: usize) -> LabelMap {
        LabelMap::new(h, w, c, (0..h * w).map(|_| rng.below(c as u64) as u8).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let y = LabelMap::new(2, 2, 3, vec![0, 1, 2, 1]).unwrap();
        let (loss, grad) = supervised_ce(&one_hot(&y), &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_prediction_loss_is_ln_c() {
        for c in [2usize, 4, 7] {
            let hw = 6;
            let pred = ProbMap::new(c, 2, 3, vec![1.0 / c as f64; c * hw]).unwrap();
            let y = LabelMap::filled(2, 3, c, 0).unwrap();
            let (loss, _) = supervised_ce(&pred, &y).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12, "C={c}: {loss}");
        }
    }

    #[test]
    fn supervised_ce_matches_bruteforce_sum() {
        let mut rng = Rng::new(42);
        for _ in 0..20 {
            let pred = random_probmap(&mut rng, 2, 2, 2);
            let y = random_labels(&mut rng, 2, 2, 2);
            let (loss, grad) = supervised_ce(&pred, &y).unwrap();

            // Direct summation oracle.
            let mut expected = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for ch in 0..2 {
                        let yv = (y.get(i, j) as usize == ch) as usize as f64;
                        expected -= yv * pred.get(ch, i, j).max(LOG_EPS).ln();
                    }
                }
            }
            expected /= 4.0;
            assert!((loss - expected).abs() < 1e-12);

            // Gradient identity (pred - one_hot)/HW.
            let oh = one_hot(&y);
            for idx in 0..grad.data.len() {
                let want = (pred.data()[idx] - oh.data()[idx]) / 4.0;
                assert!((grad.data[idx] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn supervised_gradient_matches_finite_differences_on_logits() {
        use crate::model::softmax;
        let mut rng = Rng::new(7);
        let (c, h, w) = (3usize, 2usize, 2usize);
        let logits = Logits {
            num_classes: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| rng.range_f64(-2.0, 2.0)).collect(),
        };
        let y = random_labels(&mut rng, c, h, w);
        let loss_of = |l: &Logits| supervised_ce(&softmax(l).unwrap(), &y).unwrap().0;
        let (_, grad) = supervised_ce(&softmax(&logits).unwrap(), &y).unwrap();
        let eps = 1e-6;
        for idx in 0..logits.data.len() {
            let mut plus = logits.clone();
            plus.data[idx] += eps;
            let mut minus = logits.clone();
            minus.data[idx] -= eps;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            assert!(
                (numeric - grad.data[idx]).abs() < 1e-7,
                "idx {idx}: numeric {numeric} analytic {}",
                grad.data[idx]
            );
        }
    }

    #[test]
    fn full_gate_reduces_to_supervised() {
        let mut rng = Rng::new(3);
        let pred = random_probmap(&mut rng, 3, 4, 4);
        let y = random_labels(&mut rng, 3, 4, 4);
        let gate = Grid::filled(4, 4, 1.0);
        let out = unsupervised_ce(&pred, &y, &gate, UnsupNorm::GatedPixels).unwrap();
        let (sup_loss, sup_grad) = supervised_ce(&pred, &y).unwrap();
        assert!((out.loss - sup_loss).abs() < 1e-12);
        for (a, b) in out.grad_logits.data.iter().zip(&sup_grad.data) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.gated_in_fraction, 1.0);
        assert!(!out.all_gated_out);
    }

    #[test]
    fn zero_gate_is_flagged_with_zero_loss_and_grad() {
        let mut rng = Rng::new(4);
        let pred = random_probmap(&mut rng, 2, 2, 2);
        let y = random_labels(&mut rng, 2, 2, 2);
        let gate = Grid::filled(2, 2, 0.0);
        let out = unsupervised_ce(&pred, &y, &gate, UnsupNorm::GatedPixels).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_logits.data.iter().all(|&g| g == 0.0));
        assert!(out.all_gated_out);
        assert_eq!(out.gated_in_fraction, 0.0);
    }

    #[test]
    fn half_gate_matches_bruteforce_in_both_norms() {
        let mut rng = Rng::new(5);
        let pred = random_probmap(&mut rng, 2, 2, 2);
        let y = random_labels(&mut rng, 2, 2, 2);
        let gate = Grid::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();

        let mut raw_sum = 0.0;
        for px in [0usize, 3] {
            let t = y.data()[px] as usize;
            raw_sum -= pred.data()[t * 4 + px].max(LOG_EPS).ln();
        }
        let gated = unsupervised_ce(&pred, &y, &gate, UnsupNorm::GatedPixels).unwrap();
        assert!((gated.loss - raw_sum / 2.0).abs() < 1e-12);
        assert_eq!(gated.gated_in_fraction, 0.5);

        let all = unsupervised_ce(&pred, &y, &gate, UnsupNorm::AllPixels).unwrap();
        assert!((all.loss - raw_sum / 4.0).abs() < 1e-12);

        // Gradient zero exactly at gated-out pixels.
        for px in [1usize, 2] {
            for ch in 0..2 {
                assert_eq!(gated.grad_logits.data[ch * 4 + px], 0.0);
            }
        }
    }

    #[test]
    fn unnormalized_gated_sum_is_monotone_in_gate() {
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let pred = random_probmap(&mut rng, 3, 3, 3);
            let y = random_labels(&mut rng, 3, 3, 3);
            let mut bits: Vec<f64> = (0..9).map(|_| (rng.below(2)) as f64).collect();
            let off = rng.below(9) as usize;
            bits[off] = 0.0;
            let gate = Grid::new(3, 3, bits.clone()).unwrap();
            bits[off] = 1.0;
            let gate_plus = Grid::new(3, 3, bits).unwrap();

            let sum_of = |g: &Grid| {
                let out = unsupervised_ce(&pred, &y, g, UnsupNorm::AllPixels).unwrap();
                out.loss * 9.0
            };
            assert!(sum_of(&gate_plus) >= sum_of(&gate) - 1e-12);
        }
    }

    #[test]
    fn combined_loss_arithmetic() {
        assert_eq!(combined_loss(1.5, 9.0, 0.0), 1.5);
        assert_eq!(combined_loss(1.0, 2.0, 0.5), 2.0);
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let pred = random_probmap(&mut rng, 4, 3, 2);
            let y = random_labels(&mut rng, 4, 3, 2);
            let (loss, _) = supervised_ce(&pred, &y).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn confidence_gate_thresholds() {
        let y = LabelMap::new(1, 1, 4, vec![2]).unwrap();
        let hot = one_hot(&y);
        assert_eq!(confidence_gate(&hot, 0.99).unwrap().data(), &[1.0]);

        let uniform = ProbMap::new(4, 1, 1, vec![0.25; 4]).unwrap();
        assert_eq!(confidence_gate(&uniform, 0.25).unwrap().data(), &[1.0]);
        assert_eq!(confidence_gate(&uniform, 0.26).unwrap().data(), &[0.0]);

        let p = ProbMap::new(2, 1, 1, vec![0.9, 0.1]).unwrap();
        assert_eq!(confidence_gate(&p, 0.95).unwrap().data(), &[0.0]);

        assert!(confidence_gate(&p, 0.0).is_err());
        assert!(confidence_gate(&p, 1.5).is_err());
    }

    #[test]
    fn loss_report_total_invariant() {
        let r = LossReport::new(1.25, 0.5, 2.0, 0.75, false);
        assert_eq!(r.total, 1.25 + 2.0 * 0.5);
        let s = LossReport::supervised_only(0.8, 1.0);
        assert_eq!(s.total, 0.8);
        assert!(s.all_gated_out);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let pred = ProbMap::new(2, 2, 2, vec![0.5; 8]).unwrap();
        let bad_y = LabelMap::filled(2, 3, 2, 0).unwrap();
        assert!(supervised_ce(&pred, &bad_y).is_err());
        let bad_c = LabelMap::filled(2, 2, 3, 0).unwrap();
        assert!(supervised_ce(&pred, &bad_c).is_err());
        let y = LabelMap::filled(2, 2, 2, 0).unwrap();
        let bad_gate = Grid::filled(1, 2, 1.0);
        assert!(unsupervised_ce(&pred, &y, &bad_gate, UnsupNorm::GatedPixels).is_err());
    }
}
