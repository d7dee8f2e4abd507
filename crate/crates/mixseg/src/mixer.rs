//! Blend image pairs, label pairs, and per-pixel weight grids under a binary
//! mask: the output takes the first input where the mask is 1 and the second
//! where it is 0. Every output pixel equals the corresponding pixel of exactly
//! one input, so mixing preserves validity of images, labels, and weights.

use crate::error::{ensure_same_hw, Error, Result};
use crate::grid::{same_hw_mask, Grid, Image, LabelMap, MixMask};

/// `out = mask * a + (1 - mask) * b`, applied per channel.
pub fn mix_images(a: &Image, b: &Image, m: &MixMask) -> Result<Image> {
    ensure_same_hw("mix_images", (a.height(), a.width()), (b.height(), b.width()))?;
    same_hw_mask("mix_images", a.height(), a.width(), m)?;
    if a.channels() != b.channels() {
        return Err(Error::ShapeMismatch {
            context: "mix_images channels",
            expected: a.channels().to_string(),
            actual: b.channels().to_string(),
        });
    }
    let hw = a.height() * a.width();
    let mut data = Vec::with_capacity(a.channels() * hw);
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        data.extend(
            m.bits()
                .iter()
                .zip(pa.iter().zip(pb))
                .map(|(&bit, (&va, &vb))| if bit == 1 { va } else { vb }),
        );
    }
    Image::new(a.channels(), a.height(), a.width(), data)
}

/// Per-pixel label selection under the mask.
pub fn mix_labels(ya: &LabelMap, yb: &LabelMap, m: &MixMask) -> Result<LabelMap> {
    ensure_same_hw(
        "mix_labels",
        (ya.height(), ya.width()),
        (yb.height(), yb.width()),
    )?;
    same_hw_mask("mix_labels", ya.height(), ya.width(), m)?;
    if ya.num_classes() != yb.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "mix_labels num_classes",
            expected: ya.num_classes().to_string(),
            actual: yb.num_classes().to_string(),
        });
    }
    let data = m
        .bits()
        .iter()
        .zip(ya.data().iter().zip(yb.data()))
        .map(|(&bit, (&va, &vb))| if bit == 1 { va } else { vb })
        .collect();
    LabelMap::new(ya.height(), ya.width(), ya.num_classes(), data)
}

/// Per-pixel weight selection under the mask. Carries confidence gates through
/// a mix so each pixel of the mixed pseudo-label keeps its source's gate.
pub fn mix_weights(wa: &Grid, wb: &Grid, m: &MixMask) -> Result<Grid> {
    ensure_same_hw(
        "mix_weights",
        (wa.height(), wa.width()),
        (wb.height(), wb.width()),
    )?;
    same_hw_mask("mix_weights", wa.height(), wa.width(), m)?;
    let data = m
        .bits()
        .iter()
        .zip(wa.data().iter().zip(wb.data()))
        .map(|(&bit, (&va, &vb))| if bit == 1 { va } else { vb })
        .collect();
    Grid::new(wa.height(), wa.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn image_const(v: f64) -> Image {
        Image::new(1, 2, 2, vec![v; 4]).unwrap()
    }

    #[test]
    fn all_ones_mask_returns_first_input() {
        let (a, b) = (image_const(1.0), image_const(0.0));
        let m = MixMask::ones(2, 2);
        assert_eq!(mix_images(&a, &b, &m).unwrap(), a);
    }

    #[test]
    fn all_zeros_mask_returns_second_input() {
        let (a, b) = (image_const(1.0), image_const(0.0));
        let m = MixMask::zeros(2, 2);
        assert_eq!(mix_images(&a, &b, &m).unwrap(), b);
    }

    #[test]
    fn checkerboard_selection() {
        let (a, b) = (image_const(1.0), image_const(0.0));
        let m = MixMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(mix_images(&a, &b, &m).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn label_mix_is_idempotent_on_equal_inputs() {
        let y = LabelMap::new(2, 3, 4, vec![0, 1, 2, 3, 1, 0]).unwrap();
        let m = MixMask::new(2, 3, vec![1, 0, 1, 0, 1, 0]).unwrap();
        assert_eq!(mix_labels(&y, &y, &m).unwrap(), y);
    }

    #[test]
    fn quadrant_labels_mix_matches_elementwise_oracle() {
        let mut rng = Rng::new(4);
        let ya = LabelMap::new(4, 4, 4, (0..16).map(|_| rng.below(4) as u8).collect()).unwrap();
        let yb = LabelMap::new(4, 4, 4, (0..16).map(|_| rng.below(4) as u8).collect()).unwrap();
        let m = MixMask::new(4, 4, (0..16).map(|_| rng.below(2) as u8).collect()).unwrap();
        let got = mix_labels(&ya, &yb, &m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if m.get(i, j) { ya.get(i, j) } else { yb.get(i, j) };
                assert_eq!(got.get(i, j), want);
            }
        }
    }

    #[test]
    fn weight_mix_of_indicator_inputs_reproduces_mask() {
        let wa = Grid::filled(3, 3, 1.0);
        let wb = Grid::filled(3, 3, 0.0);
        let mut rng = Rng::new(8);
        let m = MixMask::new(3, 3, (0..9).map(|_| rng.below(2) as u8).collect()).unwrap();
        let got = mix_weights(&wa, &wb, &m).unwrap();
        let expected: Vec<f64> = m.bits().iter().map(|&b| b as f64).collect();
        assert_eq!(got.data(), expected.as_slice());
    }

    #[test]
    fn random_weight_mix_matches_elementwise_oracle() {
        let mut rng = Rng::new(21);
        let wa = Grid::new(3, 3, (0..9).map(|_| rng.next_f64()).collect()).unwrap();
        let wb = Grid::new(3, 3, (0..9).map(|_| rng.next_f64()).collect()).unwrap();
        let m = MixMask::new(3, 3, (0..9).map(|_| rng.below(2) as u8).collect()).unwrap();
        let got = mix_weights(&wa, &wb, &m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if m.get(i, j) { wa.get(i, j) } else { wb.get(i, j) };
                assert_eq!(got.get(i, j), want);
            }
        }
    }

    #[test]
    fn complement_swaps_roles() {
        let mut rng = Rng::new(13);
        let a = Image::new(2, 3, 3, (0..18).map(|_| rng.next_f64()).collect()).unwrap();
        let b = Image::new(2, 3, 3, (0..18).map(|_| rng.next_f64()).collect()).unwrap();
        let m = MixMask::new(3, 3, (0..9).map(|_| rng.below(2) as u8).collect()).unwrap();
        assert_eq!(
            mix_images(&a, &b, &m).unwrap(),
            mix_images(&b, &a, &m.complement()).unwrap()
        );
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let a = Image::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let b = Image::new(1, 2, 3, vec![0.0; 6]).unwrap();
        let m = MixMask::zeros(2, 2);
        assert!(mix_images(&a, &b, &m).is_err());

        let b3 = Image::new(3, 2, 2, vec![0.0; 12]).unwrap();
        assert!(mix_images(&a, &b3, &m).is_err());

        let ya = LabelMap::filled(2, 2, 3, 0).unwrap();
        let yb = LabelMap::filled(2, 2, 4, 0).unwrap();
        assert!(mix_labels(&ya, &yb, &m).is_err());

        let wa = Grid::filled(2, 2, 0.5);
        let wb = Grid::filled(3, 2, 0.5);
        assert!(mix_weights(&wa, &wb, &m).is_err());
    }
}
