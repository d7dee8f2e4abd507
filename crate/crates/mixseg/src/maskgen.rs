//! Mixing-mask generators: CutMix, ClassMix, and ComplexMix.
//!
//! All generators are pure functions of their inputs plus a caller-owned
//! [`Rng`], so the same `(inputs, seed)` always yields the same mask. The
//! draw order is part of each function's contract (oracle tests re-derive
//! masks from the same seed):
//!
//! - `cutmix_mask`: one `next_f64` (aspect), then `below` for top, `below`
//!   for left.
//! - `classmix_mask`: one partial Fisher-Yates draw of `floor(m/2)` classes
//!   out of the `m` classes present, in ascending class order.
//! - `complexmix_mask`: for each block in row-major order, one partial
//!   Fisher-Yates draw of `floor(C/2)` classes from the sampling domain.

use crate::error::{Error, Result};
use crate::grid::{LabelMap, MixMask};
use crate::rng::Rng;

/// Whether ComplexMix samples each block's class subset from all `C` classes
/// or only from the classes present in that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSampling {
    /// Draw `floor(C/2)` of all `C` classes per block.
    #[default]
    AllClasses,
    /// Draw `floor(m/2)` of the `m` classes present in the block (ablation).
    PresentOnly,
}

/// Configuration for the ComplexMix strategy.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ComplexMixSpec {
    /// Candidate block-grid sizes; one is drawn per iteration.
    pub p_choices: Vec<usize>,
    /// Per-block class sampling domain.
    #[serde(default)]
    pub sampling: ClassSampling,
}

impl Default for ComplexMixSpec {
    fn default() -> Self {
        ComplexMixSpec {
            p_choices: vec![4, 16, 64, 128],
            sampling: ClassSampling::AllClasses,
        }
    }
}

impl ComplexMixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p_choices.is_empty() {
            return Err(Error::invalid("p_choices must be non-empty"));
        }
        if self.p_choices.iter().any(|&p| p == 0) {
            return Err(Error::invalid("every p choice must be >= 1"));
        }
        Ok(())
    }
}

/// A generated mask plus a degenerate-mix warning. A degenerate mask selects
/// nothing, so the mixed image equals the second input unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskOutcome {
    pub mask: MixMask,
    pub degenerate: bool,
}

/// Random axis-aligned rectangle covering half the grid.
///
/// The rectangle area is within one pixel of `floor(h*w/2)`; the aspect ratio
/// (width over height) targets a log-uniform draw from `[1/2, 2]` and the
/// position is uniform among in-bounds placements.
pub fn cutmix_mask(h: usize, w: usize, rng: &mut Rng) -> Result<MixMask> {
    if h * w < 2 {
        return Err(Error::DegenerateGrid(format!(
            "cutmix needs at least 2 pixels, got {h}x{w}"
        )));
    }
    let target = (h * w) / 2;
    let aspect = {
        let u = rng.range_f64(-1.0, 1.0);
        u.exp2() // 2^u, log-uniform over [1/2, 2]
    };
    let ideal_h = ((target as f64) / aspect).sqrt();
    let (rect_h, rect_w) = best_rectangle(h, w, target, ideal_h);

    let top = rng.below((h - rect_h + 1) as u64) as usize;
    let left = rng.below((w - rect_w + 1) as u64) as usize;

    let mut bits = vec![0u8; h * w];
    for i in top..top + rect_h {
        bits[i * w + left..i * w + left + rect_w].fill(1);
    }
    MixMask::new(h, w, bits)
}

/// Pick integer rectangle sides with area within +/-1 of `target`, preferring
/// the height closest to `ideal_h`. Falls back to the minimum area error if no
/// side pair lands within one pixel (does not occur for grids with h*w >= 2).
fn best_rectangle(h: usize, w: usize, target: usize, ideal_h: f64) -> (usize, usize) {
    let mut exact: Option<(usize, usize, f64)> = None; // area error <= 1
    let mut fallback: Option<(usize, usize, usize, f64)> = None;
    for rh in 1..=h {
        for rw in [target / rh, target / rh + 1] {
            let rw = rw.clamp(1, w);
            let area_err = (rh * rw).abs_diff(target);
            let h_dist = (rh as f64 - ideal_h).abs();
            if area_err <= 1 {
                if exact.map_or(true, |(_, _, d)| h_dist < d) {
                    exact = Some((rh, rw, h_dist));
                }
            }
            if fallback.map_or(true, |(_, _, e, d)| (area_err, h_dist) < (e, d)) {
                fallback = Some((rh, rw, area_err, h_dist));
            }
        }
    }
    match (exact, fallback) {
        (Some((rh, rw, _)), _) => (rh, rw),
        (None, Some((rh, rw, _, _))) => (rh, rw),
        (None, None) => unreachable!("grid has at least one candidate"),
    }
}

/// Mask selecting half of the classes present in `labels`.
///
/// A subset of size `floor(m/2)` of the `m` present classes is drawn
/// uniformly; a pixel is set iff its label is in the subset. With a single
/// present class the subset is empty and the outcome is flagged degenerate.
pub fn classmix_mask(labels: &LabelMap, rng: &mut Rng) -> MaskOutcome {
    let present = labels.present_classes();
    let k = present.len() / 2;
    let picked = rng.choose_k(present.len(), k);
    let mut selected = [false; 256];
    for idx in picked {
        selected[present[idx] as usize] = true;
    }
    let bits = labels
        .data()
        .iter()
        .map(|&c| selected[c as usize] as u8)
        .collect();
    MaskOutcome {
        mask: MixMask::new(labels.height(), labels.width(), bits).expect("bits match labels"),
        degenerate: k == 0,
    }
}

/// ComplexMix mask: split the grid into `p x p` blocks and select half the
/// classes independently per block.
///
/// Blocks have `floor(H/p) x floor(W/p)` pixels; the last block row/column
/// absorbs any remainder. Per block, `floor(C/2)` distinct classes are drawn
/// uniformly from all `C` classes (or from the block's present classes, see
/// [`ClassSampling`]); a pixel is set iff its label is in its block's subset.
pub fn complexmix_mask(labels: &LabelMap, p: usize, rng: &mut Rng) -> Result<MixMask> {
    complexmix_mask_with(labels, p, ClassSampling::AllClasses, rng)
}

pub fn complexmix_mask_with(
    labels: &LabelMap,
    p: usize,
    sampling: ClassSampling,
    rng: &mut Rng,
) -> Result<MixMask> {
    let (h, w) = (labels.height(), labels.width());
    if p == 0 || p > h.min(w) {
        return Err(Error::invalid(format!(
            "block grid size {p} outside [1, min({h}, {w})]"
        )));
    }
    let num_classes = labels.num_classes();
    let base_h = h / p;
    let base_w = w / p;
    let mut bits = vec![0u8; h * w];
    for bi in 0..p {
        let row_end = if bi == p - 1 { h } else { (bi + 1) * base_h };
        for bj in 0..p {
            let col_end = if bj == p - 1 { w } else { (bj + 1) * base_w };
            let rows = bi * base_h..row_end;
            let cols = bj * base_w..col_end;

            let mut selected = [false; 256];
            match sampling {
                ClassSampling::AllClasses => {
                    for c in rng.choose_k(num_classes, num_classes / 2) {
                        selected[c] = true;
                    }
                }
                ClassSampling::PresentOnly => {
                    let present = block_present_classes(labels, rows.clone(), cols.clone());
                    for idx in rng.choose_k(present.len(), present.len() / 2) {
                        selected[present[idx] as usize] = true;
                    }
                }
            }

            for i in rows.clone() {
                for j in cols.clone() {
                    bits[i * w + j] = selected[labels.get(i, j) as usize] as u8;
                }
            }
        }
    }
    MixMask::new(h, w, bits)
}

fn block_present_classes(
    labels: &LabelMap,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Vec<u8> {
    let mut seen = [false; 256];
    for i in rows {
        for j in cols.clone() {
            seen[labels.get(i, j) as usize] = true;
        }
    }
    (0..labels.num_classes())
        .filter(|&c| seen[c])
        .map(|c| c as u8)
        .collect()
}

/// Draw a block-grid size for the current image: uniform over the spec's
/// choices after dropping values larger than `min(h, w)`.
pub fn sample_p(spec: &ComplexMixSpec, h: usize, w: usize, rng: &mut Rng) -> Result<usize> {
    spec.validate()?;
    let feasible: Vec<usize> = spec
        .p_choices
        .iter()
        .copied()
        .filter(|&p| p <= h.min(w))
        .collect();
    if feasible.is_empty() {
        return Err(Error::invalid(format!(
            "no p choice in {:?} fits a {h}x{w} grid",
            spec.p_choices
        )));
    }
    Ok(feasible[rng.below(feasible.len() as u64) as usize])
}
