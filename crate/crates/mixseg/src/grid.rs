//! Dense numeric grids shared by every other module: images, label maps,
//! per-pixel class distributions, binary mixing masks, and real-valued grids.
//!
//! Layouts are fixed so file formats stay bit-exact: [`Image`] and [`ProbMap`]
//! are channel-major (`data[c * H * W + i * W + j]`), [`LabelMap`], [`MixMask`]
//! and [`Grid`] are row-major. All types are immutable after construction;
//! invariant violations are construction errors, never silent clamps.

use crate::error::{ensure_same_hw, Error, Result};

/// Tolerance for the per-pixel probability sum of a [`ProbMap`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// An RGB-like image: `channels` planes of `H x W` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("image value {v} outside [0, 1]")));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    /// One channel plane as a contiguous slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// Per-pixel class indices over an `H x W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("label map dimensions must be positive"));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::invalid(format!(
                "num_classes {num_classes} outside [1, 256]"
            )));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "label data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| **v as usize >= num_classes) {
            return Err(Error::invalid(format!(
                "label {v} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            num_classes,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, class: u8) -> Result<Self> {
        LabelMap::new(height, width, num_classes, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.width + j]
    }

    /// Ascending list of the distinct classes that occur in the map.
    pub fn present_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..self.num_classes)
            .filter(|&c| seen[c])
            .map(|c| c as u8)
            .collect()
    }
}

/// Per-pixel class probability distributions, class-major `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    num_classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(num_classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("prob map dimensions must be positive"));
        }
        if data.len() != num_classes * height * width {
            return Err(Error::invalid(format!(
                "prob data length {} != {}x{}x{}",
                data.len(),
                num_classes,
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        let hw = height * width;
        for px in 0..hw {
            let sum: f64 = (0..num_classes).map(|c| data[c * hw + px]).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid(format!(
                    "pixel {px} probabilities sum to {sum}, not 1 within {PROB_SUM_TOL}"
                )));
            }
        }
        Ok(ProbMap {
            num_classes,
            height,
            width,
            data,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }
}

/// Binary `H x W` mask driving image/label blending: 1 selects the first
/// input, 0 the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl MixMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if bits.len() != height * width {
            return Err(Error::invalid(format!(
                "mask length {} != {}x{}",
                bits.len(),
                height,
                width
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask bits must be 0 or 1"));
        }
        Ok(MixMask {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MixMask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        MixMask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j] == 1
    }

    pub fn complement(&self) -> MixMask {
        MixMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    /// Number of set pixels.
    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }
}

/// Real-valued `H x W` grid (confidence maps, per-pixel loss gates).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "grid length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }
}

/// Class index of the maximum probability at each pixel. Ties break to the
/// lowest class index.
pub fn argmax_labels(p: &ProbMap) -> LabelMap {
    let hw = p.height() * p.width();
    let data = p.data();
    let mut out = vec![0u8; hw];
    for (px, slot) in out.iter_mut().enumerate() {
        let mut best_c = 0usize;
        let mut best = data[px];
        for c in 1..p.num_classes() {
            let v = data[c * hw + px];
            if v > best {
                best = v;
                best_c = c;
            }
        }
        *slot = best_c as u8;
    }
    LabelMap {
        height: p.height(),
        width: p.width(),
        num_classes: p.num_classes(),
        data: out,
    }
}

/// Per-pixel maximum class probability; values lie in `[1/C, 1]`.
pub fn confidence_map(p: &ProbMap) -> Grid {
    let hw = p.height() * p.width();
    let data = p.data();
    let mut out = vec![0.0f64; hw];
    for (px, slot) in out.iter_mut().enumerate() {
        let mut best = data[px];
        for c in 1..p.num_classes() {
            best = best.max(data[c * hw + px]);
        }
        *slot = best;
    }
    Grid {
        height: p.height(),
        width: p.width(),
        data: out,
    }
}

/// One-hot encoding of a label map as a [`ProbMap`].
pub fn one_hot(y: &LabelMap) -> ProbMap {
    let hw = y.height() * y.width();
    let mut data = vec![0.0f64; y.num_classes() * hw];
    for (px, &label) in y.data().iter().enumerate() {
        data[label as usize * hw + px] = 1.0;
    }
    ProbMap {
        num_classes: y.num_classes(),
        height: y.height(),
        width: y.width(),
        data,
    }
}

pub(crate) fn same_hw_mask(
    context: &'static str,
    h: usize,
    w: usize,
    m: &MixMask,
) -> Result<()> {
    ensure_same_hw(context, (h, w), (m.height(), m.width()))
}
