//! Synthetic shapes dataset, PPM/PGM file IO, and labeled/unlabeled split
//! management.
//!
//! Scenes are rasterized with integer/IEEE-exact arithmetic only (no libm in
//! the pixel path) so a fixed seed produces byte-identical datasets on every
//! platform. Images are quantized to the 8-bit grid at generation time, which
//! makes the in-memory dataset equal the one read back from disk.
//!
//! On-disk layout: `images/NNNN.ppm` (binary P6, maxval 255),
//! `labels/NNNN.pgm` (binary P5, maxval C-1), `split.json` (manifest).

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Image, LabelMap};
use crate::rng::{derive_seed, Rng};

/// Rng stream id for the labeled/unlabeled shuffle (image streams use the
/// image id).
const STREAM_SPLIT: u64 = 0x5F_11CE;

/// Scene generator parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapesSceneSpec {
    pub height: usize,
    pub width: usize,
    /// Background plus shape classes; shape kinds map onto classes `1..C`.
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Per-pixel noise scale added to each channel before clamping to [0, 1].
    pub noise_sigma: f64,
    /// Per-image color shift: each image offsets every class mean by a
    /// uniform draw from `[-color_jitter, color_jitter]` per channel. A small
    /// labeled set then undersamples the color distribution, which is what
    /// makes unlabeled images informative.
    pub color_jitter: f64,
    /// RGB mean per class; length must equal `num_classes`.
    pub class_colors: Vec<[f64; 3]>,
}

impl Default for ShapesSceneSpec {
    fn default() -> Self {
        ShapesSceneSpec {
            height: 32,
            width: 32,
            num_classes: 4,
            min_shapes: 1,
            max_shapes: 3,
            noise_sigma: 0.1,
            color_jitter: 0.3,
            class_colors: default_class_colors(4),
        }
    }
}

/// Class color table with mean intensities spaced 0.3 apart so the task is
/// learnable under noise without being trivial.
pub fn default_class_colors(num_classes: usize) -> Vec<[f64; 3]> {
    let base = [
        [0.05, 0.10, 0.15], // background, mean 0.1
        [0.70, 0.40, 0.10], // mean 0.4
        [0.50, 0.80, 0.80], // mean 0.7
        [0.95, 1.00, 1.00], // mean ~1.0
    ];
    (0..num_classes)
        .map(|c| base[c % base.len()])
        .collect()
}

impl ShapesSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("canvas dimensions must be positive"));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::invalid("num_classes must be in [2, 256]"));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::invalid("min_shapes > max_shapes"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if !(self.color_jitter >= 0.0 && self.color_jitter.is_finite()) {
            return Err(Error::invalid("color_jitter must be finite and >= 0"));
        }
        if self.class_colors.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "class_colors has {} entries for {} classes",
                self.class_colors.len(),
                self.num_classes
            )));
        }
        if self
            .class_colors
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid("class colors must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { top: usize, left: usize, h: usize, w: usize },
    Disk { cy: i64, cx: i64, r: i64 },
    Triangle { v: [(i64, i64); 3] },
}

impl Shape {
    fn contains(&self, i: usize, j: usize) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => {
                i >= top && i < top + h && j >= left && j < left + w
            }
            Shape::Disk { cy, cx, r } => {
                let (di, dj) = (i as i64 - cy, j as i64 - cx);
                di * di + dj * dj <= r * r
            }
            Shape::Triangle { v } => {
                let p = (i as i64, j as i64);
                let cross = |a: (i64, i64), b: (i64, i64), c: (i64, i64)| {
                    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
                };
                let d1 = cross(v[0], v[1], p);
                let d2 = cross(v[1], v[2], p);
                let d3 = cross(v[2], v[0], p);
                let has_neg = d1 < 0 || d2 < 0 || d3 < 0;
                let has_pos = d1 > 0 || d2 > 0 || d3 > 0;
                !(has_neg && has_pos)
            }
        }
    }
}

/// Sample one shape. Draw order: kind, then kind-specific geometry.
fn sample_shape(spec: &ShapesSceneSpec, rng: &mut Rng) -> (Shape, u8) {
    let (h, w) = (spec.height, spec.width);
    let kind = rng.below(3) as usize;
    let class = 1 + (kind % (spec.num_classes - 1)) as u8;
    let shape = match kind {
        0 => {
            let max_side_h = (h / 3).max(1) as u64;
            let max_side_w = (w / 3).max(1) as u64;
            let sh = ((h / 6).max(2) + rng.below(max_side_h) as usize).min(h);
            let sw = ((w / 6).max(2) + rng.below(max_side_w) as usize).min(w);
            let top = rng.below((h - sh + 1) as u64) as usize;
            let left = rng.below((w - sw + 1) as u64) as usize;
            Shape::Rect { top, left, h: sh, w: sw }
        }
        1 => {
            let m = h.min(w);
            let r = ((m / 8).max(2) + rng.below(((m / 6).max(1)) as u64) as usize) as i64;
            let cy = rng.below(h as u64) as i64;
            let cx = rng.below(w as u64) as i64;
            Shape::Disk { cy, cx, r }
        }
        _ => {
            // Reject needle-thin triangles a few times, then accept whatever.
            let mut v = [(0i64, 0i64); 3];
            for _attempt in 0..8 {
                v = [
                    (rng.below(h as u64) as i64, rng.below(w as u64) as i64),
                    (rng.below(h as u64) as i64, rng.below(w as u64) as i64),
                    (rng.below(h as u64) as i64, rng.below(w as u64) as i64),
                ];
                let twice_area = ((v[1].0 - v[0].0) * (v[2].1 - v[0].1)
                    - (v[1].1 - v[0].1) * (v[2].0 - v[0].0))
                    .abs();
                if twice_area as usize * 10 >= h * w {
                    break;
                }
            }
            Shape::Triangle { v }
        }
    };
    (shape, class)
}

fn rasterize(spec: &ShapesSceneSpec, shapes: &[(Shape, u8)]) -> LabelMap {
    let (h, w) = (spec.height, spec.width);
    let mut data = vec![0u8; h * w];
    // Back-to-front: later shapes overwrite, so the last one drawn is on top.
    for &(shape, class) in shapes {
        for i in 0..h {
            for j in 0..w {
                if shape.contains(i, j) {
                    data[i * w + j] = class;
                }
            }
        }
    }
    LabelMap::new(h, w, spec.num_classes, data).expect("rasterizer respects bounds")
}

/// Per-class color plus noise, clamped to [0, 1]. Draw order: one jitter
/// offset per class and channel, then per-pixel noise row-major with channels
/// innermost.
fn colorize(spec: &ShapesSceneSpec, labels: &LabelMap, rng: &mut Rng) -> Image {
    let (h, w) = (spec.height, spec.width);
    let colors: Vec<[f64; 3]> = spec
        .class_colors
        .iter()
        .map(|base| {
            let mut shifted = *base;
            for v in &mut shifted {
                *v += rng.range_f64(-spec.color_jitter, spec.color_jitter);
            }
            shifted
        })
        .collect();
    let mut data = vec![0.0f64; 3 * h * w];
    let hw = h * w;
    for px in 0..hw {
        let color = &colors[labels.data()[px] as usize];
        for ch in 0..3 {
            let v = color[ch] + spec.noise_sigma * rng.normal();
            data[ch * hw + px] = v.clamp(0.0, 1.0);
        }
    }
    Image::new(3, h, w, data).expect("values clamped to range")
}

/// Generate one scene: shapes rasterized back-to-front (label = topmost
/// shape's class, background 0), image = per-class color plus noise.
pub fn generate_scene(spec: &ShapesSceneSpec, rng: &mut Rng) -> Result<(Image, LabelMap)> {
    spec.validate()?;
    let span = spec.max_shapes - spec.min_shapes;
    let n_shapes = spec.min_shapes
        + if span > 0 {
            rng.below(span as u64 + 1) as usize
        } else {
            0
        };
    let shapes: Vec<(Shape, u8)> = (0..n_shapes).map(|_| sample_shape(spec, rng)).collect();
    let labels = rasterize(spec, &shapes);
    let image = colorize(spec, &labels, rng);
    Ok((image, labels))
}

/// Snap image values onto the 8-bit grid used by the PPM files, so in-memory
/// datasets equal their disk round-trip exactly.
pub fn quantize_image(img: &Image) -> Image {
    let data = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round() / 255.0)
        .collect();
    Image::new(img.channels(), img.height(), img.width(), data).expect("quantization stays in range")
}

/// Id sets for one experiment: which training images carry labels, which are
/// unlabeled, and the held-out validation pool.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitManifest {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl SplitManifest {
    /// The full training pool (labeled plus unlabeled), ascending.
    pub fn train_pool(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self.labeled.iter().chain(&self.unlabeled).copied().collect();
        pool.sort_unstable();
        pool
    }

    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<usize> = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.validation)
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::invalid("split id sets overlap"));
        }
        Ok(())
    }
}

/// Split train-pool ids `0..pool_size` into labeled/unlabeled by seeded
/// shuffle and prefix-take of `round(fraction * pool_size)`; validation ids
/// are the fixed disjoint block `pool_size..pool_size + validation_size`.
pub fn make_split(
    pool_size: usize,
    labeled_fraction: f64,
    validation_size: usize,
    rng: &mut Rng,
) -> Result<SplitManifest> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "labeled_fraction {labeled_fraction} outside (0, 1]"
        )));
    }
    let n_labeled = (labeled_fraction * pool_size as f64).round() as usize;
    if n_labeled == 0 {
        return Err(Error::invalid(format!(
            "labeled_fraction {labeled_fraction} yields zero labeled samples from a pool of {pool_size}"
        )));
    }
    let mut ids: Vec<usize> = (0..pool_size).collect();
    rng.shuffle(&mut ids);
    let mut labeled: Vec<usize> = ids[..n_labeled].to_vec();
    let mut unlabeled: Vec<usize> = ids[n_labeled..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(SplitManifest {
        labeled,
        unlabeled,
        validation: (pool_size..pool_size + validation_size).collect(),
        labeled_fraction,
        seed: rng.seed(),
    })
}

/// A fully-loaded dataset: images and labels indexed by id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<LabelMap>,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.labels.first().map_or(0, |l| l.num_classes())
    }
}

/// Build the dataset in memory: `train_images + val_images` scenes from
/// per-image forked rng streams, images quantized to the 8-bit grid, and a
/// seeded labeled/unlabeled split of the training pool.
pub fn build_dataset(
    scene: &ShapesSceneSpec,
    train_images: usize,
    val_images: usize,
    labeled_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    scene.validate()?;
    if train_images == 0 || val_images == 0 {
        return Err(Error::invalid("train_images and val_images must be positive"));
    }
    let total = train_images + val_images;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for id in 0..total {
        let mut rng = Rng::new(derive_seed(seed, id as u64));
        let (img, lbl) = generate_scene(scene, &mut rng)?;
        images.push(quantize_image(&img));
        labels.push(lbl);
    }
    let mut split_rng = Rng::new(derive_seed(seed, STREAM_SPLIT));
    let mut manifest = make_split(train_images, labeled_fraction, val_images, &mut split_rng)?;
    manifest.seed = seed;
    Ok(Dataset {
        images,
        labels,
        manifest,
    })
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Serialize an image as binary PPM (P6, maxval 255), values scaled by 255
/// and rounded to nearest.
pub fn ppm_bytes(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "PPM requires 3 channels, image has {}",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..3 {
                out.push((img.get(ch, i, j) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Serialize a label map as binary PGM (P5) with maxval `C - 1`.
pub fn pgm_bytes(labels: &LabelMap) -> Result<Vec<u8>> {
    let maxval = labels.num_classes() - 1;
    if maxval == 0 || maxval > 255 {
        return Err(Error::invalid(format!(
            "PGM maxval {maxval} outside [1, 255]; num_classes must be in [2, 256]"
        )));
    }
    let (h, w) = (labels.height(), labels.width());
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    out.extend_from_slice(labels.data());
    Ok(out)
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    atomic_write(path, &ppm_bytes(img)?)
}

pub fn write_pgm(labels: &LabelMap, path: &Path) -> Result<()> {
    atomic_write(path, &pgm_bytes(labels)?)
}

/// Parsed netpbm header: width, height, maxval, payload offset.
fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2], path: &str) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::parse(
            path,
            format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comments between tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::parse(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "expected integer in header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits are utf8")
            .parse()
            .map_err(|_| Error::parse(path, "header value overflow"))?;
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(path, "missing payload separator")),
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err(Error::parse(path, "zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(path, format!("unsupported maxval {maxval}")));
    }
    Ok((w, h, maxval, pos))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(bytes)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let loc = path.display().to_string();
    let (w, h, maxval, offset) = parse_netpbm_header(&bytes, b"P6", &loc)?;
    if maxval != 255 {
        return Err(Error::parse(&loc, format!("PPM maxval {maxval}, expected 255")));
    }
    let payload = &bytes[offset..];
    if payload.len() != 3 * h * w {
        return Err(Error::parse(
            &loc,
            format!("payload {} bytes, expected {}", payload.len(), 3 * h * w),
        ));
    }
    let hw = h * w;
    let mut data = vec![0.0f64; 3 * hw];
    for px in 0..hw {
        for ch in 0..3 {
            data[ch * hw + px] = payload[px * 3 + ch] as f64 / 255.0;
        }
    }
    Image::new(3, h, w, data)
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let bytes = read_file(path)?;
    let loc = path.display().to_string();
    let (w, h, maxval, offset) = parse_netpbm_header(&bytes, b"P5", &loc)?;
    let payload = &bytes[offset..];
    if payload.len() != h * w {
        return Err(Error::parse(
            &loc,
            format!("payload {} bytes, expected {}", payload.len(), h * w),
        ));
    }
    if let Some(&v) = payload.iter().find(|&&v| v as usize > maxval) {
        return Err(Error::parse(
            &loc,
            format!("class value {v} exceeds maxval {maxval}"),
        ));
    }
    LabelMap::new(h, w, maxval + 1, payload.to_vec())
}

fn image_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join("images").join(format!("{id:04}.ppm"))
}

fn label_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join("labels").join(format!("{id:04}.pgm"))
}

/// Write a dataset to `dir` in the standard layout.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.manifest.validate()?;
    for sub in ["images", "labels"] {
        fs::create_dir_all(dir.join(sub))
            .map_err(|e| Error::io(dir.join(sub).display().to_string(), e))?;
    }
    for (id, (img, lbl)) in ds.images.iter().zip(&ds.labels).enumerate() {
        write_ppm(img, &image_path(dir, id))?;
        write_pgm(lbl, &label_path(dir, id))?;
    }
    let manifest = serde_json::to_string_pretty(&ds.manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    atomic_write(&dir.join("split.json"), manifest.as_bytes())
}

/// Load a dataset directory written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("split.json");
    let manifest_text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: SplitManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))?;
    manifest.validate()?;

    let mut ids: Vec<usize> = manifest
        .labeled
        .iter()
        .chain(&manifest.unlabeled)
        .chain(&manifest.validation)
        .copied()
        .collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| i != id) {
        return Err(Error::parse(
            manifest_path.display().to_string(),
            "split ids are not contiguous from 0",
        ));
    }

    let mut images = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in 0..ids.len() {
        images.push(read_ppm(&image_path(dir, id))?);
        labels.push(read_pgm(&label_path(dir, id))?);
    }
    Ok(Dataset {
        images,
        labels,
        manifest,
    })
}
