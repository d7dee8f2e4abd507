//! C ABI for the mixseg library.
//!
//! Exposes the mask generators, mask-driven mixing, mIoU evaluation, and the
//! dataset-generation / training pipelines behind opaque handles and integer
//! status codes, so other languages can bind without Rust types crossing the
//! boundary. The generated header lands in `include/mixseg.h`.
//!
//! Conventions:
//!
//! - Functions return [`MixsegStatus`]; `MixsegStatusOk` is 0.
//! - On failure, callers may read a UTF-8 description via
//!   [`mixseg_last_error_message`] (thread-local, valid until the next
//!   failing call on the same thread).
//! - `*_new` outputs are owned by the caller and released with the matching
//!   `*_free`; `free` functions accept null.
//! - Buffers are row-major; image buffers are channel-major planes
//!   (`channels * height * width`), matching the library layout.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::Path;

use mixseg::config::{parse_gen_data_config, parse_train_config};
use mixseg::data::build_dataset;
use mixseg::error::Error;
use mixseg::grid::{Grid, Image, LabelMap, MixMask};
use mixseg::maskgen::{classmix_mask, complexmix_mask, cutmix_mask, sample_p, ComplexMixSpec};
use mixseg::metrics::ConfusionMatrix;
use mixseg::mixer::{mix_images, mix_labels, mix_weights};
use mixseg::rng::Rng;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixsegStatus {
    MixsegStatusOk = 0,
    MixsegStatusNullPointer = 1,
    MixsegStatusInvalidArgument = 2,
    MixsegStatusDegenerate = 3,
    MixsegStatusIo = 4,
    MixsegStatusRuntime = 5,
}

use MixsegStatus::*;

/// Opaque deterministic random generator.
pub struct MixsegRng(Rng);

/// Opaque per-pixel class-index map.
pub struct MixsegLabelMap(LabelMap);

/// Opaque binary mixing mask.
pub struct MixsegMask(MixMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MixsegStatus {
    match err {
        Error::DegenerateGrid(_) => MixsegStatusDegenerate,
        Error::Io { .. } => MixsegStatusIo,
        Error::InvalidArgument(_) | Error::ShapeMismatch { .. } | Error::Config(_) => {
            MixsegStatusInvalidArgument
        }
        _ => MixsegStatusRuntime,
    }
}

fn fail(err: Error) -> MixsegStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn fail_null(what: &str) -> MixsegStatus {
    set_error(format!("null pointer: {what}"));
    MixsegStatusNullPointer
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mixseg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mixseg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Create a deterministic generator. Identical seeds yield identical draw
/// sequences on every platform.
#[no_mangle]
pub extern "C" fn mixseg_rng_new(seed: u64) -> *mut MixsegRng {
    Box::into_raw(Box::new(MixsegRng(Rng::new(seed))))
}

/// Derive an independent child generator (for parallel streams).
///
/// # Safety
/// `rng` must be a live pointer from [`mixseg_rng_new`] or this function.
#[no_mangle]
pub unsafe extern "C" fn mixseg_rng_fork(rng: *const MixsegRng, stream_id: u64) -> *mut MixsegRng {
    if rng.is_null() {
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(MixsegRng((*rng).0.fork(stream_id))))
}

/// # Safety
/// `rng` must be null or a pointer previously returned by a `mixseg_rng_*`
/// constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixseg_rng_free(rng: *mut MixsegRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// Build a label map from `height * width` class indices (row-major), each
/// less than `num_classes`.
///
/// # Safety
/// `data` must point to `height * width` readable bytes; `out` must be a
/// valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn mixseg_labelmap_new(
    height: usize,
    width: usize,
    num_classes: usize,
    data: *const u8,
    out: *mut *mut MixsegLabelMap,
) -> MixsegStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if data.is_null() {
        return fail_null("data");
    }
    let slice = std::slice::from_raw_parts(data, height.saturating_mul(width));
    match LabelMap::new(height, width, num_classes, slice.to_vec()) {
        Ok(map) => {
            *out = Box::into_raw(Box::new(MixsegLabelMap(map)));
            MixsegStatusOk
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `map` must be null or a pointer previously returned by
/// [`mixseg_labelmap_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixseg_labelmap_free(map: *mut MixsegLabelMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

unsafe fn write_mask(out: *mut *mut MixsegMask, mask: MixMask) -> MixsegStatus {
    *out = Box::into_raw(Box::new(MixsegMask(mask)));
    MixsegStatusOk
}

/// Random rectangle covering half the grid (CutMix).
///
/// # Safety
/// `rng` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mixseg_cutmix_mask(
    height: usize,
    width: usize,
    rng: *mut MixsegRng,
    out: *mut *mut MixsegMask,
) -> MixsegStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if rng.is_null() {
        return fail_null("rng");
    }
    match cutmix_mask(height, width, &mut (*rng).0) {
        Ok(mask) => write_mask(out, mask),
        Err(e) => fail(e),
    }
}

/// Half of the classes present in `labels` (ClassMix). `*degenerate` is set
/// to 1 when only one class is present (the mask is then all zero).
///
/// # Safety
/// `labels`, `rng`, `out`, and `degenerate` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mixseg_classmix_mask(
    labels: *const MixsegLabelMap,
    rng: *mut MixsegRng,
    out: *mut *mut MixsegMask,
    degenerate: *mut c_int,
) -> MixsegStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if labels.is_null() || rng.is_null() || degenerate.is_null() {
        return fail_null("labels/rng/degenerate");
    }
    let outcome = classmix_mask(&(*labels).0, &mut (*rng).0);
    *degenerate = outcome.degenerate as c_int;
    write_mask(out, outcome.mask)
}

/// Split into `p x p` blocks and select `floor(C/2)` classes per block
/// (ComplexMix).
///
/// # Safety
/// `labels`, `rng`, and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mixseg_complexmix_mask(
    labels: *const MixsegLabelMap,
    p: usize,
    rng: *mut MixsegRng,
    out: *mut *mut MixsegMask,
) -> MixsegStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if labels.is_null() || rng.is_null() {
        return fail_null("labels/rng");
    }
    match complexmix_mask(&(*labels).0, p, &mut (*rng).0) {
        Ok(mask) => write_mask(out, mask),
        Err(e) => fail(e),
    }
}

/// Draw a block-grid size uniformly from `p_choices` after dropping values
/// larger than `min(height, width)`.
///
/// # Safety
/// `p_choices` must point to `num_choices` readable values; `rng` and `out`
/// must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mixseg_sample_p(
    p_choices: *const usize,
    num_choices: usize,
    height: usize,
    width: usize,
    rng: *mut MixsegRng,
    out: *mut usize,
) -> MixsegStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if p_choices.is_null() || rng.is_null() {
        return fail_null("p_choices/rng");
    }
    let spec = ComplexMixSpec {
        p_choices: std::slice::from_raw_parts(p_choices, num_choices).to_vec(),
        ..Default::default()
    };
    match sample_p(&spec, height, width, &mut (*rng).0) {
        Ok(p) => {
            *out = p;
            MixsegStatusOk
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `mask` must be null or a pointer previously produced by a mask
/// constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mask_free(mask: *mut MixsegMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Number of set pixels, or 0 for null.
///
/// # Safety
/// `mask` must be null or a live mask pointer.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mask_popcount(mask: *const MixsegMask) -> usize {
    if mask.is_null() {
        return 0;
    }
    (*mask).0.popcount()
}

/// Copy the mask bits (0/1, row-major) into `buf`.
///
/// # Safety
/// `mask` must be live; `buf` must hold at least `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mask_copy_bits(
    mask: *const MixsegMask,
    buf: *mut u8,
    buf_len: usize,
) -> MixsegStatus {
    if mask.is_null() || buf.is_null() {
        return fail_null("mask/buf");
    }
    let bits = (*mask).0.bits();
    if buf_len < bits.len() {
        set_error(format!("buffer {buf_len} bytes, mask needs {}", bits.len()));
        return MixsegStatusInvalidArgument;
    }
    std::ptr::copy_nonoverlapping(bits.as_ptr(), buf, bits.len());
    MixsegStatusOk
}

/// Blend two channel-major image buffers under the mask: `out` takes `a`
/// where the mask is 1, `b` where 0. Buffers hold
/// `channels * height * width` values in `[0, 1]`.
///
/// # Safety
/// `a`, `b`, and `out` must each point to `channels * height * width`
/// readable (writable for `out`) doubles; `mask` must be live.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mix_images(
    a: *const f64,
    b: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    mask: *const MixsegMask,
    out: *mut f64,
) -> MixsegStatus {
    if a.is_null() || b.is_null() || out.is_null() || mask.is_null() {
        return fail_null("a/b/mask/out");
    }
    let len = channels * height * width;
    let build = |ptr: *const f64| {
        Image::new(
            channels,
            height,
            width,
            std::slice::from_raw_parts(ptr, len).to_vec(),
        )
    };
    let (ia, ib) = match (build(a), build(b)) {
        (Ok(ia), Ok(ib)) => (ia, ib),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    match mix_images(&ia, &ib, &(*mask).0) {
        Ok(mixed) => {
            std::ptr::copy_nonoverlapping(mixed.data().as_ptr(), out, len);
            MixsegStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Blend two label maps under the mask.
///
/// # Safety
/// `a`, `b`, `mask` must be live; `out` receives a new owned map.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mix_labels(
    a: *const MixsegLabelMap,
    b: *const MixsegLabelMap,
    mask: *const MixsegMask,
    out: *mut *mut MixsegLabelMap,
) -> MixsegStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if a.is_null() || b.is_null() || mask.is_null() {
        return fail_null("a/b/mask");
    }
    match mix_labels(&(*a).0, &(*b).0, &(*mask).0) {
        Ok(mixed) => {
            *out = Box::into_raw(Box::new(MixsegLabelMap(mixed)));
            MixsegStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Blend two per-pixel weight grids (row-major, `height * width`) under the
/// mask.
///
/// # Safety
/// `a`, `b`, and `out` must each point to `height * width` doubles; `mask`
/// must be live.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mix_weights(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    mask: *const MixsegMask,
    out: *mut f64,
) -> MixsegStatus {
    if a.is_null() || b.is_null() || out.is_null() || mask.is_null() {
        return fail_null("a/b/mask/out");
    }
    let len = height * width;
    let build =
        |ptr: *const f64| Grid::new(height, width, std::slice::from_raw_parts(ptr, len).to_vec());
    let (ga, gb) = match (build(a), build(b)) {
        (Ok(ga), Ok(gb)) => (ga, gb),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    match mix_weights(&ga, &gb, &(*mask).0) {
        Ok(mixed) => {
            std::ptr::copy_nonoverlapping(mixed.data().as_ptr(), out, len);
            MixsegStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Mean IoU between a predicted and a ground-truth label map (classes absent
/// from both are excluded from the mean).
///
/// # Safety
/// `pred`, `truth`, and `out_miou` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mixseg_mean_iou(
    pred: *const MixsegLabelMap,
    truth: *const MixsegLabelMap,
    out_miou: *mut f64,
) -> MixsegStatus {
    if out_miou.is_null() {
        return fail_null("out_miou");
    }
    if pred.is_null() || truth.is_null() {
        return fail_null("pred/truth");
    }
    let mut cm = ConfusionMatrix::new((*truth).0.num_classes());
    if let Err(e) = cm.accumulate(&(*pred).0, &(*truth).0) {
        return fail(e);
    }
    match cm.mean_iou() {
        Some(miou) => {
            *out_miou = miou;
            MixsegStatusOk
        }
        None => {
            set_error("no class defined in either map".to_string());
            MixsegStatusInvalidArgument
        }
    }
}

unsafe fn cstr_to_str<'a>(ptr: *const c_char) -> Result<&'a str, MixsegStatus> {
    if ptr.is_null() {
        return Err(fail_null("config_json"));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("config_json is not valid UTF-8".to_string());
        MixsegStatusInvalidArgument
    })
}

/// Generate a synthetic dataset from a JSON config string (same schema as
/// `mixseg gen-data`). Writes PPM/PGM files and the split manifest under the
/// config's `out_dir` (resolved against `MIXSEG_OUT_DIR`).
///
/// # Safety
/// `config_json` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn mixseg_generate_dataset(config_json: *const c_char) -> MixsegStatus {
    let text = match cstr_to_str(config_json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let cfg = match parse_gen_data_config(text) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let out_dir = mixseg::cli::resolve_path(Path::new(&cfg.out_dir));
    let result = build_dataset(
        &cfg.scene_spec(),
        cfg.train_images,
        cfg.val_images,
        cfg.labeled_fraction,
        cfg.seed,
    )
    .and_then(|ds| {
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        mixseg::data::write_dataset(&ds, &out_dir)
    });
    match result {
        Ok(()) => MixsegStatusOk,
        Err(e) => fail(e),
    }
}

/// Run one training experiment from a JSON config string (same schema as
/// `mixseg train`). Writes logs, checkpoints, and results under the config's
/// `out_dir`; the final student validation mIoU lands in `out_miou`.
///
/// # Safety
/// `config_json` must be a NUL-terminated UTF-8 string; `out_miou` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mixseg_train(
    config_json: *const c_char,
    out_miou: *mut f64,
) -> MixsegStatus {
    if out_miou.is_null() {
        return fail_null("out_miou");
    }
    let text = match cstr_to_str(config_json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let cfg = match parse_train_config(text) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match mixseg::cli::train_from_config(&cfg) {
        Ok(summary) => {
            *out_miou = summary.val_miou;
            MixsegStatusOk
        }
        Err(e) => fail(e),
    }
}
