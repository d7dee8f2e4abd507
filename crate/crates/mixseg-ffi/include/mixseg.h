/* C interface to the mixseg mixing-augmentation and training library. */

#ifndef MIXSEG_H
#define MIXSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum MixsegStatus {
  MIXSEG_STATUS_OK = 0,
  MIXSEG_STATUS_NULL_POINTER = 1,
  MIXSEG_STATUS_INVALID_ARGUMENT = 2,
  MIXSEG_STATUS_DEGENERATE = 3,
  MIXSEG_STATUS_IO = 4,
  MIXSEG_STATUS_RUNTIME = 5,
} MixsegStatus;

// Opaque per-pixel class-index map.
typedef struct MixsegLabelMap MixsegLabelMap;

// Opaque binary mixing mask.
typedef struct MixsegMask MixsegMask;

// Opaque deterministic random generator.
typedef struct MixsegRng MixsegRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *mixseg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mixseg_version(void);

// Create a deterministic generator. Identical seeds yield identical draw
// sequences on every platform.
struct MixsegRng *mixseg_rng_new(uint64_t seed);

// Derive an independent child generator (for parallel streams).
//
// # Safety
// `rng` must be a live pointer from [`mixseg_rng_new`] or this function.
struct MixsegRng *mixseg_rng_fork(const struct MixsegRng *rng, uint64_t stream_id);

// # Safety
// `rng` must be null or a pointer previously returned by a `mixseg_rng_*`
// constructor, not yet freed.
void mixseg_rng_free(struct MixsegRng *rng);

// Build a label map from `height * width` class indices (row-major), each
// less than `num_classes`.
//
// # Safety
// `data` must point to `height * width` readable bytes; `out` must be a
// valid destination pointer.
enum MixsegStatus mixseg_labelmap_new(size_t height,
                                      size_t width,
                                      size_t num_classes,
                                      const uint8_t *data,
                                      struct MixsegLabelMap **out);

// # Safety
// `map` must be null or a pointer previously returned by
// [`mixseg_labelmap_new`], not yet freed.
void mixseg_labelmap_free(struct MixsegLabelMap *map);

// Random rectangle covering half the grid (CutMix).
//
// # Safety
// `rng` and `out` must be valid pointers.
enum MixsegStatus mixseg_cutmix_mask(size_t height,
                                     size_t width,
                                     struct MixsegRng *rng,
                                     struct MixsegMask **out);

// Half of the classes present in `labels` (ClassMix). `*degenerate` is set
// to 1 when only one class is present (the mask is then all zero).
//
// # Safety
// `labels`, `rng`, `out`, and `degenerate` must be valid pointers.
enum MixsegStatus mixseg_classmix_mask(const struct MixsegLabelMap *labels,
                                       struct MixsegRng *rng,
                                       struct MixsegMask **out,
                                       int *degenerate);

// Split into `p x p` blocks and select `floor(C/2)` classes per block
// (ComplexMix).
//
// # Safety
// `labels`, `rng`, and `out` must be valid pointers.
enum MixsegStatus mixseg_complexmix_mask(const struct MixsegLabelMap *labels,
                                         size_t p,
                                         struct MixsegRng *rng,
                                         struct MixsegMask **out);

// Draw a block-grid size uniformly from `p_choices` after dropping values
// larger than `min(height, width)`.
//
// # Safety
// `p_choices` must point to `num_choices` readable values; `rng` and `out`
// must be valid pointers.
enum MixsegStatus mixseg_sample_p(const size_t *p_choices,
                                  size_t num_choices,
                                  size_t height,
                                  size_t width,
                                  struct MixsegRng *rng,
                                  size_t *out);

// # Safety
// `mask` must be null or a pointer previously produced by a mask
// constructor, not yet freed.
void mixseg_mask_free(struct MixsegMask *mask);

// Number of set pixels, or 0 for null.
//
// # Safety
// `mask` must be null or a live mask pointer.
size_t mixseg_mask_popcount(const struct MixsegMask *mask);

// Copy the mask bits (0/1, row-major) into `buf`.
//
// # Safety
// `mask` must be live; `buf` must hold at least `buf_len` writable bytes.
enum MixsegStatus mixseg_mask_copy_bits(const struct MixsegMask *mask,
                                        uint8_t *buf,
                                        size_t buf_len);

// Blend two channel-major image buffers under the mask: `out` takes `a`
// where the mask is 1, `b` where 0. Buffers hold
// `channels * height * width` values in `[0, 1]`.
//
// # Safety
// `a`, `b`, and `out` must each point to `channels * height * width`
// readable (writable for `out`) doubles; `mask` must be live.
enum MixsegStatus mixseg_mix_images(const double *a,
                                    const double *b,
                                    size_t channels,
                                    size_t height,
                                    size_t width,
                                    const struct MixsegMask *mask,
                                    double *out);

// Blend two label maps under the mask.
//
// # Safety
// `a`, `b`, `mask` must be live; `out` receives a new owned map.
enum MixsegStatus mixseg_mix_labels(const struct MixsegLabelMap *a,
                                    const struct MixsegLabelMap *b,
                                    const struct MixsegMask *mask,
                                    struct MixsegLabelMap **out);

// Blend two per-pixel weight grids (row-major, `height * width`) under the
// mask.
//
// # Safety
// `a`, `b`, and `out` must each point to `height * width` doubles; `mask`
// must be live.
enum MixsegStatus mixseg_mix_weights(const double *a,
                                     const double *b,
                                     size_t height,
                                     size_t width,
                                     const struct MixsegMask *mask,
                                     double *out);

// Mean IoU between a predicted and a ground-truth label map (classes absent
// from both are excluded from the mean).
//
// # Safety
// `pred`, `truth`, and `out_miou` must be valid pointers.
enum MixsegStatus mixseg_mean_iou(const struct MixsegLabelMap *pred,
                                  const struct MixsegLabelMap *truth,
                                  double *out_miou);

// Generate a synthetic dataset from a JSON config string (same schema as
// `mixseg gen-data`). Writes PPM/PGM files and the split manifest under the
// config's `out_dir` (resolved against `MIXSEG_OUT_DIR`).
//
// # Safety
// `config_json` must be a NUL-terminated UTF-8 string.
enum MixsegStatus mixseg_generate_dataset(const char *config_json);

// Run one training experiment from a JSON config string (same schema as
// `mixseg train`). Writes logs, checkpoints, and results under the config's
// `out_dir`; the final student validation mIoU lands in `out_miou`.
//
// # Safety
// `config_json` must be a NUL-terminated UTF-8 string; `out_miou` must be a
// valid pointer.
enum MixsegStatus mixseg_train(const char *config_json, double *out_miou);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXSEG_H */
