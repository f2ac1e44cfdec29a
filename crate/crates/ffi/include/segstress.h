#ifndef SEGSTRESS_H
#define SEGSTRESS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_ARGUMENT = 2,
  SG_STATUS_DIMENSION_MISMATCH = 3,
  SG_STATUS_IO = 4,
  SG_STATUS_FORMAT = 5,
  SG_STATUS_INTERNAL = 6,
} SgStatus;

typedef enum SgPolicy {
  SG_POLICY_RANDOM = 0,
  SG_POLICY_FORCE_ERODE = 1,
  SG_POLICY_FORCE_DILATE = 2,
} SgPolicy;

// Opaque multi-channel image, channels interleaved per pixel.
typedef struct SgImage SgImage;

// Opaque instance mask. Label 0 is background.
typedef struct SgMask SgMask;

typedef struct SgMetrics {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
  double dsc;
  double jaccard;
  double precision;
  double recall;
  double specificity;
} SgMetrics;

typedef struct SgPatchGrid {
  size_t orig_w;
  size_t orig_h;
  size_t patch;
  size_t pad_right;
  size_t pad_bottom;
  size_t rows;
  size_t cols;
} SgPatchGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or NULL. The
// pointer stays valid until the next call into this library on the same
// thread.
const char *sg_last_error(void);

// Library version as a static NUL-terminated string.
const char *sg_version(void);

// Build a mask from `width * height` row-major labels. `labels` may be
// NULL for an all-background mask.
//
// # Safety
// `labels` must be NULL or point to `width * height` readable `u32`s.
// `out` must be a valid pointer.
enum SgStatus sg_mask_new(size_t width, size_t height, const uint32_t *labels, struct SgMask **out);

// # Safety
// `mask` must be NULL or a handle from this library not yet freed.
void sg_mask_free(struct SgMask *mask);

// # Safety
// `mask` must be NULL or a live handle. Returns 0 for NULL.
size_t sg_mask_width(const struct SgMask *mask);

// # Safety
// `mask` must be NULL or a live handle. Returns 0 for NULL.
size_t sg_mask_height(const struct SgMask *mask);

// Number of distinct non-zero labels.
//
// # Safety
// `mask` must be NULL or a live handle. Returns 0 for NULL.
size_t sg_mask_cell_count(const struct SgMask *mask);

// Copy the labels into `out`, which must hold exactly `width * height`
// values.
//
// # Safety
// `mask` must be a live handle and `out` must point to `len` writable `u32`s.
enum SgStatus sg_mask_copy_labels(const struct SgMask *mask, uint32_t *out, size_t len);

// Read a mask from a tensor file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum SgStatus sg_mask_load(const char *path, struct SgMask **out);

// Write a mask as a u32 tensor file.
//
// # Safety
// `mask` must be a live handle; `path` a NUL-terminated string.
enum SgStatus sg_mask_save(const struct SgMask *mask, const char *path);

// Remove `round(fraction * N)` cells chosen by `seed`.
//
// # Safety
// `mask` must be a live handle; `out` a valid pointer.
enum SgStatus sg_erase_cells(const struct SgMask *mask,
                             double fraction,
                             uint64_t seed,
                             struct SgMask **out);

// Erode or dilate every cell with a square kernel no larger than `k_max`.
//
// # Safety
// `mask` must be a live handle; `out` a valid pointer.
enum SgStatus sg_resegment_cells(const struct SgMask *mask,
                                 uint32_t k_max,
                                 uint64_t seed,
                                 enum SgPolicy policy,
                                 struct SgMask **out);

// Erase then resegment with one seed.
//
// # Safety
// `mask` must be a live handle; `out` a valid pointer.
enum SgStatus sg_corrupt(const struct SgMask *mask,
                         double missing_fraction,
                         uint32_t k_max,
                         uint64_t seed,
                         struct SgMask **out);

// Label connected foreground components; `connectivity` is 4 or 8.
//
// # Safety
// `mask` must be a live handle; `out` a valid pointer.
enum SgStatus sg_relabel_components(const struct SgMask *mask,
                                    uint8_t connectivity,
                                    struct SgMask **out);

// Pixel metrics of `pred` against `gt`; both are binarized first.
//
// # Safety
// `pred` and `gt` must be live handles; `out` a valid pointer.
enum SgStatus sg_evaluate(const struct SgMask *pred,
                          const struct SgMask *gt,
                          struct SgMetrics *out);

// Tiling of a `width`×`height` raster into `patch`-sized squares.
//
// # Safety
// `out` must be a valid pointer.
enum SgStatus sg_plan_grid(size_t width, size_t height, size_t patch, struct SgPatchGrid *out);

// Build an image from `width * height * channels` interleaved samples.
//
// # Safety
// `pixels` must point to that many readable floats; `out` a valid pointer.
enum SgStatus sg_image_new(size_t width,
                           size_t height,
                           size_t channels,
                           const float *pixels,
                           struct SgImage **out);

// # Safety
// `image` must be NULL or a handle from this library not yet freed.
void sg_image_free(struct SgImage *image);

// # Safety
// `image` must be NULL or a live handle. Returns 0 for NULL.
size_t sg_image_channels(const struct SgImage *image);

// Copy the interleaved samples into `out`, which must hold exactly
// `width * height * channels` values.
//
// # Safety
// `image` must be a live handle and `out` must point to `len` writable floats.
enum SgStatus sg_image_copy_pixels(const struct SgImage *image, float *out, size_t len);

// Divide each channel by its own `q`-th percentile.
//
// # Safety
// `image` must be a live handle; `out` a valid pointer.
enum SgStatus sg_image_percentile_normalize(const struct SgImage *image,
                                            double q,
                                            struct SgImage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGSTRESS_H */
