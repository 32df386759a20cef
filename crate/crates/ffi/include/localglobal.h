#ifndef LOCALGLOBAL_H
#define LOCALGLOBAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define LG_OK 0

#define LG_ERR_MISSING_FILE 1

#define LG_ERR_MALFORMED_HEADER 2

#define LG_ERR_SIZE_MISMATCH 3

#define LG_ERR_NON_FINITE 4

#define LG_ERR_PARAMETER 5

#define LG_ERR_TILING 6

#define LG_ERR_SHAPE 7

#define LG_ERR_DATA 8

#define LG_ERR_RANGE 9

#define LG_ERR_DEGENERATE 10

#define LG_ERR_ALIGNMENT 11

#define LG_ERR_METRIC_UNDEFINED 12

#define LG_ERR_INCOMPLETE_GRID 13

#define LG_ERR_STRATIFICATION 14

#define LG_ERR_PLACEMENT 15

#define LG_ERR_TOO_LARGE 16

#define LG_ERR_CONFIG 17

#define LG_ERR_PARSE 18

#define LG_ERR_IO 19

/**
 * A required pointer argument was NULL.
 */
#define LG_ERR_NULL 100

/**
 * A path argument was not valid UTF-8.
 */
#define LG_ERR_UTF8 101

/**
 * The library panicked; the message names the panic payload.
 */
#define LG_ERR_PANIC 102

/**
 * Filtration direction for `lg_persistence`.
 */
#define LG_SUBLEVEL 0

#define LG_SUPERLEVEL 1

/**
 * A persistence diagram.
 */
typedef struct LgDiagram LgDiagram;

/**
 * A persistence image, row-major, rows along persistence.
 */
typedef struct LgImage LgImage;

/**
 * A 3D scalar volume, x fastest.
 */
typedef struct LgVolume LgVolume;

/**
 * One persistence interval. Essential classes have `death = +INFINITY`.
 */
typedef struct LgPair {
  uint8_t dim;
  float birth;
  float death;
} LgPair;

/**
 * Persistence image parameters. `weight_saturation <= 0` means the weight
 * ramp ends at `pers_hi`.
 */
typedef struct LgPiParams {
  size_t rows;
  size_t cols;
  double birth_lo;
  double birth_hi;
  double pers_lo;
  double pers_hi;
  double sigma;
  double weight_saturation;
} LgPiParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a volume from `nx*ny*nz` values in x-fastest order.
 *
 * # Safety
 * `data` must point to `nx*ny*nz` readable floats; `out` must be writable.
 */
int32_t lg_volume_new(size_t nx,
                      size_t ny,
                      size_t nz,
                      const float *data,
                      struct LgVolume **out_volume);

/**
 * Reads an RVOL file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_volume` must be writable.
 */
int32_t lg_volume_load(const char *path, struct LgVolume **out_volume);

/**
 * Writes an RVOL file.
 *
 * # Safety
 * `volume` must be a live handle; `path` a NUL-terminated string.
 */
int32_t lg_volume_save(const struct LgVolume *volume, const char *path);

/**
 * Writes `[nx, ny, nz]` to `out_dims`.
 *
 * # Safety
 * `volume` must be a live handle; `out_dims` must hold 3 values.
 */
int32_t lg_volume_dims(const struct LgVolume *volume, size_t *out_dims);

/**
 * Copies the voxels into `buf`, which must hold at least `len` floats.
 * Fails with `LG_ERR_SIZE_MISMATCH` when `len` is smaller than the volume.
 *
 * # Safety
 * `volume` must be a live handle; `buf` must hold `len` writable floats.
 */
int32_t lg_volume_data(const struct LgVolume *volume, float *buf, size_t len);

/**
 * # Safety
 * `volume` must be NULL or a handle not yet freed.
 */
void lg_volume_free(struct LgVolume *volume);

/**
 * Cubical persistence of `volume`. Bit `d` of `dims_mask` selects
 * homology dimension `d` (so 0b111 asks for all three).
 *
 * # Safety
 * `volume` must be a live handle; `out_diagram` must be writable.
 */
int32_t lg_persistence(const struct LgVolume *volume,
                       int32_t mode,
                       uint32_t dims_mask,
                       struct LgDiagram **out_diagram);

/**
 * Copy of `diagram` without pairs of persistence at most `eps`.
 *
 * # Safety
 * `diagram` must be a live handle; `out_diagram` must be writable.
 */
int32_t lg_diagram_filter(const struct LgDiagram *diagram,
                          float eps,
                          struct LgDiagram **out_diagram);

/**
 * # Safety
 * `diagram` must be a live handle; `out_len` must be writable.
 */
int32_t lg_diagram_len(const struct LgDiagram *diagram, size_t *out_len);

/**
 * Pair `index` in computation order.
 *
 * # Safety
 * `diagram` must be a live handle; `out_pair` must be writable.
 */
int32_t lg_diagram_pair(const struct LgDiagram *diagram, size_t index, struct LgPair *out_pair);

/**
 * Betti numbers of the level set at `threshold`, read off the diagram.
 *
 * # Safety
 * `diagram` must be a live handle; `out_betti` must hold 3 values.
 */
int32_t lg_diagram_betti(const struct LgDiagram *diagram, float threshold, size_t *out_betti);

/**
 * # Safety
 * `diagram` must be NULL or a handle not yet freed.
 */
void lg_diagram_free(struct LgDiagram *diagram);

/**
 * Fills `out_params` with the library defaults (50x50 on the unit square,
 * sigma 0.05).
 *
 * # Safety
 * `out_params` must be writable.
 */
int32_t lg_pi_params_default(struct LgPiParams *out_params);

/**
 * Persistence image of the dimension-`dim` pairs of `diagram`.
 *
 * # Safety
 * `diagram` and `params` must be valid; `out_image` must be writable.
 */
int32_t lg_image_from_diagram(const struct LgDiagram *diagram,
                              uint8_t dim,
                              const struct LgPiParams *params,
                              struct LgImage **out_image);

/**
 * # Safety
 * `image` must be a live handle; `out_rows` and `out_cols` writable.
 */
int32_t lg_image_dims(const struct LgImage *image, size_t *out_rows, size_t *out_cols);

/**
 * Copies the row-major pixels into `buf`, which must hold `rows*cols`.
 *
 * # Safety
 * `image` must be a live handle; `buf` must hold `len` writable doubles.
 */
int32_t lg_image_pixels(const struct LgImage *image, double *buf, size_t len);

/**
 * # Safety
 * `image` must be NULL or a handle not yet freed.
 */
void lg_image_free(struct LgImage *image);

/**
 * ROC AUC of `scores` against 0/1 `labels`, ties counted half.
 *
 * # Safety
 * `scores` and `labels` must each hold `n` values; `out_auc` writable.
 */
int32_t lg_auc(const double *scores, const uint8_t *labels, size_t n, double *out_auc);

/**
 * Average precision of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must each hold `n` values; `out_ap` writable.
 */
int32_t lg_average_precision(const double *scores, const uint8_t *labels, size_t n, double *out_ap);

/**
 * Message for the last failure on this thread, or "" after a success.
 * The pointer stays valid until the next call into the library from the
 * same thread.
 */
const char *lg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOCALGLOBAL_H */
