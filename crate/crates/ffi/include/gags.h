#ifndef GAGS_H
#define GAGS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GagsStatus {
  GAGS_STATUS_OK = 0,
  GAGS_STATUS_NULL_POINTER = 1,
  GAGS_STATUS_INVALID_ARGUMENT = 2,
  GAGS_STATUS_IO = 3,
  GAGS_STATUS_FORMAT = 4,
  GAGS_STATUS_SHAPE_MISMATCH = 5,
  GAGS_STATUS_NUMERIC = 6,
  GAGS_STATUS_BUFFER_TOO_SMALL = 7,
  GAGS_STATUS_PANIC = 8,
} GagsStatus;

// A loaded Gaussian field.
typedef struct GagsField GagsField;

// A trained field together with its decoder.
typedef struct GagsModel GagsModel;

// Pinhole camera. `rotation` is the row-major world-to-camera rotation.
typedef struct GagsCamera {
  uint32_t width;
  uint32_t height;
  double fx;
  double fy;
  double cx;
  double cy;
  double rotation[9];
  double translation[3];
  double near;
  double far;
} GagsCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *gags_last_error(void);

// Library version as a static NUL-terminated string.
const char *gags_version(void);

// Loads a PLY field. On success `*out` receives a handle to free with
// `gags_field_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum GagsStatus gags_field_load(const char *path, struct GagsField **out);

// # Safety
// `field` must come from `gags_field_load` and not be used afterwards.
void gags_field_free(struct GagsField *field);

// Number of Gaussians, or 0 for a null handle.
//
// # Safety
// `field` must be null or a live handle.
size_t gags_field_len(const struct GagsField *field);

// Feature channels per Gaussian, or 0 for a null handle.
//
// # Safety
// `field` must be null or a live handle.
size_t gags_field_feature_dim(const struct GagsField *field);

// Renders the feature image (`height * width * dim`, row-major, channels
// last), expected depth and final transmittance (`height * width` each).
// Depth is 0 where no Gaussian covers the pixel. Any output pointer may be
// null to skip it.
//
// # Safety
// Non-null buffers must hold at least the stated number of values.
enum GagsStatus gags_render(const struct GagsField *field,
                            const struct GagsCamera *camera,
                            float *features,
                            size_t features_len,
                            float *depth,
                            float *transmittance,
                            size_t pixels_len);

// Loads a trained field and the decoder checkpoint `<dir>/<stem>.json`.
//
// # Safety
// String arguments must be NUL-terminated and `out` a valid pointer.
enum GagsStatus gags_model_load(const char *field_path,
                                const char *decoder_dir,
                                const char *decoder_stem,
                                struct GagsModel **out);

// # Safety
// `model` must come from `gags_model_load` and not be used afterwards.
void gags_model_free(struct GagsModel *model);

// Dimension of the decoded language features, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t gags_model_clip_dim(const struct GagsModel *model);

// Relevancy of a text embedding in one view, smoothed with a `kernel`-wide
// mean filter and min-max normalized over covered pixels. `canonical` holds
// `n_canonical` phrase embeddings back to back. `out` receives
// `height * width` scores (0 where uncovered); `*degenerate` is set to 1
// when the map has no spread.
//
// # Safety
// `text` must hold `dim` values, `canonical` `n_canonical * dim`, `out`
// `out_len`; `degenerate` may be null.
enum GagsStatus gags_model_relevancy(const struct GagsModel *model,
                                     const struct GagsCamera *camera,
                                     const double *text,
                                     const double *canonical,
                                     size_t n_canonical,
                                     size_t dim,
                                     uint32_t kernel,
                                     double *out,
                                     size_t out_len,
                                     uint8_t *degenerate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAGS_H */
