#ifndef DAVT_H
#define DAVT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DavtStatus {
  DAVT_STATUS_OK = 0,
  DAVT_STATUS_NULL_POINTER = 1,
  DAVT_STATUS_INVALID_ARGUMENT = 2,
  DAVT_STATUS_CONFIG = 3,
  DAVT_STATUS_IO = 4,
  DAVT_STATUS_FORMAT = 5,
  DAVT_STATUS_CHECKPOINT = 6,
  DAVT_STATUS_BUFFER_TOO_SMALL = 7,
  DAVT_STATUS_INTERNAL = 8,
} DavtStatus;

// Opaque model handle.
typedef struct DavtModel DavtModel;

// Inclusive pixel box.
typedef struct DavtBox {
  size_t row_min;
  size_t row_max;
  size_t col_min;
  size_t col_max;
} DavtBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *davt_version(void);

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length plus one.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t davt_last_error(char *buf, size_t len);

// Freshly initialised model from a JSON config object (keys as in the CLI
// config file; missing keys take their defaults). Null means all defaults.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be
// valid for one pointer write.
enum DavtStatus davt_model_new(const char *config_json, struct DavtModel **out);

// Model stored in a training checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for one
// pointer write.
enum DavtStatus davt_model_load(const char *path, struct DavtModel **out);

// Releases a handle. Null is a no-op.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void davt_model_free(struct DavtModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t davt_model_num_classes(const struct DavtModel *model);

// Input side length in pixels, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t davt_model_image_size(const struct DavtModel *model);

// Class logits for one image into `logits[0..num_classes]`.
//
// # Safety
// `pixels` must hold `height * width * 3` doubles and `logits` must be
// valid for `logits_len` writes.
enum DavtStatus davt_forward(const struct DavtModel *model,
                             const double *pixels,
                             size_t height,
                             size_t width,
                             double *logits,
                             size_t logits_len);

// Attention-guided crop box in model-input pixel coordinates. `xi` 0 uses
// the model's layer; `theta` ≤ 0 uses the default threshold; `head_max`
// nonzero aggregates heads by max instead of mean.
//
// # Safety
// `pixels` must hold `height * width * 3` doubles and `out` must be valid
// for one write.
enum DavtStatus davt_crop_box(const struct DavtModel *model,
                              const double *pixels,
                              size_t height,
                              size_t width,
                              size_t xi,
                              double theta,
                              int32_t head_max,
                              struct DavtBox *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAVT_H */
