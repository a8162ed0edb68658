#ifndef MSINET_H
#define MSINET_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MsinetStatus {
  MSINET_STATUS_OK = 0,
  MSINET_STATUS_NULL_POINTER = 1,
  MSINET_STATUS_INVALID_ARGUMENT = 2,
  MSINET_STATUS_SHAPE = 3,
  MSINET_STATUS_IO = 4,
  MSINET_STATUS_CHECKPOINT = 5,
  MSINET_STATUS_UNDEFINED_METRIC = 6,
  MSINET_STATUS_INTERNAL = 7,
} MsinetStatus;

/**
 * Opaque model handle.
 */
typedef struct MsinetModel MsinetModel;

typedef struct MsinetMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
} MsinetMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or null if
 * none. Valid until the next failing call on the same thread.
 */
const char *msinet_last_error(void);

/**
 * Builds a freshly initialized model. `arch` is one of `modified-resnet`,
 * `resnet18|34|50|101|152`, `logreg`, `ffnn4`, `cnn5`.
 *
 * # Safety
 * `arch` must be a NUL-terminated string; `out` must be writable.
 */
enum MsinetStatus msinet_model_build(const char *arch,
                                     double width_mult,
                                     size_t input_hw,
                                     uint64_t seed,
                                     struct MsinetModel **out);

/**
 * Loads a checkpoint written by `msinet train` or [`msinet_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MsinetStatus msinet_model_load(const char *path, struct MsinetModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum MsinetStatus msinet_model_save(struct MsinetModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void msinet_model_free(struct MsinetModel *model);

/**
 * Side length of the square input the model expects.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum MsinetStatus msinet_model_input_size(struct MsinetModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum MsinetStatus msinet_model_count_weight_layers(struct MsinetModel *model, size_t *out);

/**
 * Eval-mode MSS probabilities for `n` images laid out as contiguous
 * normalized `[n, 3, hw, hw]` values.
 *
 * # Safety
 * `images` must hold `n * 3 * hw * hw` values and `probs` room for `n`.
 */
enum MsinetStatus msinet_model_predict(struct MsinetModel *model,
                                       const double *images,
                                       size_t n,
                                       double *probs);

/**
 * Accuracy, precision, recall and F1 from confusion counts, with class 0
 * (MSI) as the counts' positive class and `positive` (0 or 1) selecting the
 * F1 positive class.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsinetStatus msinet_confmat_metrics(uint64_t tp,
                                         uint64_t fp,
                                         uint64_t fn_,
                                         uint64_t tn,
                                         uint8_t positive,
                                         struct MsinetMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSINET_H */
