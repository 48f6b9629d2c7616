#ifndef PRUNEBENCH_H
#define PRUNEBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_DIMENSION = 3,
  PB_STATUS_IO = 4,
  PB_STATUS_CORRUPT_CHECKPOINT = 5,
  PB_STATUS_DTYPE_MISMATCH = 6,
  PB_STATUS_INFEASIBLE_COMPRESSION = 7,
  PB_STATUS_UNKNOWN_ARCH = 8,
  PB_STATUS_STATE = 9,
  PB_STATUS_PANIC = 10,
  PB_STATUS_OTHER = 11,
} PbStatus;

// Opaque model handle.
typedef struct PbModel PbModel;

// Size and compute accounting of a model, see `pb_model_efficiency`.
typedef struct PbEfficiency {
  uint64_t params_total;
  uint64_t params_nnz;
  uint64_t madds_dense;
  uint64_t madds_pruned;
  double compression_ratio;
  double theoretical_speedup;
  double fraction_pruned;
} PbEfficiency;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Owned by the
// library and valid until the next call on this thread.
const char *pb_last_error(void);

// Library version as a static NUL-terminated string.
const char *pb_version(void);

// Build `arch` (`mlp_300_100`, `lenet_conv`, `cifar_tinyconv`) with
// Glorot-uniform weights drawn from `seed`.
//
// # Safety
// `arch` must be a valid NUL-terminated string and `out` a valid pointer.
enum PbStatus pb_model_build(const char *arch,
                             size_t class_count,
                             uint64_t seed,
                             struct PbModel **out);

// Load a 32-bit checkpoint directory.
//
// # Safety
// `dir` must be a valid NUL-terminated string and `out` a valid pointer.
enum PbStatus pb_model_load(const char *dir, struct PbModel **out);

// Write the model (weights, biases and masks) as a checkpoint directory.
//
// # Safety
// `model` must come from this library; `dir` must be a valid string.
enum PbStatus pb_model_save(const struct PbModel *model, const char *dir);

// Release a model. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void pb_model_free(struct PbModel *model);

// Number of weights (biases excluded).
//
// # Safety
// `model` must come from this library; `out` must be valid.
enum PbStatus pb_model_param_count(const struct PbModel *model, uint64_t *out);

// Number of unmasked weights.
//
// # Safety
// `model` must come from this library; `out` must be valid.
enum PbStatus pb_model_nnz(const struct PbModel *model, uint64_t *out);

// Elements per input example and number of classes.
//
// # Safety
// `model` must come from this library; both outputs must be valid.
enum PbStatus pb_model_dims(const struct PbModel *model, size_t *input_len, size_t *class_count);

// Logits for `batch` examples. `input` holds `batch * input_len` floats,
// `logits` receives `batch * class_count` floats.
//
// # Safety
// Buffers must be valid for the stated lengths.
enum PbStatus pb_model_forward(const struct PbModel *model,
                               const float *input,
                               size_t input_len,
                               size_t batch,
                               float *logits,
                               size_t logits_len);

// Prune the lowest-|w| `fraction` of the candidate weights, ranked across
// the whole network (`global`) or within each layer.
//
// # Safety
// `model` must come from this library.
enum PbStatus pb_prune_magnitude(struct PbModel *model,
                                 double fraction,
                                 bool global,
                                 bool exclude_classifier);

// Mask each unmasked candidate weight independently with probability
// `fraction`, drawing from `seed`.
//
// # Safety
// `model` must come from this library.
enum PbStatus pb_prune_random(struct PbModel *model,
                              double fraction,
                              uint64_t seed,
                              bool exclude_classifier);

// Compression ratio, theoretical speedup and the counts behind them.
//
// # Safety
// `model` must come from this library; `out` must be valid.
enum PbStatus pb_model_efficiency(const struct PbModel *model, struct PbEfficiency *out);

// Architecture id as a newly allocated string; release it with
// [`pb_string_free`]. NULL for models without a registered architecture.
//
// # Safety
// `model` must come from this library.
char *pb_model_arch(const struct PbModel *model);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void pb_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRUNEBENCH_H */
