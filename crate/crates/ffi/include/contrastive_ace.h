#ifndef CONTRASTIVE_ACE_H
#define CONTRASTIVE_ACE_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CaceEstimator {
  CACE_ESTIMATOR_ANALYTIC = 0,
  CACE_ESTIMATOR_MONTE_CARLO = 1,
  CACE_ESTIMATOR_QUADRATURE = 2,
} CaceEstimator;

typedef enum CaceStatus {
  CACE_STATUS_OK = 0,
  CACE_STATUS_NULL_POINTER = 1,
  CACE_STATUS_INVALID_ARGUMENT = 2,
  CACE_STATUS_IO = 3,
  CACE_STATUS_MALFORMED = 4,
  CACE_STATUS_VERSION = 5,
  CACE_STATUS_DIMENSION = 6,
  CACE_STATUS_INDEX = 7,
  CACE_STATUS_ESTIMATOR = 8,
  CACE_STATUS_NON_FINITE = 9,
  CACE_STATUS_INTERNAL = 10,
} CaceStatus;

/**
 * Opaque model handle.
 */
typedef struct CaceModel CaceModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a JSON checkpoint into a new handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CaceStatus cace_model_load(const char *path, struct CaceModel **out);

/**
 * Parses checkpoint JSON text into a new handle written to `*out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CaceStatus cace_model_from_json(const char *json, struct CaceModel **out);

/**
 * Writes the model as a JSON checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum CaceStatus cace_model_save(const struct CaceModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void cace_model_free(struct CaceModel *model);

/**
 * Input width, latent width and class count. Any output may be null.
 *
 * # Safety
 * `model` must come from this library; non-null outputs must be writable.
 */
enum CaceStatus cace_model_dims(const struct CaceModel *model,
                                size_t *input_dim,
                                size_t *latent_dim,
                                size_t *classes);

/**
 * Latent features `z = f(x)` of `rows` inputs into `out` (`rows × latent`).
 *
 * # Safety
 * `x` must hold `rows × input_dim` values and `out` `out_len` values.
 */
enum CaceStatus cace_model_encode(const struct CaceModel *model,
                                  const double *x,
                                  size_t rows,
                                  double *out,
                                  size_t out_len);

/**
 * Class logits of `rows` inputs into `out` (`rows × classes`).
 *
 * # Safety
 * `x` must hold `rows × input_dim` values and `out` `out_len` values.
 */
enum CaceStatus cace_model_logits(const struct CaceModel *model,
                                  const double *x,
                                  size_t rows,
                                  double *out,
                                  size_t out_len);

/**
 * Per-coordinate intervention bounds of a latent batch: min/max over the
 * rows, widened by `epsilon · (range + 1)` on each side.
 *
 * # Safety
 * `z` must hold `rows × latent` values; `low` and `high` `latent` values each.
 */
enum CaceStatus cace_latent_bounds(const double *z,
                                   size_t rows,
                                   size_t latent,
                                   double epsilon,
                                   double *low,
                                   double *high);

/**
 * ACE vectors of `rows` latent vectors into `out` (`rows × latent`); row
 * `i` targets class `targets[i]`. `samples` and `seed` apply to the
 * Monte-Carlo estimator, `samples` is the grid size for quadrature.
 *
 * # Safety
 * `z` must hold `rows × latent` values, `targets` `rows` entries, `low`
 * and `high` `latent` values each, and `out` `out_len` values.
 */
enum CaceStatus cace_ace_vectors(const struct CaceModel *model,
                                 const double *z,
                                 size_t rows,
                                 const size_t *targets,
                                 const double *low,
                                 const double *high,
                                 enum CaceEstimator estimator,
                                 size_t samples,
                                 uint64_t seed,
                                 double *out,
                                 size_t out_len);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len` bytes, and returns the full length including the NUL.
 * Passing a null `buf` only queries the length.
 *
 * # Safety
 * A non-null `buf` must be writable for `len` bytes.
 */
size_t cace_last_error_message(char *buf, size_t len);

/**
 * Static name of a status code.
 */
const char *cace_status_name(enum CaceStatus status);

/**
 * Library version, NUL-terminated and static.
 */
const char *cace_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTRASTIVE_ACE_H */
