#ifndef SYMFLOW_H
#define SYMFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_SHAPE = 3,
  SF_STATUS_NON_FINITE = 4,
  SF_STATUS_IO = 5,
  SF_STATUS_FORMAT = 6,
  SF_STATUS_NUMERICAL = 7,
  SF_STATUS_PANIC = 8,
} SfStatus;

typedef enum SfTask {
  SF_TASK_SYMMETRIC = 0,
  SF_TASK_ASYMMETRIC = 1,
  SF_TASK_GATED = 2,
} SfTask;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct SfModel SfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sf_last_error_message(void);

/**
 * Parameter count for `k` oscillators on `task`.
 *
 * # Safety
 * `out` must be valid for writing.
 */
enum SfStatus sf_param_dim(size_t k, enum SfTask task, size_t *out);

/**
 * Draws a parameter vector for `seed` into `out` (`out_len` = param dim).
 *
 * # Safety
 * `out` must be valid for writing `out_len` values.
 */
enum SfStatus sf_sample_params(size_t k,
                               enum SfTask task,
                               uint64_t seed,
                               double *out,
                               size_t out_len);

/**
 * Renders `params` to `n_samples` samples.
 *
 * # Safety
 * `params` must be valid for reading `params_len` values and `out` for
 * writing `n_samples` values.
 */
enum SfStatus sf_render(const double *params,
                        size_t params_len,
                        size_t k,
                        enum SfTask task,
                        double *out,
                        size_t n_samples);

/**
 * Minimum-cost assignment for a row-major `n × n` matrix. Row `j` is
 * assigned column `perm_out[j]`.
 *
 * # Safety
 * `cost` must be valid for reading `n * n` values, `perm_out` for writing
 * `n` values and `cost_out` for writing one value.
 */
enum SfStatus sf_hungarian(const double *cost, size_t n, size_t *perm_out, double *cost_out);

/**
 * Mean squared error; `k` is ignored.
 *
 * # Safety
 * `x` and `xh` must be valid for reading `len` values; `out` for writing
 * one value.
 */
enum SfStatus sf_mse(const double *x, const double *xh, size_t len, size_t k, double *out);

/**
 * Linear assignment cost over oscillator triples.
 *
 * # Safety
 * `x` and `xh` must be valid for reading `len` values; `out` for writing
 * one value.
 */
enum SfStatus sf_lac(const double *x, const double *xh, size_t len, size_t k, double *out);

/**
 * Bidirectional nearest-neighbour distance over oscillator triples.
 *
 * # Safety
 * `x` and `xh` must be valid for reading `len` values; `out` for writing
 * one value.
 */
enum SfStatus sf_chamfer(const double *x, const double *xh, size_t len, size_t k, double *out);

/**
 * Log-spectral distance; `sample_rate` is ignored.
 *
 * # Safety
 * `y` and `yh` must be valid for reading `n` values; `out` for writing one
 * value.
 */
enum SfStatus sf_lsd(const double *y, const double *yh, size_t n, double sample_rate, double *out);

/**
 * Multi-scale log-mel distance.
 *
 * # Safety
 * `y` and `yh` must be valid for reading `n` values; `out` for writing one
 * value.
 */
enum SfStatus sf_mss(const double *y, const double *yh, size_t n, double sample_rate, double *out);

/**
 * DTW-aligned L1 distance between MFCC sequences.
 *
 * # Safety
 * `y` and `yh` must be valid for reading `n` values; `out` for writing one
 * value.
 */
enum SfStatus sf_wmfcc(const double *y,
                       const double *yh,
                       size_t n,
                       double sample_rate,
                       double *out);

/**
 * Frame-averaged Wasserstein-1 distance between magnitude spectra.
 *
 * # Safety
 * `y` and `yh` must be valid for reading `n` values; `out` for writing one
 * value.
 */
enum SfStatus sf_sot(const double *y, const double *yh, size_t n, double sample_rate, double *out);

/**
 * Cosine similarity of RMS envelopes; `sample_rate` is ignored.
 *
 * # Safety
 * `y` and `yh` must be valid for reading `n` values; `out` for writing one
 * value.
 */
enum SfStatus sf_rms_cosine(const double *y,
                            const double *yh,
                            size_t n,
                            double sample_rate,
                            double *out);

/**
 * Loads a checkpoint. Free the handle with [`sf_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` valid for writing.
 */
enum SfStatus sf_model_load(const char *path, struct SfModel **out);

/**
 * Parameter count produced by the model.
 *
 * # Safety
 * `model` must come from [`sf_model_load`]; `out` must be valid for writing.
 */
enum SfStatus sf_model_param_dim(const struct SfModel *model, size_t *out);

/**
 * Signal length the model expects.
 *
 * # Safety
 * `model` must come from [`sf_model_load`]; `out` must be valid for writing.
 */
enum SfStatus sf_model_n_samples(const struct SfModel *model, size_t *out);

/**
 * Estimates parameters for one signal. `seed` drives the sampler noise of
 * flow models and the draw of the random baseline.
 *
 * # Safety
 * `model` must come from [`sf_model_load`], `audio` must be valid for
 * reading `n_samples` values and `out` for writing `out_len` values.
 */
enum SfStatus sf_model_infer(const struct SfModel *model,
                             const double *audio,
                             size_t n_samples,
                             uint64_t seed,
                             double *out,
                             size_t out_len);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must be null or come from [`sf_model_load`] and not be used
 * afterwards.
 */
void sf_model_free(struct SfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYMFLOW_H */
