#ifndef INTERVENE_H
#define INTERVENE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum IvStatus {
  IV_STATUS_OK = 0,
  IV_STATUS_NULL_POINTER = 1,
  IV_STATUS_INVALID_UTF8 = 2,
  IV_STATUS_INVALID_ARGUMENT = 3,
  IV_STATUS_CONFIG = 4,
  IV_STATUS_RUNTIME = 5,
  IV_STATUS_BUFFER_TOO_SMALL = 6,
  IV_STATUS_PANIC = 7,
} IvStatus;

/**
 * Opaque handle to an oracle structural causal model.
 */
typedef struct IvScm IvScm;

/**
 * Message of the last error on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *iv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *iv_version(void);

/**
 * The 5-node benchmark model. Free with [`iv_scm_free`].
 */
struct IvScm *iv_scm_benchmark5(void);

/**
 * The 15-node benchmark model. Free with [`iv_scm_free`].
 */
struct IvScm *iv_scm_benchmark15(void);

/**
 * Builds a model from its TOML description and stores the handle in `out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IvStatus iv_scm_from_toml(const char *text, struct IvScm **out);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `scm` must be null or a handle from this library.
 */
size_t iv_scm_n_nodes(const struct IvScm *scm);

/**
 * Draws `n_rows` rows into `out` (row-major, `n_rows * n_nodes` values).
 * `node < 0` samples observationally; otherwise `node` is clamped to
 * `value`, which must lie in [-5, 5].
 *
 * # Safety
 * `scm` must be a handle from this library and `out` must point to
 * `out_len` writable doubles.
 */
enum IvStatus iv_scm_sample(const struct IvScm *scm,
                            int64_t node,
                            double value,
                            size_t n_rows,
                            uint64_t seed,
                            double *out,
                            size_t out_len);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `scm` must be null or a handle from this library not yet freed.
 */
void iv_scm_free(struct IvScm *scm);

/**
 * Runs an experiment described by a TOML run configuration and stores the
 * per-seed results and summary as a JSON string in `out_json`.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out_json` a valid
 * pointer. The returned string must be released with [`iv_string_free`].
 */
enum IvStatus iv_run_experiment(const char *config_toml, char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void iv_string_free(char *s);

#endif  /* INTERVENE_H */
