#ifndef TMSBI_H
#define TMSBI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TMSBI_OK 0

// A required pointer argument was null.
#define TMSBI_ERR_NULL_POINTER 1

// An argument was out of range, not UTF-8, or of the wrong length.
#define TMSBI_ERR_INVALID_ARGUMENT 2

// A file could not be read.
#define TMSBI_ERR_IO 3

// A file or string was not a valid map or surrogate document.
#define TMSBI_ERR_FORMAT 4

// Evaluation failed (non-finite input, inversion bracket failure, ...).
#define TMSBI_ERR_NUMERICAL 5

// A Rust panic was caught at the boundary.
#define TMSBI_ERR_PANIC 6

// Posterior transport map from reference `N(0, I)` to the posterior.
typedef struct TmsbiMap TmsbiMap;

// Surrogate likelihood `π̃(y | θ)` of one assimilation step.
typedef struct TmsbiSurrogate TmsbiSurrogate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tmsbi_version(void);

// Message of the last failure on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *tmsbi_last_error_message(void);

// Loads a posterior map file (`assimilation/maps/posterior-NNNN.json`).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int tmsbi_map_load(const char *path, struct TmsbiMap **out);

// Parses a posterior map from its JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
int tmsbi_map_from_json(const char *json, struct TmsbiMap **out);

// Releases a map; null is ignored.
//
// # Safety
// `map` must come from a `tmsbi_map_*` constructor and not be used afterwards.
void tmsbi_map_free(struct TmsbiMap *map);

// Parameter dimension of the map; 0 for null.
//
// # Safety
// `map` must be null or a live handle.
size_t tmsbi_map_dim(const struct TmsbiMap *map);

// Number of maps in the composition; 0 for null.
//
// # Safety
// `map` must be null or a live handle.
size_t tmsbi_map_length(const struct TmsbiMap *map);

// Pushes a reference point `x` to the posterior: `out = T(x)`.
//
// # Safety
// `x` and `out` must point to `dim` doubles.
int tmsbi_map_evaluate(const struct TmsbiMap *map, const double *x, size_t dim, double *out);

// Pulls a posterior point back to the reference: `out = T⁻¹(theta)`.
//
// # Safety
// `theta` and `out` must point to `dim` doubles.
int tmsbi_map_inverse(const struct TmsbiMap *map, const double *theta, size_t dim, double *out);

// Draws `n` posterior samples into `out` (`n × dim`, row-major);
// deterministic given `seed`.
//
// # Safety
// `out` must point to `out_len` doubles.
int tmsbi_map_sample(const struct TmsbiMap *map,
                     size_t n,
                     uint64_t seed,
                     double *out,
                     size_t out_len);

// Loads one surrogate file (`registry/surrogate-NNNN.json`).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int tmsbi_surrogate_load(const char *path, struct TmsbiSurrogate **out);

// Releases a surrogate; null is ignored.
//
// # Safety
// `s` must come from `tmsbi_surrogate_load` and not be used afterwards.
void tmsbi_surrogate_free(struct TmsbiSurrogate *s);

// Assimilation step the surrogate belongs to; 0 for null.
//
// # Safety
// `s` must be null or a live handle.
size_t tmsbi_surrogate_step(const struct TmsbiSurrogate *s);

// Parameter dimension; 0 for null.
//
// # Safety
// `s` must be null or a live handle.
size_t tmsbi_surrogate_n_theta(const struct TmsbiSurrogate *s);

// Data dimension; 0 for null.
//
// # Safety
// `s` must be null or a live handle.
size_t tmsbi_surrogate_n_y(const struct TmsbiSurrogate *s);

// Surrogate log-likelihood `log π̃(y | θ)`. When `grad` is non-null the
// θ-gradient is written there (`n_theta` doubles).
//
// # Safety
// `theta` and `grad` (if non-null) must hold `n_theta` doubles, `y` must
// hold `n_y` doubles and `value` must be valid.
int tmsbi_surrogate_loglik(const struct TmsbiSurrogate *s,
                           const double *theta,
                           size_t n_theta,
                           const double *y,
                           size_t n_y,
                           double *value,
                           double *grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TMSBI_H */
