#ifndef STREAMKV_H
#define STREAMKV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SkvStatus {
  SKV_STATUS_OK = 0,
  // A required pointer argument was null.
  SKV_STATUS_NULL_ARGUMENT = 1,
  SKV_STATUS_INVALID_CONFIG = 2,
  SKV_STATUS_TRACE_FORMAT = 3,
  SKV_STATUS_RUNTIME = 4,
  // Malformed argument such as invalid UTF-8 or an out-of-range index.
  SKV_STATUS_INVALID_ARGUMENT = 5,
  // A Rust panic was caught at the boundary.
  SKV_STATUS_PANIC = 6,
} SkvStatus;

// Input layout of the built-in toy model.
typedef enum SkvRegime {
  SKV_REGIME_PLAIN = 0,
  SKV_REGIME_STRUCTURED = 1,
} SkvRegime;

// Opaque pipeline configuration.
typedef struct SkvConfig SkvConfig;

// Opaque simulator: the toy model feeding a compression pipeline.
typedef struct SkvSimulator SkvSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null when the last
// call succeeded. Valid until the next call on the same thread.
const char *skv_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void skv_string_free(char *s);

// Default configuration.
//
// # Safety
// `out` must be a valid pointer.
enum SkvStatus skv_config_default(struct SkvConfig **out);

// Parses and validates a TOML configuration.
//
// # Safety
// `toml` must be a nul-terminated string and `out` a valid pointer.
enum SkvStatus skv_config_from_toml(const char *toml, struct SkvConfig **out);

// Loads and validates a TOML configuration file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum SkvStatus skv_config_load(const char *path, struct SkvConfig **out);

// Serializes a configuration to TOML. Free the result with [`skv_string_free`].
//
// # Safety
// `cfg` must be a live handle and `out` a valid pointer.
enum SkvStatus skv_config_to_toml(const struct SkvConfig *cfg, char **out);

// Overrides the RNG seed.
//
// # Safety
// `cfg` must be a live handle.
enum SkvStatus skv_config_set_seed(struct SkvConfig *cfg, uint64_t seed);

// Releases a configuration. Null is ignored.
//
// # Safety
// `cfg` must come from this library and not have been freed.
void skv_config_free(struct SkvConfig *cfg);

// Creates a simulator from a copy of `cfg`.
//
// # Safety
// `cfg` must be a live handle and `out` a valid pointer.
enum SkvStatus skv_simulator_new(const struct SkvConfig *cfg,
                                 enum SkvRegime regime,
                                 struct SkvSimulator **out);

// Generates and compresses `frames` more frames. Stops at the first error,
// leaving the simulator at the last completed frame.
//
// # Safety
// `sim` must be a live handle.
enum SkvStatus skv_simulator_step(struct SkvSimulator *sim, size_t frames);

// Frames processed so far, or 0 for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
size_t skv_simulator_frames(const struct SkvSimulator *sim);

// Number of tokens currently cached at `layer`.
//
// # Safety
// `sim` must be a live handle and `out` a valid pointer.
enum SkvStatus skv_simulator_cache_len(const struct SkvSimulator *sim, size_t layer, size_t *out);

// Run report of the frames processed so far, as JSON. Free the result with
// [`skv_string_free`].
//
// # Safety
// `sim` must be a live handle and `out` a valid pointer.
enum SkvStatus skv_simulator_report_json(const struct SkvSimulator *sim, char **out);

// Releases a simulator. Null is ignored.
//
// # Safety
// `sim` must come from this library and not have been freed.
void skv_simulator_free(struct SkvSimulator *sim);

// Ascending ranks of `n` scores: the lowest gets 0, ties go to the lower index.
//
// # Safety
// `scores` and `ranks_out` must each point to `n` elements.
enum SkvStatus skv_compute_ranks(const double *scores, size_t n, size_t *ranks_out);

// Cross-layer consistency of `n` tokens from a `layers × n` row-major matrix
// of normalized ranks, all of which form one window.
//
// # Safety
// `ranks` must point to `layers * n` elements and `cons_out` to `n`.
enum SkvStatus skv_consistency(const double *ranks, size_t layers, size_t n, double *cons_out);

// `raw · (1 + λ · cons)` for `n` tokens.
//
// # Safety
// `raw`, `cons` and `out` must each point to `n` elements.
enum SkvStatus skv_enhance(const double *raw,
                           const double *cons,
                           size_t n,
                           double lambda,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMKV_H */
