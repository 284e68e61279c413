/* C interface to the rrwalk reinforced-random-walk toolkit. Generated by cbindgen; do not edit. */

#ifndef RRWALK_H
#define RRWALK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status code returned by every fallible function in this interface.
 */
typedef enum rrw_status {
  /*
   Success.
   */
  RRW_OK = 0,
  /*
   A required pointer argument was NULL.
   */
  RRW_NULL_POINTER = 1,
  /*
   Arguments failed validation (branching factor, reinforcement,
   tilt sign, replica count, ...).
   */
  RRW_INVALID_ARGUMENT = 2,
  /*
   The simulation or estimator reported an error.
   */
  RRW_ESTIMATION_FAILED = 3,
  /*
   The exact distribution is unavailable (horizon above the
   enumeration cap).
   */
  RRW_ORACLE_FAILED = 4,
  /*
   A caller-provided output buffer is too small.
   */
  RRW_BUFFER_TOO_SMALL = 5,
  /*
   An internal panic was caught; the handle states are unchanged.
   */
  RRW_PANIC = 6,
} rrw_status;

/*
 Reinforcement rule selector for [`rrw_config_new`].
 */
typedef enum rrw_scheme {
  /*
   Edge weight `1 + k(c-1)` after `k` traversals.
   */
  RRW_SCHEME_LINEAR = 0,
  /*
   Edge weight jumps to `c` on first traversal and stays there.
   */
  RRW_SCHEME_ONCE = 1,
  /*
   Linear reinforcement capped after `k_max` traversals.
   */
  RRW_SCHEME_K_TIMES = 2,
} rrw_scheme;

/*
 Opaque walk configuration: branching factor, reinforcement rule,
 horizon, and base seed.
 */
typedef struct rrw_config rrw_config;

/*
 Opaque batch of regeneration increments in harvest order, stored as
 parallel duration / height-gain arrays.
 */
typedef struct rrw_increments rrw_increments;

/*
 Opaque simulated trajectory (the per-step height path).
 */
typedef struct rrw_trace rrw_trace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Version of the underlying toolkit as a static NUL-terminated string.
 Never NULL; do not free.
 */
const char *rrw_version(void);

/*
 Message for the calling thread's most recent failure, as a
 NUL-terminated string. Empty (not NULL) if nothing failed yet.
 Valid until this thread's next failing call; do not free.
 */
const char *rrw_last_error(void);

/*
 Create a walk configuration.

 `k_max` is only read for `RRW_SCHEME_K_TIMES`. `horizon` is the step
 count simulated by [`rrw_simulate`]; estimator functions taking their
 own horizon ignore it. On success writes a handle to `*out` (free
 with [`rrw_config_free`]).

 # Safety
 `out` must be valid for writing one pointer.
 */
enum rrw_status rrw_config_new(uint32_t b,
                               enum rrw_scheme scheme,
                               double c,
                               uint32_t k_max,
                               uint64_t horizon,
                               uint64_t seed,
                               struct rrw_config **out);

/*
 Free a configuration handle. NULL is a no-op.

 # Safety
 `config` must be NULL or a handle from [`rrw_config_new`] not yet
 freed; it must not be used afterwards.
 */
void rrw_config_free(struct rrw_config *config);

/*
 Run one walk for the configured horizon on the given RNG stream and
 return its trajectory. Equal (config, stream) pairs give bitwise
 equal trajectories.

 # Safety
 `config` must be a live configuration handle; `out` must be valid
 for writing one pointer.
 */
enum rrw_status rrw_simulate(const struct rrw_config *config,
                             uint64_t stream,
                             struct rrw_trace **out);

/*
 Free a trace handle. NULL is a no-op.

 # Safety
 `trace` must be NULL or a handle from [`rrw_simulate`] not yet
 freed; it must not be used afterwards.
 */
void rrw_trace_free(struct rrw_trace *trace);

/*
 Number of height entries in the trace: horizon + 1 (the walk starts
 at the root, height 0). Returns 0 for NULL.

 # Safety
 `trace` must be NULL or a live trace handle.
 */
size_t rrw_trace_len(const struct rrw_trace *trace);

/*
 Height after each step, as an array of [`rrw_trace_len`] entries
 starting at height 0. Borrows from the trace; NULL for NULL input.

 # Safety
 `trace` must be NULL or a live trace handle; the returned pointer
 dies with the trace.
 */
const uint32_t *rrw_trace_heights(const struct rrw_trace *trace);

/*
 Final height of the trace.

 # Safety
 `trace` must be a live trace handle; `height_out` must be valid for
 writing one `uint32_t`.
 */
enum rrw_status rrw_trace_final_height(const struct rrw_trace *trace, uint32_t *height_out);

/*
 Harvest confirmed i.i.d. regeneration increments from `replicas`
 parallel walks at the config's horizon, replica `i` on stream
 `stream_base + i`. `margin` is the confirmation depth; pass 0 for
 the scheme-aware default. Free the result with
 [`rrw_increments_free`].

 # Safety
 `config` must be a live configuration handle; `out` must be valid
 for writing one pointer.
 */
enum rrw_status rrw_harvest(const struct rrw_config *config,
                            size_t replicas,
                            uint32_t margin,
                            uint64_t stream_base,
                            struct rrw_increments **out);

/*
 Free an increments handle. NULL is a no-op.

 # Safety
 `increments` must be NULL or a handle from [`rrw_harvest`] not yet
 freed; it must not be used afterwards.
 */
void rrw_increments_free(struct rrw_increments *increments);

/*
 Number of harvested increments. Returns 0 for NULL.

 # Safety
 `increments` must be NULL or a live increments handle.
 */
size_t rrw_increments_len(const struct rrw_increments *increments);

/*
 Block durations, as an array of [`rrw_increments_len`] entries
 parallel to [`rrw_increments_height_gains`]. Borrows from the
 handle; NULL for NULL input.

 # Safety
 `increments` must be NULL or a live increments handle; the returned
 pointer dies with it.
 */
const uint64_t *rrw_increments_durations(const struct rrw_increments *increments);

/*
 Block height gains (each at least 1), parallel to
 [`rrw_increments_durations`]. Borrows from the handle; NULL for NULL
 input.

 # Safety
 `increments` must be NULL or a live increments handle; the returned
 pointer dies with it.
 */
const uint32_t *rrw_increments_height_gains(const struct rrw_increments *increments);

/*
 Escape speed `h(X_n)/n` averaged over `replicas` walks at the
 config's horizon (needs at least 2 replicas and a nonzero horizon).

 # Safety
 `config` must be a live configuration handle; `estimate_out` and
 `stderr_out` must each be valid for writing one `double`.
 */
enum rrw_status rrw_speed_direct(const struct rrw_config *config,
                                 size_t replicas,
                                 uint64_t stream_base,
                                 double *estimate_out,
                                 double *stderr_out);

/*
 Escape speed as mean height gain over mean duration across harvested
 regeneration increments (needs at least 30 of them), with a
 delta-method standard error.

 # Safety
 `increments` must be a live increments handle; `estimate_out` and
 `stderr_out` must each be valid for writing one `double`.
 */
enum rrw_status rrw_speed_ratio(const struct rrw_increments *increments,
                                double *estimate_out,
                                double *stderr_out);

/*
 Estimate `P(h(X_n) >= ceil((speed + epsilon) n))` from `replicas`
 walks of `n` steps, importance-sampled with the given tilt
 (`tilt >= 0`; 0 means plain Monte Carlo). Thresholds outside
 `1..=n` return the exact probability with a zero standard error.

 # Safety
 `config` must be a live configuration handle; `p_out` and
 `stderr_out` must each be valid for writing one `double`.
 */
enum rrw_status rrw_tail_upper(const struct rrw_config *config,
                               double speed,
                               double epsilon,
                               uint64_t n,
                               size_t replicas,
                               double tilt,
                               uint64_t stream_base,
                               double *p_out,
                               double *stderr_out);

/*
 Estimate the stay-low probability `P(h(X_n) <= level)` from
 `replicas` walks of `n` steps, importance-sampled with the given
 tilt (`tilt <= 0`; 0 means plain Monte Carlo).

 # Safety
 `config` must be a live configuration handle; `p_out` and
 `stderr_out` must each be valid for writing one `double`.
 */
enum rrw_status rrw_tail_lower(const struct rrw_config *config,
                               uint32_t level,
                               uint64_t n,
                               size_t replicas,
                               double tilt,
                               uint64_t stream_base,
                               double *p_out,
                               double *stderr_out);

/*
 Exact distribution of the height after `n` steps (`n` at most 8):
 writes `P(h(X_n) = h)` for `h = 0..=n` into `atoms_out[0..n+1]` and
 stores the entry count in `*written_out`. Fails with
 `RRW_BUFFER_TOO_SMALL` when `capacity <= n`.

 # Safety
 `config` must be a live configuration handle; `atoms_out` must be
 valid for writing `capacity` doubles; `written_out` must be valid
 for writing one `size_t`.
 */
enum rrw_status rrw_exact_distribution(const struct rrw_config *config,
                                       uint64_t n,
                                       double *atoms_out,
                                       size_t capacity,
                                       size_t *written_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RRWALK_H */
