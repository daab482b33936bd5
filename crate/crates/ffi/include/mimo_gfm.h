#ifndef MIMO_GFM_H
#define MIMO_GFM_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from the mimo-gfm-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of closed-loop states written by [`mg_equilibrium`].
 */
#define MG_N_STATES 17

/**
 * Number of power-stage states used by [`mg_plant_deriv`].
 */
#define MG_N_PLANT_STATES 10

/**
 * Length of the gain vector written by [`mg_synthesize`].
 */
#define MG_N_GAINS 17

/**
 * Capacity of [`MgAnalysis::channel_norms`].
 */
#define MG_MAX_CHANNELS 4

typedef enum MgStatus {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_ARGUMENT = 2,
  MG_STATUS_CONFIG = 3,
  MG_STATUS_NON_CONVERGENCE = 4,
  MG_STATUS_INFEASIBLE = 5,
  MG_STATUS_BLOW_UP = 6,
  MG_STATUS_UNSTABLE = 7,
  MG_STATUS_NUMERICAL = 8,
  MG_STATUS_PANIC = 9,
} MgStatus;

/**
 * Loaded configuration.
 */
typedef struct MgSession MgSession;

/**
 * Sampled simulation trace.
 */
typedef struct MgTrace MgTrace;

typedef struct MgAnalysis {
  double spectral_abscissa;
  /**
   * Max of the channel norms, or the instability penalty.
   */
  double objective;
  /**
   * First `n_channels` entries are valid when `stable` is set.
   */
  double channel_norms[MG_MAX_CHANNELS];
  uint32_t n_channels;
  bool stable;
} MgAnalysis;

/**
 * Per-unit plant parameters.
 */
typedef struct MgPlantParams {
  double l_f;
  double c_f;
  double l_g;
  double r_g;
  double c_dc;
  double t_sw;
  double omega_b;
  double v_g;
  double omega_g;
} MgPlantParams;

typedef struct MgSynthesis {
  double objective;
  double initial_objective;
  uint64_t evaluations;
  uint64_t iterations;
} MgSynthesis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mg_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the next
 * failing call on the same thread.
 */
const char *mg_last_error(void);

/**
 * Loads a configuration file (includes resolve relative to it).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MgStatus mg_session_from_file(const char *path, struct MgSession **out);

/**
 * Session with the shipped reference configuration (both published gain
 * sets, both step scenarios, the standard synthesis settings).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MgStatus mg_session_reference(struct MgSession **out);

/**
 * # Safety
 * `s` must come from a session constructor and not be used afterwards.
 */
void mg_session_free(struct MgSession *s);

/**
 * # Safety
 * `s` must be a live session or NULL.
 */
uintptr_t mg_session_gain_set_count(const struct MgSession *s);

/**
 * Name of the `index`-th gain set, owned by the session; NULL when out of
 * range.
 *
 * # Safety
 * `s` must be a live session or NULL.
 */
const char *mg_session_gain_set_name(const struct MgSession *s, uintptr_t index);

/**
 * Solves the closed-loop equilibrium. `gains` may be NULL to use the
 * session's active set. Writes `MG_N_STATES` values.
 *
 * # Safety
 * `states` must have room for `len` doubles.
 */
enum MgStatus mg_equilibrium(const struct MgSession *s,
                             const char *gains,
                             double *states,
                             uintptr_t len);

/**
 * Stability and weighted channel norms of one gain set.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MgStatus mg_analyze(const struct MgSession *s, const char *gains, struct MgAnalysis *out);

/**
 * Runs a configured scenario. Release the trace with [`mg_trace_free`].
 *
 * # Safety
 * `scenario` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MgStatus mg_simulate(const struct MgSession *s,
                          const char *scenario,
                          const char *gains,
                          struct MgTrace **out);

/**
 * # Safety
 * `t` must be a live trace or NULL.
 */
uintptr_t mg_trace_rows(const struct MgTrace *t);

/**
 * Number of signal columns, excluding time.
 *
 * # Safety
 * `t` must be a live trace or NULL.
 */
uintptr_t mg_trace_columns(const struct MgTrace *t);

/**
 * # Safety
 * `t` must be a live trace or NULL.
 */
const char *mg_trace_column_name(const struct MgTrace *t, uintptr_t index);

/**
 * Row-major samples, `1 + mg_trace_columns` values per row, time first.
 *
 * # Safety
 * `t` must be a live trace or NULL.
 */
const double *mg_trace_data(const struct MgTrace *t);

/**
 * # Safety
 * `t` must come from [`mg_simulate`] and not be used afterwards.
 */
void mg_trace_free(struct MgTrace *t);

/**
 * Per-unit parameters of the reference setup.
 */
struct MgPlantParams mg_plant_params_reference(void);

/**
 * Power-stage derivative for state `x` (`MG_N_PLANT_STATES` values),
 * voltage command `(e_dref, e_qref)` and controller input
 * `(i_u, omega_u, e_u)`.
 *
 * # Safety
 * `x` and `dx` must hold `MG_N_PLANT_STATES` doubles; `params` must be valid.
 */
enum MgStatus mg_plant_deriv(const double *x,
                             double e_dref,
                             double e_qref,
                             double i_u,
                             double omega_u,
                             double e_u,
                             const struct MgPlantParams *params,
                             double *dx);

/**
 * H-infinity norm of a stable system by Hamiltonian bisection. `a` is
 * `n x n`, `b` is `n x m`, `c` is `p x n`, `d` is `p x m`, all row-major.
 *
 * # Safety
 * Matrix pointers must hold the stated number of doubles (may be NULL when
 * that count is zero).
 */
enum MgStatus mg_hinf_norm(uintptr_t n,
                           uintptr_t m,
                           uintptr_t p,
                           const double *a,
                           const double *b,
                           const double *c,
                           const double *d,
                           double tol,
                           double *out);

/**
 * Runs the configured synthesis. `initial` may be NULL to use the configured
 * start set; negative `budget` or `seed` keep the configured values. Writes
 * `MG_N_GAINS` gains in the library's gain order.
 *
 * # Safety
 * `theta` must hold `MG_N_GAINS` doubles; `out` may be NULL.
 */
enum MgStatus mg_synthesize(const struct MgSession *s,
                            const char *initial,
                            int64_t budget,
                            int64_t seed,
                            double *theta,
                            struct MgSynthesis *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMO_GFM_H */
