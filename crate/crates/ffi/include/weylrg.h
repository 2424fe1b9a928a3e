#ifndef WEYLRG_H
#define WEYLRG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WeylrgPhase {
  WEYLRG_PHASE_SEMIMETAL = 0,
  WEYLRG_PHASE_INSULATOR = 1,
  WEYLRG_PHASE_CRITICAL = 2,
} WeylrgPhase;

typedef enum WeylrgStatus {
  WEYLRG_STATUS_OK = 0,
  WEYLRG_STATUS_NULL_POINTER = 1,
  WEYLRG_STATUS_INVALID_PARAMS = 2,
  /**
   * The operation has no answer for these parameters (e.g. Weyl points of an insulator).
   */
  WEYLRG_STATUS_NOT_APPLICABLE = 3,
  WEYLRG_STATUS_INDEX_OUT_OF_RANGE = 4,
  WEYLRG_STATUS_SINGULAR = 5,
  WEYLRG_STATUS_SIZE_LIMIT = 6,
  /**
   * Flow left the perturbative window or lost positivity.
   */
  WEYLRG_STATUS_FLOW_FAILURE = 7,
  WEYLRG_STATUS_NO_CONVERGENCE = 8,
  WEYLRG_STATUS_COMPUTATION_FAILED = 9,
  WEYLRG_STATUS_PANIC = 10,
} WeylrgStatus;

/**
 * Opaque model parameters.
 */
typedef struct WeylrgParams WeylrgParams;

/**
 * Opaque flow trajectory.
 */
typedef struct WeylrgTrajectory WeylrgTrajectory;

/**
 * Running couplings after one flow step.
 */
typedef struct WeylrgCouplings {
  int32_t h;
  /**
   * 1 for the lattice regime, 2 for the relativistic one.
   */
  uint8_t regime;
  double z;
  double v;
  double v3;
  double nu;
} WeylrgCouplings;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated version string.
 */
const char *weylrg_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t weylrg_last_error_message(char *buf, size_t len);

/**
 * Builds validated parameters with `mu` fixed through `r`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum WeylrgStatus weylrg_params_new(double t,
                                    double t_perp,
                                    double t_prime,
                                    double r,
                                    double u,
                                    struct WeylrgParams **out);

/**
 * # Safety
 * `p` must be null or a handle from [`weylrg_params_new`] not yet freed.
 */
void weylrg_params_free(struct WeylrgParams *p);

/**
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum WeylrgStatus weylrg_phase(const struct WeylrgParams *p, enum WeylrgPhase *out);

/**
 * Writes `p_F`, `v0` and `v3,0`; `NotApplicable` in the insulating phase.
 *
 * # Safety
 * `p` must be a live handle and the out-pointers writable.
 */
enum WeylrgStatus weylrg_weyl_points(const struct WeylrgParams *p,
                                     double *p_f,
                                     double *v0,
                                     double *v30);

/**
 * Crossover scale `h*`; `INT32_MIN` at the critical point.
 *
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum WeylrgStatus weylrg_crossover_scale(const struct WeylrgParams *p, int32_t *out);

/**
 * Free propagator at `(k0, k1, k2, k3)` as 8 doubles: real and imaginary
 * parts of entries 00, 01, 10, 11.
 *
 * # Safety
 * `p` must be a live handle and `out` must hold 8 writable doubles.
 */
enum WeylrgStatus weylrg_free_propagator(const struct WeylrgParams *p,
                                         double k0,
                                         double k1,
                                         double k2,
                                         double k3,
                                         double *out);

/**
 * Runs the flow with bare counterterm `nu` down to `h_min` on an `l³` grid.
 *
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum WeylrgStatus weylrg_flow_run(const struct WeylrgParams *p,
                                  double nu,
                                  int32_t h_min,
                                  size_t l,
                                  struct WeylrgTrajectory **out);

/**
 * Solves the counterterm fixed point; writes `ν` and the trajectory carrying it.
 *
 * # Safety
 * `p` must be a live handle and the out-pointers writable.
 */
enum WeylrgStatus weylrg_solve_nu(const struct WeylrgParams *p,
                                  int32_t h_min,
                                  size_t l,
                                  double *nu_out,
                                  struct WeylrgTrajectory **out);

/**
 * Number of couplings rows, counting the initial one.
 *
 * # Safety
 * `t` must be null or a live trajectory handle.
 */
size_t weylrg_trajectory_len(const struct WeylrgTrajectory *t);

/**
 * Row `index` of the trajectory; row 0 holds the initial couplings.
 *
 * # Safety
 * `t` must be a live handle and `out` writable.
 */
enum WeylrgStatus weylrg_trajectory_get(const struct WeylrgTrajectory *t,
                                        size_t index,
                                        struct WeylrgCouplings *out);

/**
 * Largest one-loop beta magnitude along the trajectory.
 *
 * # Safety
 * `t` must be a live handle and `out` writable.
 */
enum WeylrgStatus weylrg_trajectory_max_beta(const struct WeylrgTrajectory *t, double *out);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void weylrg_trajectory_free(struct WeylrgTrajectory *t);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* WEYLRG_H */
