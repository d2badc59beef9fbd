#ifndef ATTRACTOR_RL_H
#define ATTRACTOR_RL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum ArStatus {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_POINTER = 1,
  AR_STATUS_INVALID_ARGUMENT = 2,
  AR_STATUS_IO = 3,
  AR_STATUS_PARSE = 4,
  AR_STATUS_DIVERGED = 5,
  AR_STATUS_INTERNAL = 6,
} ArStatus;

/**
 * Attractor label.
 */
typedef enum ArLabel {
  /**
   * Small-amplitude attractor.
   */
  AR_LABEL_SA = 0,
  /**
   * Large-amplitude attractor.
   */
  AR_LABEL_LA = 1,
} ArLabel;

/**
 * Opaque basin classifier.
 */
typedef struct ArBoaModel ArBoaModel;

/**
 * Opaque attractor catalog.
 */
typedef struct ArCatalog ArCatalog;

/**
 * Opaque policy network with its action bound.
 */
typedef struct ArPolicy ArPolicy;

/**
 * `x'' + delta x' + alpha x + beta x^3 = gamma_f cos(phi + phi0) + a`,
 * with `phi' = omega`.
 */
typedef struct ArDuffingParams {
  double delta;
  double alpha;
  double beta;
  double gamma_f;
  double omega;
  double phi0;
} ArDuffingParams;

/**
 * RK4 step and control (zero-order hold) interval.
 */
typedef struct ArIntegrator {
  double dt_inner;
  double dt_control;
} ArIntegrator;

/**
 * Oscillator state: position, velocity and forcing phase in `[0, 2pi)`.
 */
typedef struct ArState {
  double x;
  double v;
  double phi;
} ArState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *ar_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ar_version(void);

struct ArDuffingParams ar_default_params(void);

struct ArIntegrator ar_default_integrator(void);

/**
 * Advances `state` by one control interval under the constant force
 * `action`.
 *
 * # Safety
 * All pointers must be valid; `out` may alias `state`.
 */
enum ArStatus ar_step_control(const struct ArDuffingParams *params,
                              const struct ArIntegrator *integrator,
                              const struct ArState *state,
                              double action,
                              struct ArState *out);

/**
 * Integrates for `duration` time units under the constant force `action`.
 *
 * # Safety
 * All pointers must be valid; `out` may alias `state`.
 */
enum ArStatus ar_integrate(const struct ArDuffingParams *params,
                           const struct ArIntegrator *integrator,
                           const struct ArState *state,
                           double action,
                           double duration,
                           struct ArState *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
enum ArStatus ar_catalog_load(const char *path, struct ArCatalog **out);

/**
 * # Safety
 * `catalog` must be null or a handle from [`ar_catalog_load`] not yet freed.
 */
void ar_catalog_free(struct ArCatalog *catalog);

/**
 * Steady-state amplitude `max |x|` of one attractor.
 *
 * # Safety
 * `catalog` must be a live handle and `out` valid for one write.
 */
enum ArStatus ar_catalog_amplitude(const struct ArCatalog *catalog,
                                   enum ArLabel label,
                                   double *out);

/**
 * Amplitude separating the two attractors.
 *
 * # Safety
 * `catalog` must be a live handle and `out` valid for one write.
 */
enum ArStatus ar_catalog_threshold(const struct ArCatalog *catalog, double *out);

/**
 * Point of the attractor's orbit at forcing phase 0.
 *
 * # Safety
 * `catalog` must be a live handle and `out` valid for one write.
 */
enum ArStatus ar_catalog_anchor(const struct ArCatalog *catalog,
                                enum ArLabel label,
                                struct ArState *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
enum ArStatus ar_boa_load(const char *path, struct ArBoaModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`ar_boa_load`] not yet freed.
 */
void ar_boa_free(struct ArBoaModel *model);

/**
 * Predicted basin of `state`.
 *
 * # Safety
 * `model` must be a live handle, `state` valid and `out` valid for one write.
 */
enum ArStatus ar_boa_predict(const struct ArBoaModel *model,
                             const struct ArState *state,
                             enum ArLabel *out);

/**
 * Kernel decision value; positive means LA.
 *
 * # Safety
 * `model` must be a live handle, `state` valid and `out` valid for one write.
 */
enum ArStatus ar_boa_decision(const struct ArBoaModel *model,
                              const struct ArState *state,
                              double *out);

/**
 * Loads a policy network and binds it to the action bound `bound`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
enum ArStatus ar_policy_load(const char *path, double bound, struct ArPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from [`ar_policy_load`] not yet freed.
 */
void ar_policy_free(struct ArPolicy *policy);

/**
 * Noise-free action `F pi(state)`, within `[-F, F]`.
 *
 * # Safety
 * `policy` must be a live handle, `state` valid and `out` valid for one write.
 */
enum ArStatus ar_policy_action(const struct ArPolicy *policy,
                               const struct ArState *state,
                               double *out);

/**
 * Action bound the policy was loaded with.
 *
 * # Safety
 * `policy` must be a live handle and `out` valid for one write.
 */
enum ArStatus ar_policy_bound(const struct ArPolicy *policy, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTRACTOR_RL_H */
