#ifndef APLG_H
#define APLG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AplgStatus {
  APLG_STATUS_OK = 0,
  APLG_STATUS_NULL_POINTER = 1,
  APLG_STATUS_INVALID_ARGUMENT = 2,
  APLG_STATUS_CFL_VIOLATION = 3,
  APLG_STATUS_NUMERICAL_FAILURE = 4,
  APLG_STATUS_IO = 5,
  APLG_STATUS_PANIC = 6,
} AplgStatus;

/**
 * Opaque PDE solver together with its current state.
 */
typedef struct AplgPdeSolver AplgPdeSolver;

/**
 * Opaque KMC trajectory.
 */
typedef struct AplgSimulation AplgSimulation;

/**
 * Microscopic model constants.
 */
typedef struct AplgSimParams {
  uint32_t n;
  double d_t;
  double v0;
  double d_r;
  double t_end;
  uint64_t seed;
} AplgSimParams;

/**
 * Macroscopic model constants.
 */
typedef struct AplgPdeParams {
  double d_t;
  double v0;
  double d_r;
  /**
   * Nonzero adds Lax-Friedrichs dissipation to the drift flux.
   */
  uint8_t llf;
} AplgPdeParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *aplg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aplg_version(void);

/**
 * Start a trajectory from a configuration sampled from `profile`
 * (`family:key=value,...`), using random stream `stream`.
 *
 * # Safety
 * `params` and `profile` must be valid pointers; `out` must be writable.
 */
enum AplgStatus aplg_simulation_new(const struct AplgSimParams *params,
                                    const char *profile,
                                    uint64_t stream,
                                    struct AplgSimulation **out);

/**
 * Advance to macroscopic time `t` (not past the horizon).
 *
 * # Safety
 * `sim` must come from [`aplg_simulation_new`] and not be freed.
 */
enum AplgStatus aplg_simulation_advance(struct AplgSimulation *sim, double t);

/**
 * Current time, accepted-event count and species counts.
 *
 * # Safety
 * `sim` must be live; each output pointer may be null to skip it.
 */
enum AplgStatus aplg_simulation_status(const struct AplgSimulation *sim,
                                       double *time,
                                       uint64_t *events,
                                       uintptr_t *active,
                                       uintptr_t *passive);

/**
 * Copy the site states into `tags` (0 empty, 1 active, 2 passive) and
 * `angles`, both of length `len = n²`, row-major with `x` fastest.
 *
 * # Safety
 * `sim` must be live; `tags` and `angles` must hold `len` elements.
 */
enum AplgStatus aplg_simulation_sites(struct AplgSimulation *sim,
                                      uint8_t *tags,
                                      double *angles,
                                      uintptr_t len);

/**
 * # Safety
 * `sim` must come from [`aplg_simulation_new`] or be null; it is invalid afterwards.
 */
void aplg_simulation_free(struct AplgSimulation *sim);

/**
 * Create a solver on a `g × g × ntheta` grid initialized from `profile`.
 *
 * # Safety
 * `params` and `profile` must be valid; `out` must be writable.
 */
enum AplgStatus aplg_pde_new(uint32_t g,
                             uint32_t ntheta,
                             const struct AplgPdeParams *params,
                             const char *profile,
                             struct AplgPdeSolver **out);

/**
 * Integrate to time `t`; `dt <= 0` picks the step from the stability bound.
 *
 * # Safety
 * `pde` must be live.
 */
enum AplgStatus aplg_pde_advance(struct AplgPdeSolver *pde, double t, double dt);

/**
 * Current time, species masses and stability bound; null outputs are skipped.
 *
 * # Safety
 * `pde` must be live.
 */
enum AplgStatus aplg_pde_status(const struct AplgPdeSolver *pde,
                                double *time,
                                double *mass_a,
                                double *mass_p,
                                double *cfl_bound);

/**
 * Copy `ρ^a`, `ρ^p` (length `g²`, row-major) into the given buffers.
 *
 * # Safety
 * `pde` must be live and both buffers must hold `len` elements.
 */
enum AplgStatus aplg_pde_densities(const struct AplgPdeSolver *pde,
                                   double *rho_a,
                                   double *rho_p,
                                   uintptr_t len);

/**
 * # Safety
 * `pde` must come from [`aplg_pde_new`] or be null; it is invalid afterwards.
 */
void aplg_pde_free(struct AplgPdeSolver *pde);

/**
 * Self-diffusion coefficient `d_s(α)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AplgStatus aplg_d_s(double alpha, double *out);

/**
 * Derivative `d_s'(α)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AplgStatus aplg_d_s_prime(double alpha, double *out);

/**
 * `𝒟(α) = (1 − d_s(α))/α`, continuously extended to 0.
 *
 * # Safety
 * `out` must be writable.
 */
enum AplgStatus aplg_big_d(double alpha, double *out);

/**
 * `s(α) = 𝒟(α) − 1`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AplgStatus aplg_s(double alpha, double *out);

/**
 * Mobility block coefficients `[aa, ap, pp]`.
 *
 * # Safety
 * `out` must hold three doubles.
 */
enum AplgStatus aplg_mobility(double alpha_a, double alpha_p, double *out);

/**
 * Spectral gap of the confined generator on `B_l` with the given angle lists.
 *
 * # Safety
 * `theta_a`/`theta_p` must hold `ka`/`kp` doubles (may be null when zero);
 * `out` must be writable.
 */
enum AplgStatus aplg_spectral_gap(uint32_t l,
                                  const double *theta_a,
                                  uintptr_t ka,
                                  const double *theta_p,
                                  uintptr_t kp,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APLG_H */
