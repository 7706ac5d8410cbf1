/* C ABI for the hawkes-mca solver. Generated by cbindgen; do not edit. */

#ifndef HAWKES_MCA_H
#define HAWKES_MCA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define HMCA_OK 0

#define HMCA_INVALID_ARGUMENT 1

#define HMCA_CONFIG_ERROR 2

#define HMCA_INVARIANT_ERROR 3

#define HMCA_NUMERIC_ERROR 4

/**
 * Opaque validated configuration.
 */
typedef struct hmca_config hmca_config;

/**
 * Opaque solved problem: lattice, value surface and the model it came from.
 */
typedef struct hmca_solution hmca_solution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static C string.
 */
const char *hmca_version(void);

/**
 * Message of the last failure on this thread (empty when none).
 */
const char *hmca_last_error(void);

/**
 * Loads and validates a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t hmca_config_load(const char *path, struct hmca_config **out);

/**
 * Parses a configuration from a TOML string.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t hmca_config_load_str(const char *text, struct hmca_config **out);

/**
 * Releases a configuration handle.
 *
 * # Safety
 * `cfg` must come from a `hmca_config_load*` call (or be null).
 */
void hmca_config_free(struct hmca_config *cfg);

/**
 * Solves the backward dynamic program for the configured problem.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` a valid pointer.
 */
int32_t hmca_solve(const struct hmca_config *cfg, struct hmca_solution **out);

/**
 * Releases a solution handle.
 *
 * # Safety
 * `sol` must come from `hmca_solve` (or be null).
 */
void hmca_solution_free(struct hmca_solution *sol);

/**
 * Value surface query at (t, x, ς) by multilinear interpolation; `sigma`
 * carries `dim` excitation components.
 *
 * # Safety
 * `sol`, `sigma` (length `dim`) and `out_value` must be valid.
 */
int32_t hmca_solution_value(const struct hmca_solution *sol,
                            double t,
                            double x,
                            const double *sigma,
                            uintptr_t dim,
                            double *out_value);

/**
 * Convenience query for single-component kernels: the initial intensity
 * λ₀ is mapped onto the excitation grid.
 *
 * # Safety
 * `sol` and `out_value` must be valid.
 */
int32_t hmca_solution_value_at_lambda(const struct hmca_solution *sol,
                                      double t,
                                      double x,
                                      double lambda0,
                                      double *out_value);

/**
 * Solves and rolls out the optimal policy with `n_paths` Monte Carlo paths
 * from (x0, λ₀), writing the sample mean and standard error.
 *
 * # Safety
 * `cfg`, `out_mean` and `out_se` must be valid.
 */
int32_t hmca_rollout(const struct hmca_config *cfg,
                     double x0,
                     double lambda0,
                     uintptr_t n_paths,
                     uint64_t seed,
                     double *out_mean,
                     double *out_se);

/**
 * Runs the aggregated invariant suite; returns 0 when every check passes,
 * 3 otherwise (the failing check names are in `hmca_last_error`).
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
int32_t hmca_check(const struct hmca_config *cfg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAWKES_MCA_H */
