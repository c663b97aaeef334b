#ifndef LMA_H
#define LMA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum LmaStatus {
  LMA_STATUS_OK = 0,
  LMA_STATUS_NULL_POINTER = 1,
  LMA_STATUS_INVALID_ARGUMENT = 2,
  LMA_STATUS_IO = 3,
  LMA_STATUS_PARSE = 4,
  LMA_STATUS_NOT_CONVEX = 5,
  LMA_STATUS_DET_OUT_OF_BOUNDS = 6,
  LMA_STATUS_SECTION = 7,
  LMA_STATUS_TRANSFORM = 8,
  LMA_STATUS_SOLVER = 9,
  LMA_STATUS_ESTIMATE = 10,
  LMA_STATUS_CONFIG = 11,
  LMA_STATUS_PANIC = 12,
} LmaStatus;

/**
 * Uniform grid on a rectangle.
 */
typedef struct LmaGrid LmaGrid;

/**
 * Validated convex potential sampled on a grid.
 */
typedef struct LmaPotential LmaPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error of this thread into `buf` (NUL terminated,
 * truncated to `len`) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lma_last_error_message(char *buf, size_t len);

/**
 * Static name of a status code.
 */
const char *lma_status_name(enum LmaStatus s);

/**
 * `n × n` grid on `[lo, hi]²`.
 *
 * # Safety
 * `grid_out` must be null or writable.
 */
enum LmaStatus lma_grid_new_square(size_t n, double lo, double hi, struct LmaGrid **grid_out);

/**
 * # Safety
 * `grid` must be null or come from `lma_grid_new_square` and not be freed twice.
 */
void lma_grid_free(struct LmaGrid *grid);

/**
 * Number of nodes, `nx·ny`; 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t lma_grid_len(const struct LmaGrid *grid);

/**
 * Potential from a family spec such as `identity`, `skew:0.5` or
 * `diagonal:2,0.5`, validated against the family's own bounds.
 *
 * # Safety
 * `spec` must be null or NUL terminated; `grid` null or live; `potential_out` null or writable.
 */
enum LmaStatus lma_potential_from_family(const char *spec,
                                         const struct LmaGrid *grid,
                                         struct LmaPotential **potential_out);

/**
 * Potential from sampled values with `det D²φ ∈ [lambda, big_lambda]`.
 *
 * # Safety
 * `values` must hold `len` readable doubles; pointers as for `lma_potential_from_family`.
 */
enum LmaStatus lma_potential_from_values(const struct LmaGrid *grid,
                                         const double *values,
                                         size_t len,
                                         double lambda,
                                         double big_lambda,
                                         struct LmaPotential **potential_out);

/**
 * # Safety
 * `potential` must be null or a live handle not freed before.
 */
void lma_potential_free(struct LmaPotential *potential);

/**
 * Measured range of `det D²φ` over the validated nodes.
 *
 * # Safety
 * `potential` null or live; `lo`, `hi` null or writable.
 */
enum LmaStatus lma_potential_det_range(const struct LmaPotential *potential,
                                       double *lo,
                                       double *hi);

/**
 * Solves `D_j(Φ^{ij}D_iu) = div F + f` with Dirichlet data `boundary`.
 * Null `flux1`, `flux2` or `source` mean zero; `boundary` is required.
 * `u_out` receives `len` values, NaN off the solution mask.
 *
 * # Safety
 * Every non-null array must hold `len` doubles.
 */
enum LmaStatus lma_solve(const struct LmaPotential *potential,
                         const double *flux1,
                         const double *flux2,
                         const double *source,
                         const double *boundary,
                         size_t len,
                         double *u_out);

/**
 * Solves directly and through the partial Legendre transform and reports
 * the max-norm difference after pulling back.
 *
 * # Safety
 * As for `lma_solve`; `max_diff` null or writable.
 */
enum LmaStatus lma_compare_paths(const struct LmaPotential *potential,
                                 const double *flux1,
                                 const double *flux2,
                                 const double *source,
                                 const double *boundary,
                                 size_t len,
                                 double *max_diff);

/**
 * Fitted exponent and prefactor of `osc u` over the sections
 * `S(x₀, h)` for the `count` heights.
 *
 * # Safety
 * `u` holds `len` doubles, `heights` holds `count`; outputs null or writable.
 */
enum LmaStatus lma_holder_scan(const struct LmaPotential *potential,
                               const double *u,
                               size_t len,
                               double x0,
                               double y0,
                               const double *heights,
                               size_t count,
                               double q,
                               double *gamma0,
                               double *prefactor);

/**
 * `sup/inf` over `S(x₀, h)` of the homogeneous solution on `S(x₀, 2h)`
 * with nonnegative Dirichlet data.
 *
 * # Safety
 * `data` holds `len` doubles; `ratio` null or writable.
 */
enum LmaStatus lma_harnack_ratio(const struct LmaPotential *potential,
                                 double x0,
                                 double y0,
                                 double h,
                                 const double *data,
                                 size_t len,
                                 double *ratio);

/**
 * Runs the full pipeline from a config file. `out_dir`, if not null,
 * overrides the config's output directory. `passed` is set to 1 when
 * every stage assertion holds, else 0.
 *
 * # Safety
 * Strings null or NUL terminated; `passed` null or writable.
 */
enum LmaStatus lma_run_pipeline(const char *config_path, const char *out_dir, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMA_H */
