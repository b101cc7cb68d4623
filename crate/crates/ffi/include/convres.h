#ifndef CONVRES_H
#define CONVRES_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConvresNorm {
  /**
   * Keep the norm stored in the problem.
   */
  CONVRES_NORM_PROBLEM = 0,
  CONVRES_NORM_TWO = 1,
  /**
   * Infinity norm with tabulated support coefficients.
   */
  CONVRES_NORM_INF_TABLE = 2,
  /**
   * Infinity norm with the exact one-norm support.
   */
  CONVRES_NORM_INF_EXACT = 3,
} ConvresNorm;

typedef enum ConvresStatus {
  CONVRES_STATUS_OK = 0,
  CONVRES_STATUS_NULL_POINTER = 1,
  CONVRES_STATUS_INVALID_UTF8 = 2,
  CONVRES_STATUS_BUFFER_TOO_SMALL = 3,
  CONVRES_STATUS_DIMENSION_MISMATCH = 10,
  CONVRES_STATUS_INVALID_BASIS = 11,
  CONVRES_STATUS_SINGULAR_JACOBIAN = 12,
  CONVRES_STATUS_EMPTY_BOX = 13,
  CONVRES_STATUS_UNSUPPORTED_UNCERTAINTY_FORM = 14,
  CONVRES_STATUS_NEGATIVE_RADIUS = 15,
  CONVRES_STATUS_INVALID_UNCERTAINTY = 16,
  CONVRES_STATUS_INFINITE_MARGIN = 17,
  CONVRES_STATUS_RETRIEVAL_FAILED = 18,
  CONVRES_STATUS_SUBPROBLEM_FAILED = 19,
  CONVRES_STATUS_INVALID_PROGRAM = 20,
  CONVRES_STATUS_INVALID_OPTION = 21,
  CONVRES_STATUS_PARSE_ERROR = 22,
  CONVRES_STATUS_VALIDATION_ERROR = 23,
  CONVRES_STATUS_UNKNOWN_CATALOG = 24,
  CONVRES_STATUS_IO_ERROR = 25,
  CONVRES_STATUS_PANIC = 99,
} ConvresStatus;

typedef enum ConvresTermination {
  CONVRES_TERMINATION_CONVERGED = 0,
  CONVRES_TERMINATION_MAX_OUTER = 1,
  CONVRES_TERMINATION_SUBPROBLEM_FAILED = 2,
  CONVRES_TERMINATION_RETRIEVAL_FAILED = 3,
  CONVRES_TERMINATION_SINGULAR_AT_LIMIT = 4,
} ConvresTermination;

/**
 * Opaque problem handle.
 */
typedef struct ConvresProblem ConvresProblem;

/**
 * Opaque solve report handle.
 */
typedef struct ConvresReport ConvresReport;

/**
 * Solver settings. Start from [`convres_options_default`].
 */
typedef struct ConvresOptions {
  double eps1;
  double eps2;
  double eps3;
  uint32_t max_outer;
  /**
   * Newton retrieval instead of the Picard chord.
   */
  bool newton;
  /**
   * Additive uncertainty radius; negative keeps the problem's uncertainty.
   */
  double gamma;
  enum ConvresNorm norm;
} ConvresOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *convres_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *convres_last_error(void);

struct ConvresOptions convres_options_default(void);

/**
 * Parse a problem from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ConvresStatus convres_problem_from_toml(const char *text, struct ConvresProblem **out);

/**
 * Load a built-in problem such as `park-poly` or `poly-chain(10,2)`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ConvresStatus convres_problem_from_catalog(const char *name, struct ConvresProblem **out);

/**
 * # Safety
 * `problem` must come from a `convres_problem_from_*` call and not be freed twice.
 */
void convres_problem_free(struct ConvresProblem *problem);

/**
 * State, control, uncertainty and inequality counts.
 *
 * # Safety
 * `problem` must be a live handle; each output pointer may be NULL.
 */
enum ConvresStatus convres_problem_dims(const struct ConvresProblem *problem,
                                        size_t *n,
                                        size_t *m,
                                        size_t *r,
                                        size_t *s);

/**
 * Serialize a problem to TOML. Release the string with [`convres_string_free`].
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum ConvresStatus convres_problem_to_toml(const struct ConvresProblem *problem, char **out);

/**
 * Run the sequential convex restriction. `options` may be NULL for defaults.
 *
 * # Safety
 * `problem` must be a live handle, `options` NULL or valid, `out` a valid pointer.
 */
enum ConvresStatus convres_solve(const struct ConvresProblem *problem,
                                 const struct ConvresOptions *options,
                                 struct ConvresReport **out);

/**
 * # Safety
 * `report` must come from [`convres_solve`] and not be freed twice.
 */
void convres_report_free(struct ConvresReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
enum ConvresTermination convres_report_termination(const struct ConvresReport *report);

/**
 * Outer iterations taken, not counting the start point.
 *
 * # Safety
 * `report` must be a live handle.
 */
size_t convres_report_iterations(const struct ConvresReport *report);

/**
 * # Safety
 * `report` must be a live handle.
 */
double convres_report_objective(const struct ConvresReport *report);

/**
 * Copy the final control vector into `buf`. `written` receives the length
 * even when the buffer is too small.
 *
 * # Safety
 * `report` must be a live handle and `buf` hold `len` doubles.
 */
enum ConvresStatus convres_report_final_u(const struct ConvresReport *report,
                                          double *buf,
                                          size_t len,
                                          size_t *written);

/**
 * Copy the final state vector into `buf`.
 *
 * # Safety
 * As for [`convres_report_final_u`].
 */
enum ConvresStatus convres_report_final_x(const struct ConvresReport *report,
                                          double *buf,
                                          size_t len,
                                          size_t *written);

/**
 * Full report as JSON. Release the string with [`convres_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum ConvresStatus convres_report_json(const struct ConvresReport *report, char **out);

/**
 * Largest certified radius at the problem's nominal point. Writes infinity
 * and returns `InfiniteMargin` when the uncertainty never enters.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum ConvresStatus convres_margin(const struct ConvresProblem *problem,
                                  enum ConvresNorm norm,
                                  double *out);

/**
 * Solve `f(x, u, w0) = 0` for `x` from the nominal state.
 *
 * # Safety
 * `problem` must be a live handle, `u` hold `m` doubles and `x` hold `n` doubles.
 */
enum ConvresStatus convres_retrieve(const struct ConvresProblem *problem,
                                    const double *u,
                                    size_t m,
                                    double *x,
                                    size_t n);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void convres_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVRES_H */
