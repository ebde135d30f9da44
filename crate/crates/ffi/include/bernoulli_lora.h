#ifndef BERNOULLI_LORA_H
#define BERNOULLI_LORA_H

#pragma once

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BloraStatus {
  BLORA_STATUS_OK = 0,
  BLORA_STATUS_NULL_POINTER = 1,
  BLORA_STATUS_INVALID_CONFIG = 2,
  BLORA_STATUS_MISSING_CONSTANT = 3,
  BLORA_STATUS_SHAPE = 4,
  BLORA_STATUS_NUMERICAL = 5,
  BLORA_STATUS_IO = 6,
  BLORA_STATUS_PARSE = 7,
  BLORA_STATUS_UTF8 = 8,
  BLORA_STATUS_OUT_OF_RANGE = 9,
  BLORA_STATUS_PANIC = 10,
} BloraStatus;

typedef enum BloraOutcome {
  BLORA_OUTCOME_COMPLETED = 0,
  BLORA_OUTCOME_CONVERGED = 1,
  BLORA_OUTCOME_DIVERGED = 2,
} BloraOutcome;

// Opaque objective.
typedef struct BloraProblem BloraProblem;

// Opaque optimizer trace.
typedef struct BloraTrace BloraTrace;

// One trace row. `side` is 0 for left, 1 for right.
typedef struct BloraTraceRow {
  uint64_t iter;
  double f;
  double grad_sq_norm;
  double estimator_gap;
  double lyapunov;
  double stepsize;
  double comm_scalars;
  uint8_t side;
} BloraTraceRow;

// Constants for the stepsize rules. NaN marks a missing value.
typedef struct BloraTheoryParams {
  double l;
  double mu;
  double l0;
  double lambda_min;
  double lambda_max;
  double alpha;
  double a1;
  double b1;
  double c1;
  double sigma_sq;
  double omega;
  double beta;
  double clients;
  double q;
  double b;
  double horizon;
  double delta0;
  double gap0;
  double delta_star;
  double r0;
} BloraTheoryParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the thread's last error message into `buf` as a NUL-terminated
// string, truncating to `cap - 1` bytes. Returns the full message length
// in bytes, so a caller can size the buffer with a first call where
// `cap == 0`.
//
// # Safety
// `buf` must be valid for `cap` bytes or null when `cap == 0`.
size_t blora_last_error_message(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *blora_version(void);

// Planted quadratic `1/2 ||C vec(W) - d||^2` on `rows x cols` parameters
// with curvature spread over `[mu, l]`. `samples == 0` picks `rows * cols`.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum BloraStatus blora_problem_quadratic_random(size_t rows,
                                                size_t cols,
                                                size_t samples,
                                                double mu,
                                                double l,
                                                uint64_t seed,
                                                struct BloraProblem **out);

// Quadratic `1/2 ||C vec(W) - d||^2` with `C` given row-major as
// `samples x (rows * cols)` and `d` of length `samples`.
//
// # Safety
// `c` must hold `samples * rows * cols` values, `d` must hold `samples`
// values and `out` must be writable.
enum BloraStatus blora_problem_quadratic(const double *c,
                                         const double *d,
                                         size_t samples,
                                         size_t rows,
                                         size_t cols,
                                         struct BloraProblem **out);

// Regularized least squares on `features` (row-major, `samples x
// rows * cols`) and `target`. A NaN `reg_weight` selects the spectral
// norm of the design.
//
// # Safety
// `features` must hold `samples * rows * cols` values, `target` must hold
// `samples` values and `out` must be writable.
enum BloraStatus blora_problem_linreg(const double *features,
                                      const double *target,
                                      size_t samples,
                                      size_t rows,
                                      size_t cols,
                                      double reg_weight,
                                      struct BloraProblem **out);

// Absolute-loss regression `(1/samples) sum |D vec(W) - b|` with `D` row-major,
// `samples x (rows * cols)`.
//
// # Safety
// `d` must hold `samples * rows * cols` values, `b` must hold `samples`
// values and `out` must be writable.
enum BloraStatus blora_problem_l1(const double *d,
                                  const double *b,
                                  size_t samples,
                                  size_t rows,
                                  size_t cols,
                                  struct BloraProblem **out);

// Absolute-loss regression with a planted minimizer, so `f* = 0`.
//
// # Safety
// `out` must be writable.
enum BloraStatus blora_problem_l1_random(size_t rows,
                                         size_t cols,
                                         size_t samples,
                                         uint64_t seed,
                                         struct BloraProblem **out);

// # Safety
// `p` must come from a `blora_problem_*` constructor and not be used
// afterwards. Null is ignored.
void blora_problem_free(struct BloraProblem *p);

// # Safety
// `p` must be a live problem; `rows` and `cols` must be writable.
enum BloraStatus blora_problem_shape(const struct BloraProblem *p, size_t *rows, size_t *cols);

// # Safety
// `p` must be a live problem, `w` must hold `len` values and `out` must
// be writable.
enum BloraStatus blora_problem_eval(const struct BloraProblem *p,
                                    const double *w,
                                    size_t len,
                                    double *out);

// Gradient (a subgradient for the absolute loss), written row-major.
//
// # Safety
// `p` must be a live problem; `w` and `grad` must each hold `len` values.
enum BloraStatus blora_problem_grad(const struct BloraProblem *p,
                                    const double *w,
                                    size_t len,
                                    double *grad);

// Smoothness constant `L`; `MissingConstant` for the absolute loss.
//
// # Safety
// `p` must be a live problem and `out` writable.
enum BloraStatus blora_problem_smoothness(const struct BloraProblem *p, double *out);

// Optimal value `f*` when known or estimated.
//
// # Safety
// `p` must be a live problem and `out` writable.
enum BloraStatus blora_problem_optimum(const struct BloraProblem *p, double *out);

// Parse a TOML experiment config, then run method `method_index` with
// `seed`. Relative dataset paths resolve against the working directory.
//
// # Safety
// `config` must be a NUL-terminated string and `out` writable.
enum BloraStatus blora_run_config(const char *config,
                                  uint64_t seed,
                                  size_t method_index,
                                  struct BloraTrace **out);

// Number of rows, or 0 for null.
//
// # Safety
// `t` must be a live trace or null.
size_t blora_trace_len(const struct BloraTrace *t);

// # Safety
// `t` must be a live trace and `row` writable.
enum BloraStatus blora_trace_row(const struct BloraTrace *t,
                                 size_t index,
                                 struct BloraTraceRow *row);

// # Safety
// `t` must be a live trace and `out` writable.
enum BloraStatus blora_trace_outcome(const struct BloraTrace *t, enum BloraOutcome *out);

// # Safety
// `t` must come from [`blora_run_config`] and not be used afterwards.
// Null is ignored.
void blora_trace_free(struct BloraTrace *t);

// All fields NaN.
struct BloraTheoryParams blora_theory_params_empty(void);

// Theoretical stepsize for `theorem` ("gd", "page-pl", "ef21", ...).
//
// # Safety
// `theorem` must be NUL-terminated, `params` readable and `out` writable.
enum BloraStatus blora_stepsize(const char *theorem,
                                const struct BloraTheoryParams *params,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BERNOULLI_LORA_H */
