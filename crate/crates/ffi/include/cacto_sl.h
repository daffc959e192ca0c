#ifndef CACTO_SL_H
#define CACTO_SL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  CSL_STATUS_OK = 0,
  CSL_STATUS_NULL_POINTER = 1,
  CSL_STATUS_INVALID_ARGUMENT = 2,
  CSL_STATUS_DIMENSION = 3,
  CSL_STATUS_NON_FINITE = 4,
  CSL_STATUS_NUMERICAL = 5,
  CSL_STATUS_CONFIG = 6,
  CSL_STATUS_CHECKPOINT = 7,
  CSL_STATUS_IO = 8,
  /**
   * An output array is shorter than the result.
   */
  CSL_STATUS_BUFFER_TOO_SMALL = 9,
  CSL_STATUS_PANIC = 10,
} CslStatus;

/**
 * Outcome of a DDP solve.
 */
typedef enum {
  CSL_SOLVE_STATUS_CONVERGED = 0,
  CSL_SOLVE_STATUS_MAX_ITERATIONS = 1,
  CSL_SOLVE_STATUS_NO_DESCENT = 2,
  CSL_SOLVE_STATUS_BACKWARD_PASS_FAILED = 3,
} CslSolveStatus;

/**
 * A dense network loaded from a checkpoint.
 */
typedef struct CslNetwork CslNetwork;

/**
 * A benchmark task: dynamics, cost and horizon.
 */
typedef struct CslTask CslTask;

/**
 * Result arrays of [`csl_ddp_solve`], all caller-allocated. Lengths are in
 * values: `states` and `value_grads` need `(horizon + 1) * n`, `controls`
 * needs `horizon * m`. Any pointer may be null to skip that output.
 */
typedef struct {
  double *states;
  size_t states_len;
  double *controls;
  size_t controls_len;
  double *value_grads;
  size_t value_grads_len;
  double total_cost;
  size_t iterations;
  CslSolveStatus status;
} CslTrajectoryOut;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *csl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *csl_version(void);

/**
 * Symmetric log squashing: `log(1 + x)` for `x >= 0`, `-log(1 - x)` otherwise.
 */
double csl_logsym(double x);

/**
 * Creates a task with default parameters. `kind` is one of
 * `single_integrator`, `double_integrator`, `dubins`.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` a valid pointer.
 */
CslStatus csl_task_new(const char *kind, CslTask **out);

/**
 * Creates the task described by a run configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
CslStatus csl_task_from_config(const char *path, CslTask **out);

/**
 * Releases a task; null is ignored.
 *
 * # Safety
 * `task` must come from this library and not be used afterwards.
 */
void csl_task_free(CslTask *task);

/**
 * State dimension `n`, or 0 for a null task.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t csl_task_state_dim(const CslTask *task);

/**
 * Control dimension `m`, or 0 for a null task.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t csl_task_control_dim(const CslTask *task);

/**
 * Horizon `T` in steps, or 0 for a null task.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t csl_task_horizon(const CslTask *task);

/**
 * Sets the horizon used by [`csl_ddp_solve`] defaults and input scaling.
 *
 * # Safety
 * `task` must be a live handle.
 */
CslStatus csl_task_set_horizon(CslTask *task, size_t horizon);

/**
 * One dynamics step; writes `n` values to `next`.
 *
 * # Safety
 * Arrays must hold the stated number of values.
 */
CslStatus csl_task_step(const CslTask *task,
                        const double *x,
                        size_t x_len,
                        const double *u,
                        size_t u_len,
                        double *next,
                        size_t next_len);

/**
 * Running cost `l(x, u)`.
 *
 * # Safety
 * Arrays must hold the stated number of values; `cost` must be valid.
 */
CslStatus csl_task_running_cost(const CslTask *task,
                                const double *x,
                                size_t x_len,
                                const double *u,
                                size_t u_len,
                                double *cost);

/**
 * Terminal cost `l_T(x)`.
 *
 * # Safety
 * `x` must hold `x_len` values; `cost` must be valid.
 */
CslStatus csl_task_terminal_cost(const CslTask *task, const double *x, size_t x_len, double *cost);

/**
 * Solves from `x0` over `horizon` steps (0 means the task horizon) with
 * default solver settings. `warm_controls` holds `horizon * m` values or is
 * null for the rest warm start. A `BackwardPassFailed` solve still returns
 * `CSL_STATUS_OK`; check `out->status`.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be valid.
 */
CslStatus csl_ddp_solve(const CslTask *task,
                        const double *x0,
                        size_t x0_len,
                        size_t horizon,
                        const double *warm_controls,
                        CslTrajectoryOut *out);

/**
 * Loads a network checkpoint, verifying its checksum.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
CslStatus csl_network_load(const char *path, CslNetwork **out);

/**
 * Releases a network; null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void csl_network_free(CslNetwork *net);

/**
 * Input width, or 0 for a null network.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t csl_network_input_dim(const CslNetwork *net);

/**
 * Output width, or 0 for a null network.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t csl_network_output_dim(const CslNetwork *net);

/**
 * Evaluates the network on one (already normalized) input.
 *
 * # Safety
 * Arrays must hold the stated number of values.
 */
CslStatus csl_network_forward(const CslNetwork *net,
                              const double *input_ptr,
                              size_t input_len,
                              double *out,
                              size_t out_len);

/**
 * Jacobian of the output with respect to the input, row-major
 * `output_dim x input_dim`.
 *
 * # Safety
 * Arrays must hold the stated number of values.
 */
CslStatus csl_network_input_gradient(const CslNetwork *net,
                                     const double *input_ptr,
                                     size_t input_len,
                                     double *out,
                                     size_t out_len);

/**
 * Normalizes the augmented state `(x, t)` into network inputs (`n + 1`
 * values).
 *
 * # Safety
 * Arrays must hold the stated number of values.
 */
CslStatus csl_task_normalize_input(const CslTask *task,
                                   const double *x,
                                   size_t x_len,
                                   double t,
                                   double *out,
                                   size_t out_len);

/**
 * Control chosen by an actor network at state `x` and step `t`, scaled to
 * the task's control bounds (`m` values).
 *
 * # Safety
 * Arrays must hold the stated number of values.
 */
CslStatus csl_actor_control(const CslNetwork *actor,
                            const CslTask *task,
                            const double *x,
                            size_t x_len,
                            size_t t,
                            double *u,
                            size_t u_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CACTO_SL_H */
