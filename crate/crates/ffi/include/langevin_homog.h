#ifndef LANGEVIN_HOMOG_H
#define LANGEVIN_HOMOG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LhStatus {
  LH_STATUS_OK = 0,
  LH_STATUS_NULL_POINTER = 1,
  LH_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON, unknown keys, bad expressions.
   */
  LH_STATUS_INVALID_INPUT = 3,
  /**
   * Array length does not match the model dimension.
   */
  LH_STATUS_DIMENSION = 4,
  /**
   * Evaluation failed: non-finite values, lost definiteness, quadrature.
   */
  LH_STATUS_NUMERICAL = 5,
  LH_STATUS_PANIC = 6,
} LhStatus;

/**
 * Opaque model with its limiting SDE.
 */
typedef struct LhModel LhModel;

/**
 * Opaque finished run.
 */
typedef struct LhRun LhRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *lh_last_error(void);

/**
 * Library version as a static string.
 */
const char *lh_version(void);

/**
 * Builds a model from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LhStatus lh_model_from_json(const char *json, struct LhModel **out);

/**
 * # Safety
 * `model` must come from [`lh_model_from_json`] and not be used afterwards.
 */
void lh_model_free(struct LhModel *model);

/**
 * Number of slow coordinates n; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lh_model_dim(const struct LhModel *model);

/**
 * Number of Wiener components k; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lh_model_noise_dim(const struct LhModel *model);

/**
 * Drift (length n) and diffusion (n×k, row-major) of the limiting SDE at
 * (t, q). `diffusion` may be NULL.
 *
 * # Safety
 * `q` and `drift` must hold `n` doubles, `diffusion` n·k doubles if not NULL.
 */
enum LhStatus lh_limit_eval(struct LhModel *model,
                            double t,
                            const double *q,
                            size_t n,
                            double *drift,
                            double *diffusion);

/**
 * Noise-induced drift S at (t, q) into `out` (length n).
 *
 * # Safety
 * `q` and `out` must hold `n` doubles.
 */
enum LhStatus lh_noise_induced_drift(const struct LhModel *model,
                                     double t,
                                     const double *q,
                                     size_t n,
                                     double *out);

/**
 * Solves γM + Mγᵀ = Σ for n×n row-major inputs. `residual` may be NULL.
 *
 * # Safety
 * `gamma`, `sigma` and `m` must hold n² doubles.
 */
enum LhStatus lh_lyapunov_solve(const double *gamma,
                                const double *sigma,
                                size_t n,
                                double *m,
                                double *residual);

/**
 * Parses and runs a full experiment config, writing its files. `out_dir`
 * may be NULL to use the config's own. A run that completes with failed
 * bands or a module error still returns `Ok`; inspect the exit code.
 *
 * # Safety
 * `config_json` (and `out_dir` if not NULL) must be NUL-terminated; `out`
 * must be a valid pointer.
 */
enum LhStatus lh_run_config(const char *config_json, const char *out_dir, struct LhRun **out);

/**
 * 0 pass, 2 band failure, 1 error; -1 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
int32_t lh_run_exit_code(const struct LhRun *run);

/**
 * The run record as JSON, owned by the handle.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
const char *lh_run_record_json(const struct LhRun *run);

/**
 * # Safety
 * `run` must come from [`lh_run_config`] and not be used afterwards.
 */
void lh_run_free(struct LhRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANGEVIN_HOMOG_H */
