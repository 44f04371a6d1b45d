#ifndef COVERS_H
#define COVERS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CoversStatus {
  COVERS_STATUS_OK = 0,
  COVERS_STATUS_NULL_POINTER = 1,
  COVERS_STATUS_INVALID_ARGUMENT = 2,
  COVERS_STATUS_IO = 3,
  COVERS_STATUS_NUMERIC = 4,
  COVERS_STATUS_EPISODE_FINISHED = 5,
  COVERS_STATUS_PANIC = 6,
} CoversStatus;

/**
 * An environment instance together with its latest observation.
 */
typedef struct CoversEnv CoversEnv;

/**
 * A policy bundle loaded from a checkpoint directory.
 */
typedef struct CoversPolicy CoversPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t covers_last_error(char *buf, size_t len);

/**
 * Exact 1-Wasserstein distance between `n` and `m` uniformly weighted
 * points of dimension `dim`, stored row-major.
 *
 * # Safety
 * `x` must hold `n * dim` values, `y` `m * dim`, and `out` be writable.
 */
enum CoversStatus covers_w1_distance(const double *x,
                                     size_t n,
                                     const double *y,
                                     size_t m,
                                     size_t dim,
                                     double *out);

/**
 * Creates an environment for one orbit member of a task group with the
 * default configuration. `group` is `reach`, `press`, `close` or `slide`;
 * `element` names a D2 element (`e`, `m_x`, `m_y`, `r180`).
 *
 * # Safety
 * `group` and `element` must be NUL-terminated strings; `out` writable.
 */
enum CoversStatus covers_env_new(const char *group,
                                 const char *element,
                                 uint64_t seed,
                                 struct CoversEnv **out);

/**
 * Starts a new episode of the same task.
 *
 * # Safety
 * `env` must come from [`covers_env_new`].
 */
enum CoversStatus covers_env_reset(struct CoversEnv *env, uint64_t seed);

/**
 * Applies a 4-channel action. `reward`, `done` and `success` may be null.
 *
 * # Safety
 * `env` must come from [`covers_env_new`]; `action` must hold 4 values.
 */
enum CoversStatus covers_env_step(struct CoversEnv *env,
                                  const double *action,
                                  double *reward,
                                  bool *done,
                                  bool *success);

/**
 * Writes the normalized `(x, y, z, gripper)` proprioceptive state.
 *
 * # Safety
 * `env` must come from [`covers_env_new`]; `out` must hold 4 values.
 */
enum CoversStatus covers_env_state(const struct CoversEnv *env, double *out);

/**
 * Number of values in the current image (`planes * grid * grid`).
 *
 * # Safety
 * `env` must be null or come from [`covers_env_new`].
 */
size_t covers_env_image_len(const struct CoversEnv *env);

/**
 * Copies the current image planes into `out`.
 *
 * # Safety
 * `env` must come from [`covers_env_new`]; `out` must hold `len` values.
 */
enum CoversStatus covers_env_image(const struct CoversEnv *env, double *out, size_t len);

/**
 * # Safety
 * `env` must be null or come from [`covers_env_new`], and not be used after.
 */
void covers_env_free(struct CoversEnv *env);

/**
 * Loads a policy checkpoint directory written by `covers run`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` writable.
 */
enum CoversStatus covers_policy_load(const char *dir, struct CoversPolicy **out);

/**
 * Deterministic action `tanh(mean)` for the environment's current
 * observation.
 *
 * # Safety
 * Handles must be live; `out` must hold 4 values.
 */
enum CoversStatus covers_policy_act(const struct CoversPolicy *policy,
                                    const struct CoversEnv *env,
                                    double *out);

/**
 * State value of the environment's current observation.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum CoversStatus covers_policy_value(const struct CoversPolicy *policy,
                                      const struct CoversEnv *env,
                                      double *out);

/**
 * # Safety
 * `policy` must be null or come from [`covers_policy_load`], and not be
 * used after.
 */
void covers_policy_free(struct CoversPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVERS_H */
