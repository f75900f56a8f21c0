#ifndef CORDEX_H
#define CORDEX_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible entry point.
 */
typedef enum CordexStatus {
  CORDEX_STATUS_OK = 0,
  CORDEX_STATUS_NULL_POINTER = 1,
  CORDEX_STATUS_INVALID_ARGUMENT = 2,
  CORDEX_STATUS_UTF8_ERROR = 3,
  CORDEX_STATUS_JSON_ERROR = 4,
  CORDEX_STATUS_IO_ERROR = 5,
  CORDEX_STATUS_RUNTIME_ERROR = 6,
} CordexStatus;

/**
 * Opaque run configuration handle.
 */
typedef struct CordexConfig CordexConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cordex_version(void);

/**
 * Message of the most recent failure on this thread, or NULL if none.
 * Valid until the next failing call on the same thread.
 */
const char *cordex_last_error_message(void);

/**
 * Builds a configuration from an environment name (`push_box`,
 * `secret_room`, `coop_nav`) and profile (`desk` or `paper`).
 */
enum CordexStatus cordex_config_default(const char *env_name,
                                        const char *profile,
                                        struct CordexConfig **out);

/**
 * Parses a configuration from its JSON form.
 */
enum CordexStatus cordex_config_from_json(const char *json, struct CordexConfig **out);

/**
 * Serializes a configuration to JSON; free the result with
 * `cordex_string_free`.
 */
enum CordexStatus cordex_config_to_json(const struct CordexConfig *config, char **out);

enum CordexStatus cordex_config_set_seed(struct CordexConfig *config, uint64_t seed);

/**
 * Frees a configuration handle; NULL is a no-op.
 */
void cordex_config_free(struct CordexConfig *config);

/**
 * Frees a string returned by this library; NULL is a no-op.
 */
void cordex_string_free(char *s);

/**
 * Trains per the config, writing metrics.csv and checkpoint.json under
 * `out_dir`. On success writes the final evaluation's team return and
 * success rate to the out-parameters.
 */
enum CordexStatus cordex_train(const struct CordexConfig *config,
                               const char *out_dir,
                               double *out_team_return,
                               double *out_success_rate);

/**
 * Evaluates a checkpoint with deterministic rollouts.
 */
enum CordexStatus cordex_evaluate(const char *checkpoint_path,
                                  uint64_t episodes,
                                  uint64_t seed,
                                  double *out_team_return,
                                  double *out_success_rate);

/**
 * Analytic expected steps to cover all `L^n` joint action configurations.
 */
enum CordexStatus cordex_expected_coverage_time(uint32_t n_agents,
                                                uint32_t actions_per_agent,
                                                double *out);

/**
 * Monte-Carlo coverage time; writes the empirical mean and standard
 * deviation over `trials` seeded trials.
 */
enum CordexStatus cordex_simulate_coverage_time(uint32_t n_agents,
                                                uint32_t actions_per_agent,
                                                uint64_t trials,
                                                uint64_t seed,
                                                double *out_mean,
                                                double *out_std);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORDEX_H */
