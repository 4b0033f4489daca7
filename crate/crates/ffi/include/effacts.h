#ifndef EFFACTS_H
#define EFFACTS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum EffactsStatus {
  EFFACTS_STATUS_OK = 0,
  EFFACTS_STATUS_INVALID_CONFIG = 1,
  EFFACTS_STATUS_DIMENSION_MISMATCH = 2,
  EFFACTS_STATUS_ROLLOUT_DIVERGED = 3,
  EFFACTS_STATUS_NON_FINITE_RETURN = 4,
  EFFACTS_STATUS_EMPTY = 5,
  EFFACTS_STATUS_IO = 6,
  EFFACTS_STATUS_FORMAT = 7,
  EFFACTS_STATUS_NULL_POINTER = 8,
  EFFACTS_STATUS_INVALID_ARGUMENT = 9,
  EFFACTS_STATUS_PANIC = 10,
} EffactsStatus;

// Thompson-sampling bandit over a uniform arm grid, with its own random stream.
typedef struct EffactsBandit EffactsBandit;

typedef struct EffactsConfig EffactsConfig;

typedef struct EffactsDistribution EffactsDistribution;

typedef struct EffactsReport EffactsReport;

// Trajectory counts summed over generator iterations.
typedef struct EffactsLedgerTotals {
  size_t warm_start;
  size_t bandit;
  size_t selected;
  size_t discarded;
  size_t collected;
  size_t timesteps;
} EffactsLedgerTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. Valid until
// the next failing call on the same thread.
const char *effacts_last_error(void);

// Parse a config from NUL-terminated text.
//
// # Safety
// `text` must be a valid C string; `out` must be writable.
enum EffactsStatus effacts_config_from_str(const char *text, struct EffactsConfig **out);

// Read and parse a config file.
//
// # Safety
// `path` must be a valid C string; `out` must be writable.
enum EffactsStatus effacts_config_from_file(const char *path, struct EffactsConfig **out);

// # Safety
// `cfg` must come from this library or be null.
void effacts_config_free(struct EffactsConfig *cfg);

// # Safety
// `cfg` must be a live config handle.
enum EffactsStatus effacts_config_set_seed(struct EffactsConfig *cfg, uint64_t seed);

// Worker threads; 0 uses the number of processors. Results do not depend on it.
//
// # Safety
// `cfg` must be a live config handle.
enum EffactsStatus effacts_config_set_workers(struct EffactsConfig *cfg, size_t workers);

// Run training. If a rollout fails mid-run, `*out` still receives the
// partial report and the call returns `EFFACTS_STATUS_ROLLOUT_DIVERGED`.
//
// # Safety
// `cfg` must be a live config handle; `out` must be writable.
enum EffactsStatus effacts_train(const struct EffactsConfig *cfg, struct EffactsReport **out);

// # Safety
// `report` must come from this library or be null.
void effacts_report_free(struct EffactsReport *report);

// Generator iterations that finished; 0 for a null handle.
//
// # Safety
// `report` must be a live report handle or null.
size_t effacts_report_completed_iterations(const struct EffactsReport *report);

// # Safety
// `report` must be a live report handle; `out` must be writable.
enum EffactsStatus effacts_report_ledger_totals(const struct EffactsReport *report,
                                                struct EffactsLedgerTotals *out);

// Number of final-policy parameters.
//
// # Safety
// `report` must be a live report handle or null.
size_t effacts_report_num_params(const struct EffactsReport *report);

// Copy the final policy parameters into `buf`, which must hold exactly
// `effacts_report_num_params` values.
//
// # Safety
// `report` must be a live report handle; `buf` must have `len` writable values.
enum EffactsStatus effacts_report_policy(const struct EffactsReport *report,
                                         double *buf,
                                         size_t len);

// Write the same files as the `train` subcommand into `dir`.
//
// # Safety
// `report` must be a live report handle; `dir` must be a valid C string.
enum EffactsStatus effacts_report_write(const struct EffactsReport *report, const char *dir);

// Product of `k` independent truncated normals, one per `(mu, sigma, low, high)`.
//
// # Safety
// Each array must hold `k` values; `out` must be writable.
enum EffactsStatus effacts_distribution_new(const double *mu,
                                            const double *sigma,
                                            const double *low,
                                            const double *high,
                                            size_t k,
                                            struct EffactsDistribution **out);

// # Safety
// `dist` must come from this library or be null.
void effacts_distribution_free(struct EffactsDistribution *dist);

// Draw `n` parameters into `out` (row-major, `n * k` values). The same
// seed always gives the same draws.
//
// # Safety
// `dist` must be a live handle; `out` must hold `n * k` writable values.
enum EffactsStatus effacts_distribution_sample(const struct EffactsDistribution *dist,
                                               uint64_t seed,
                                               size_t n,
                                               double *out);

// Joint density at the `k`-vector `p`.
//
// # Safety
// `dist` must be a live handle; `p` must hold `k` values; `out` must be writable.
enum EffactsStatus effacts_distribution_density(const struct EffactsDistribution *dist,
                                                const double *p,
                                                size_t k,
                                                double *out);

// Bandit over a uniform grid on the box `[low, high]` with `resolution[i]`
// points per dimension and standardized polynomial features of `degree`.
//
// # Safety
// Each array must hold `k` values; `out` must be writable.
enum EffactsStatus effacts_bandit_new(const double *low,
                                      const double *high,
                                      const size_t *resolution,
                                      size_t k,
                                      size_t degree,
                                      double reward_scale,
                                      double r,
                                      double delta,
                                      double lambda,
                                      uint64_t seed,
                                      struct EffactsBandit **out);

// # Safety
// `bandit` must come from this library or be null.
void effacts_bandit_free(struct EffactsBandit *bandit);

// # Safety
// `bandit` must be a live handle or null.
size_t effacts_bandit_num_arms(const struct EffactsBandit *bandit);

// Parameter vector of arm `index` into `out` (`k` values).
//
// # Safety
// `bandit` must be a live handle; `out` must hold `k` writable values.
enum EffactsStatus effacts_bandit_arm(const struct EffactsBandit *bandit,
                                      size_t index,
                                      double *out,
                                      size_t k);

// Thompson-sampling choice; advances the bandit's stream.
//
// # Safety
// `bandit` must be a live handle; `out` must be writable.
enum EffactsStatus effacts_bandit_select(struct EffactsBandit *bandit, size_t *out);

// Record the raw return observed at arm `index`.
//
// # Safety
// `bandit` must be a live handle.
enum EffactsStatus effacts_bandit_update(struct EffactsBandit *bandit,
                                         size_t index,
                                         double raw_return);

// Predicted raw return at the `k`-vector `p`.
//
// # Safety
// `bandit` must be a live handle; `p` must hold `k` values; `out` must be writable.
enum EffactsStatus effacts_bandit_predict(const struct EffactsBandit *bandit,
                                          const double *p,
                                          size_t k,
                                          double *out);

// Indices of the `ceil(epsilon * n)` lowest `returns` (ties to the lower
// index), ascending, into `out`; the count goes to `out_len`. `out` must
// hold `n` values.
//
// # Safety
// `returns` and `out` must each hold `n` values; `out_len` must be writable.
enum EffactsStatus effacts_select_bottom(const double *returns,
                                         size_t n,
                                         double epsilon,
                                         size_t *out,
                                         size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFFACTS_H */
