#ifndef DIFFCTL_H
#define DIFFCTL_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DiffctlDistributionKind {
  DIFFCTL_DISTRIBUTION_KIND_EXPONENTIAL = 0,
  DIFFCTL_DISTRIBUTION_KIND_ERLANG = 1,
} DiffctlDistributionKind;

typedef enum DiffctlStatus {
  DIFFCTL_STATUS_OK = 0,
  DIFFCTL_STATUS_NULL_POINTER = 1,
  /**
   * Bad parameter or configuration.
   */
  DIFFCTL_STATUS_CONFIG = 2,
  /**
   * Input data failed validation.
   */
  DIFFCTL_STATUS_VALIDATION = 3,
  /**
   * Integration, root finding or training failed.
   */
  DIFFCTL_STATUS_NUMERICAL = 4,
  DIFFCTL_STATUS_IO = 5,
  DIFFCTL_STATUS_PANIC = 6,
} DiffctlStatus;

typedef struct DiffctlController DiffctlController;

typedef struct DiffctlModel DiffctlModel;

typedef struct DiffctlTrace DiffctlTrace;

/**
 * Law of `T_previous`: `shape` blocks of mean `beta` seconds each
 * (`shape` is ignored for the exponential).
 */
typedef struct DiffctlDistribution {
  enum DiffctlDistributionKind kind;
  uint32_t shape;
  double beta;
} DiffctlDistribution;

typedef struct DiffctlRecord {
  uint64_t height;
  double timestamp;
  double block_time;
  double difficulty;
  double scheduled_rate;
  /**
   * NaN when the indicator was not evaluated at this height.
   */
  double indicator;
} DiffctlRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len − 1` bytes). Returns the full message
 * length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t diffctl_last_error_message(char *buf, size_t len);

/**
 * Ethereum update value for one block time in seconds (`t > 0`).
 *
 * # Safety
 * `out_value` must be null or valid for writes.
 */
enum DiffctlStatus diffctl_ethereum_update(double block_time, double *out_value);

/**
 * `A(atan(B(t − C)) + D)`; fails unless `A, B > 0` and `sup |f| < 1`.
 *
 * # Safety
 * `out_value` must be null or valid for writes.
 */
enum DiffctlStatus diffctl_arctan_update(double a,
                                         double b,
                                         double c,
                                         double d,
                                         double t,
                                         double *out_value);

/**
 * Density of `T_previous` at `t ≥ 0`.
 *
 * # Safety
 * `dist` and `out_value` must be null or valid.
 */
enum DiffctlStatus diffctl_density(const struct DiffctlDistribution *dist,
                                   double t,
                                   double *out_value);

/**
 * Solves `D` so the arctan update has zero mean under `dist`.
 * `out_residual` may be null.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum DiffctlStatus diffctl_solve_shift(double a,
                                       double b,
                                       double c,
                                       const struct DiffctlDistribution *dist,
                                       double *out_d,
                                       double *out_residual);

/**
 * `E[f(T_previous)]` for the arctan update.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum DiffctlStatus diffctl_arctan_residual(double a,
                                           double b,
                                           double c,
                                           double d,
                                           const struct DiffctlDistribution *dist,
                                           double *out_residual);

/**
 * `sup f_Ethereum / sup f_arctan`.
 *
 * # Safety
 * `out_ratio` must be null or valid for writes.
 */
enum DiffctlStatus diffctl_amplitude_ratio(double a,
                                           double b,
                                           double c,
                                           double d,
                                           double *out_ratio);

/**
 * Ethereum controller (`I = 1`, one-block `T_previous`).
 *
 * # Safety
 * `out_controller` must be null or valid for writes.
 */
enum DiffctlStatus diffctl_controller_new_ethereum(struct DiffctlController **out_controller);

/**
 * Bitcoin controller retargeting every `epoch` blocks toward `spacing` seconds.
 *
 * # Safety
 * `out_controller` must be null or valid for writes.
 */
enum DiffctlStatus diffctl_controller_new_bitcoin(uint32_t epoch,
                                                  double spacing,
                                                  struct DiffctlController **out_controller);

/**
 * Arctan controller. With a null `model` the indicator is 1; otherwise it
 * is the model's normal-change probability over features `(s, q, l)`,
 * evaluated every `every` blocks.
 *
 * # Safety
 * `model` must be null or a live model handle; `out_controller` valid.
 */
enum DiffctlStatus diffctl_controller_new_arctan(double a,
                                                 double b,
                                                 double c,
                                                 double d,
                                                 const struct DiffctlModel *model,
                                                 size_t s,
                                                 size_t q,
                                                 size_t l,
                                                 uint64_t every,
                                                 struct DiffctlController **out_controller);

/**
 * Clears history and sets the current difficulty.
 *
 * # Safety
 * `controller` must be a live handle.
 */
enum DiffctlStatus diffctl_controller_reset(struct DiffctlController *controller,
                                            double difficulty);

/**
 * Feeds one block and returns the next difficulty. `out_indicator` (may be
 * null) receives NaN when no indicator was evaluated.
 *
 * # Safety
 * `controller` must be a live handle; out-pointers null or valid.
 */
enum DiffctlStatus diffctl_controller_observe(struct DiffctlController *controller,
                                              uint64_t height,
                                              double block_time,
                                              double *out_difficulty,
                                              double *out_indicator);

/**
 * # Safety
 * `controller` must be null or a handle not yet freed.
 */
void diffctl_controller_free(struct DiffctlController *controller);

/**
 * Loads a classifier saved by `diffctl train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` valid.
 */
enum DiffctlStatus diffctl_model_load(const char *path, struct DiffctlModel **out_model);

/**
 * Number of features the model expects.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t diffctl_model_inputs(const struct DiffctlModel *model);

/**
 * Class probabilities (no change, normal, abnormal) for `n` raw variance
 * features.
 *
 * # Safety
 * `features` must point to `n` doubles and `out_probs` to 3.
 */
enum DiffctlStatus diffctl_model_classify(const struct DiffctlModel *model,
                                          const double *features,
                                          size_t n,
                                          double *out_probs);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void diffctl_model_free(struct DiffctlModel *model);

/**
 * Runs `controller` for `length` blocks at constant hash `rate` (hash/s).
 *
 * # Safety
 * `controller` must be a live handle; `out_trace` valid.
 */
enum DiffctlStatus diffctl_simulate_constant(struct DiffctlController *controller,
                                             double rate,
                                             uint64_t length,
                                             uint64_t seed,
                                             double propagation_delay,
                                             double initial_difficulty,
                                             struct DiffctlTrace **out_trace);

/**
 * # Safety
 * `trace` must be a live handle.
 */
size_t diffctl_trace_len(const struct DiffctlTrace *trace);

/**
 * Record `index` (0-based; heights start at 1).
 *
 * # Safety
 * `trace` must be a live handle; `out_record` valid.
 */
enum DiffctlStatus diffctl_trace_get(const struct DiffctlTrace *trace,
                                     size_t index,
                                     struct DiffctlRecord *out_record);

/**
 * Mean block time of the trace (NaN when empty).
 *
 * # Safety
 * `trace` must be a live handle.
 */
double diffctl_trace_mean_block_time(const struct DiffctlTrace *trace);

/**
 * Writes the trace CSV.
 *
 * # Safety
 * `trace` must be a live handle; `path` NUL-terminated.
 */
enum DiffctlStatus diffctl_trace_write_csv(const struct DiffctlTrace *trace, const char *path);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void diffctl_trace_free(struct DiffctlTrace *trace);

/**
 * Library version as a static NUL-terminated string.
 */
const char *diffctl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFCTL_H */
