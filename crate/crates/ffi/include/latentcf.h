#ifndef LATENTCF_H
#define LATENTCF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcfStatus {
  LCF_STATUS_OK = 0,
  LCF_STATUS_NULL_POINTER = 1,
  LCF_STATUS_INVALID_UTF8 = 2,
  LCF_STATUS_CONFIG = 3,
  LCF_STATUS_DATA = 4,
  LCF_STATUS_NUMERIC = 5,
  LCF_STATUS_IO = 6,
  LCF_STATUS_BUFFER_TOO_SMALL = 7,
  LCF_STATUS_PANIC = 8,
} LcfStatus;

/**
 * A generated or loaded dataset.
 */
typedef struct LcfDataset LcfDataset;

/**
 * Dataset plus the three trained models of one run directory.
 */
typedef struct LcfPipeline LcfPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lcf_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lcf_last_error_message(void);

/**
 * Runs one pipeline stage: `gen-data`, `train`, `grid-search`, `evaluate`
 * or `loo-evaluate`. `config_path` may be NULL; `sets` holds `n_sets`
 * dotted `key=value` overrides.
 *
 * # Safety
 * String arguments must be NUL-terminated; `sets` must point to `n_sets`
 * valid strings when `n_sets > 0`.
 */
enum LcfStatus lcf_run(const char *command,
                       const char *config_path,
                       const char *const *sets,
                       size_t n_sets);

/**
 * Generates `"toy"` or `"nonlinear"` data.
 *
 * # Safety
 * `kind` must be NUL-terminated; `out` must be writable.
 */
enum LcfStatus lcf_dataset_generate(const char *kind,
                                    size_t n_samples,
                                    uint64_t seed,
                                    struct LcfDataset **out);

/**
 * Loads the dataset stored in a run directory.
 *
 * # Safety
 * `run_dir` must be NUL-terminated; `out` must be writable.
 */
enum LcfStatus lcf_dataset_open(const char *run_dir, struct LcfDataset **out);

/**
 * # Safety
 * `ds` must come from this library and not be used afterwards. NULL is a no-op.
 */
void lcf_dataset_free(struct LcfDataset *ds);

/**
 * Row count, 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t lcf_dataset_n_rows(const struct LcfDataset *ds);

/**
 * Feature count, 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t lcf_dataset_n_features(const struct LcfDataset *ds);

/**
 * Copies row `row` in raw units into `out[0..n_features]`.
 *
 * # Safety
 * `ds` must be a live handle; `out` must hold `len` doubles.
 */
enum LcfStatus lcf_dataset_raw_row(const struct LcfDataset *ds,
                                   size_t row,
                                   double *out,
                                   size_t len);

/**
 * # Safety
 * `ds` must be a live handle; `label` must be writable.
 */
enum LcfStatus lcf_dataset_label(const struct LcfDataset *ds, size_t row, uint8_t *label);

/**
 * Loads the dataset and trained models of a run directory.
 *
 * # Safety
 * `run_dir` must be NUL-terminated; `out` must be writable.
 */
enum LcfStatus lcf_pipeline_open(const char *run_dir, struct LcfPipeline **out);

/**
 * # Safety
 * `p` must come from this library and not be used afterwards. NULL is a no-op.
 */
void lcf_pipeline_free(struct LcfPipeline *p);

/**
 * Feature count, 0 for NULL.
 *
 * # Safety
 * `p` must be NULL or a live handle.
 */
size_t lcf_pipeline_n_features(const struct LcfPipeline *p);

/**
 * Black-box label of a raw-unit record.
 *
 * # Safety
 * `p` must be a live handle; `record` must hold `len` doubles; `label`
 * must be writable.
 */
enum LcfStatus lcf_pipeline_predict(const struct LcfPipeline *p,
                                    const double *record,
                                    size_t len,
                                    uint8_t *label);

/**
 * Counterfactual for a raw-unit record. `target` is 0 or 1, or negative to
 * flip the current prediction. Writes the counterfactual into
 * `out_cf[0..n_features]` and the black-box label of it into `out_label`.
 *
 * # Safety
 * `p` must be a live handle; `record` must hold `len` doubles; `out_cf`
 * must hold `out_len` doubles; `out_label` must be writable.
 */
enum LcfStatus lcf_pipeline_explain(const struct LcfPipeline *p,
                                    const double *record,
                                    size_t len,
                                    int32_t target,
                                    double *out_cf,
                                    size_t out_len,
                                    uint8_t *out_label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENTCF_H */
