#ifndef SIMSIAM_H
#define SIMSIAM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SimsiamStatus {
  SIMSIAM_STATUS_OK = 0,
  SIMSIAM_STATUS_NULL_POINTER = 1,
  SIMSIAM_STATUS_INVALID_UTF8 = 2,
  SIMSIAM_STATUS_INVALID_ARGUMENT = 3,
  SIMSIAM_STATUS_CONFIG = 4,
  SIMSIAM_STATUS_IO = 5,
  SIMSIAM_STATUS_DATA = 6,
  SIMSIAM_STATUS_TRAIN = 7,
  SIMSIAM_STATUS_PANIC = 8,
} SimsiamStatus;

/*
 Parsed experiment config.
 */
typedef struct SimsiamConfig SimsiamConfig;

/*
 Decoded CIFAR-10 records.
 */
typedef struct SimsiamDataset SimsiamDataset;

/*
 Result of a finished run.
 */
typedef struct SimsiamSummary SimsiamSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *simsiam_last_error(void);

/*
 Library version as a static string.
 */
const char *simsiam_version(void);

/*
 # Safety
 `s` must be NULL or a string returned by this library.
 */
void simsiam_string_free(char *s);

/*
 Parses a TOML config. `preset` may be NULL.

 # Safety
 `text` and a non-NULL `preset` must be NUL-terminated; `out` must be
 writable.
 */
enum SimsiamStatus simsiam_config_parse(const char *text,
                                        const char *preset,
                                        struct SimsiamConfig **out);

/*
 # Safety
 `cfg` must be NULL or a handle from [`simsiam_config_parse`].
 */
void simsiam_config_free(struct SimsiamConfig *cfg);

/*
 # Safety
 `cfg` must be a live config handle.
 */
enum SimsiamStatus simsiam_config_set_seed(struct SimsiamConfig *cfg, uint64_t seed);

/*
 Caps the run length; 0 removes the cap.

 # Safety
 `cfg` must be a live config handle.
 */
enum SimsiamStatus simsiam_config_set_max_steps(struct SimsiamConfig *cfg, uint64_t steps);

/*
 # Safety
 `cfg` must be a live config handle and `dir` NUL-terminated.
 */
enum SimsiamStatus simsiam_config_set_out_dir(struct SimsiamConfig *cfg, const char *dir);

/*
 The resolved config as TOML; free with [`simsiam_string_free`].

 # Safety
 `cfg` must be a live config handle.
 */
char *simsiam_config_to_toml(const struct SimsiamConfig *cfg);

/*
 Runs the experiment, writing artifacts to the config's output directory.

 # Safety
 `cfg` must be a live config handle and `out` writable.
 */
enum SimsiamStatus simsiam_run(const struct SimsiamConfig *cfg, struct SimsiamSummary **out);

/*
 # Safety
 `s` must be NULL or a handle from [`simsiam_run`].
 */
void simsiam_summary_free(struct SimsiamSummary *s);

/*
 Process exit status for the verdict: 0 healthy, 10 collapsed,
 11 diverged, 12 unstable. −1 for a NULL handle.

 # Safety
 `s` must be NULL or a live summary handle.
 */
int32_t simsiam_summary_exit_code(const struct SimsiamSummary *s);

/*
 Trailing-window mean loss and output std of the run.

 # Safety
 `s` must be a live summary handle; outputs must be writable.
 */
enum SimsiamStatus simsiam_summary_trailing(const struct SimsiamSummary *s,
                                            double *loss,
                                            double *output_std);

/*
 Final kNN accuracy, or NaN when the monitor did not run.

 # Safety
 `s` must be NULL or a live summary handle.
 */
double simsiam_summary_final_knn(const struct SimsiamSummary *s);

/*
 Mean per-channel std of the row-normalized `[n, d]` matrix `z`.

 # Safety
 `z` must point to `n * d` doubles; `out` must be writable.
 */
enum SimsiamStatus simsiam_output_std(const double *z, size_t n, size_t d, double *out);

/*
 Weighted kNN accuracy of `query` rows against the labeled `bank` rows.

 # Safety
 `bank` holds `n_bank * d` doubles, `query` `n_query * d`, label arrays
 one entry per row; `out` must be writable.
 */
enum SimsiamStatus simsiam_knn_accuracy(const double *bank,
                                        const uint32_t *bank_labels,
                                        size_t n_bank,
                                        const double *query,
                                        const uint32_t *query_labels,
                                        size_t n_query,
                                        size_t d,
                                        size_t k,
                                        double temperature,
                                        double *out);

/*
 Decodes CIFAR-10 binary records.

 # Safety
 `bytes` must point to `len` readable bytes; `out` must be writable.
 */
enum SimsiamStatus simsiam_cifar_parse(const uint8_t *bytes,
                                       size_t len,
                                       struct SimsiamDataset **out);

/*
 # Safety
 `ds` must be NULL or a handle from [`simsiam_cifar_parse`].
 */
void simsiam_dataset_free(struct SimsiamDataset *ds);

/*
 Number of records, 0 for NULL.

 # Safety
 `ds` must be NULL or a live dataset handle.
 */
size_t simsiam_dataset_len(const struct SimsiamDataset *ds);

/*
 Label of record `i` and its 3072 pixels in `[0, 1]`, planar RGB.
 `pixels` may be NULL to fetch only the label.

 # Safety
 `ds` must be a live dataset handle, `label` writable, and a non-NULL
 `pixels` must have room for 3072 doubles.
 */
enum SimsiamStatus simsiam_dataset_record(const struct SimsiamDataset *ds,
                                          size_t i,
                                          uint32_t *label,
                                          double *pixels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMSIAM_H */
