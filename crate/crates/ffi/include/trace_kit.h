#ifndef TRACE_KIT_H
#define TRACE_KIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result code of every exported function.
 */
typedef enum TkStatus {
  TK_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  TK_STATUS_NULL_POINTER = 1,
  /*
   An argument or configuration value is out of range or inconsistent.
   */
  TK_STATUS_INVALID_ARGUMENT = 2,
  /*
   An input file or JSON string is malformed.
   */
  TK_STATUS_PARSE_ERROR = 3,
  TK_STATUS_IO_ERROR = 4,
  /*
   A computation failed (divergence, non-finite value, ...).
   */
  TK_STATUS_NUMERIC_ERROR = 5,
  /*
   A Rust panic was caught at the boundary.
   */
  TK_STATUS_PANIC = 6,
} TkStatus;

/*
 A labeled classification sample.
 */
typedef struct TkDataset TkDataset;

/*
 A trained predictor.
 */
typedef struct TkPredictor TkPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on this thread.
 */
const char *tk_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *tk_version(void);

/*
 Releases a string returned by this library. Null is a no-op.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void tk_string_free(char *s);

/*
 Loads a dataset from a `.csv` or `.json` file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TkStatus tk_dataset_load(const char *path, struct TkDataset **out);

/*
 Builds a dataset from a row-major `rows × cols` feature buffer and
 `rows` labels in `0..class_count`.

 # Safety
 `features` must hold `rows·cols` values and `labels` `rows` values.
 */
enum TkStatus tk_dataset_from_rows(const double *features,
                                   uintptr_t rows,
                                   uintptr_t cols,
                                   const uintptr_t *labels,
                                   uintptr_t class_count,
                                   struct TkDataset **out);

/*
 # Safety
 `ds` must be a live dataset handle; `out` must be writable.
 */
enum TkStatus tk_dataset_rows(const struct TkDataset *ds, uintptr_t *out);

/*
 # Safety
 `ds` must be a live dataset handle; `out` must be writable.
 */
enum TkStatus tk_dataset_cols(const struct TkDataset *ds, uintptr_t *out);

/*
 Releases a dataset. Null is a no-op.

 # Safety
 `ds` must come from this library and not be freed twice.
 */
void tk_dataset_free(struct TkDataset *ds);

/*
 Loads a predictor from a JSON model file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TkStatus tk_predictor_load(const char *path, struct TkPredictor **out);

/*
 Parses a predictor from its JSON serialization.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum TkStatus tk_predictor_from_json(const char *json, struct TkPredictor **out);

/*
 Number of logits per input.

 # Safety
 `p` must be a live predictor handle; `out` must be writable.
 */
enum TkStatus tk_predictor_outputs(const struct TkPredictor *p, uintptr_t *out);

/*
 Clipped logits of `rows` row-major inputs of width `cols`, written
 row-major into `out`, which must hold `rows·outputs` values.

 # Safety
 Buffers must have the stated lengths.
 */
enum TkStatus tk_predictor_forward(const struct TkPredictor *p,
                                   const double *x,
                                   uintptr_t rows,
                                   uintptr_t cols,
                                   double *out,
                                   uintptr_t out_len);

/*
 Releases a predictor. Null is a no-op.

 # Safety
 `p` must come from this library and not be freed twice.
 */
void tk_predictor_free(struct TkPredictor *p);

/*
 Debiased Sinkhorn divergence between two row-major clouds of width
 `dim` with squared Euclidean ground cost.

 # Safety
 `a` must hold `na·dim` values and `b` `nb·dim`.
 */
enum TkStatus tk_sinkhorn_divergence(const double *a,
                                     uintptr_t na,
                                     const double *b,
                                     uintptr_t nb,
                                     uintptr_t dim,
                                     double epsilon,
                                     uintptr_t iterations,
                                     double *out);

/*
 RBF-kernel MMD between two clouds. A non-positive `bandwidth` selects
 the median heuristic. Writes `sqrt(max(0, MMD²))`.

 # Safety
 `a` must hold `na·dim` values and `b` `nb·dim`.
 */
enum TkStatus tk_mmd(const double *a,
                     uintptr_t na,
                     const double *b,
                     uintptr_t nb,
                     uintptr_t dim,
                     double bandwidth,
                     bool unbiased,
                     double *out);

/*
 `2M·sqrt(ln(4/δ)/(2n))`.

 # Safety
 `out` must be writable.
 */
enum TkStatus tk_label_noise_remainder(uintptr_t n, double m_bound, double delta, double *out);

/*
 `M·(sqrt(ln(2/η)/(2m)) + sqrt(ln(2/η)/(2m̃)))`.

 # Safety
 `out` must be writable.
 */
enum TkStatus tk_validation_set_error(double m_bound,
                                      uintptr_t m,
                                      uintptr_t m_tilde,
                                      double eta,
                                      double *out);

/*
 `sqrt(ln(2/η)/(2m))`.

 # Safety
 `out` must be writable.
 */
enum TkStatus tk_dkw_band(uintptr_t m, double eta, double *out);

/*
 `C_X·(ln(4/δ)/n)^{1/max(d,2)}`.

 # Safety
 `out` must be writable.
 */
enum TkStatus tk_population_residual(uintptr_t n,
                                     uintptr_t dim,
                                     double c_x,
                                     double delta,
                                     double *out);

/*
 `C_κ·sqrt(ln(2/δ)/n)`.

 # Safety
 `out` must be writable.
 */
enum TkStatus tk_mmd_concentration(uintptr_t n, double c_kappa, double delta, double *out);

/*
 Runs the full diagnostic and returns the report as JSON in `out`,
 released with [`tk_string_free`]. `test` (labeled anchor sample for the
 true risk change) and `config_json` (a run configuration) may be null.

 # Safety
 Handles must be live; `config_json`, when non-null, NUL-terminated.
 */
enum TkStatus tk_diagnose_json(const struct TkPredictor *q,
                               const struct TkPredictor *qt,
                               const struct TkDataset *source,
                               const struct TkDataset *target,
                               const struct TkDataset *test,
                               const char *config_json,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRACE_KIT_H */
