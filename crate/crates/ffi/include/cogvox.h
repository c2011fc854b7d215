#ifndef COGVOX_H
#define COGVOX_H

#include <stddef.h>
#include <stdint.h>

// Number of values written by [`cvx_transcript_features`].
#define CVX_TASK_FEATURES 14

// Number of diagnostic classes (HC, MCI, AD).
#define CVX_N_CLASSES 3

typedef enum CvxStatus {
  CVX_STATUS_OK = 0,
  CVX_STATUS_NULL_POINTER = 1,
  CVX_STATUS_INVALID_ARGUMENT = 2,
  CVX_STATUS_INVALID_UTF8 = 3,
  CVX_STATUS_IO = 4,
  CVX_STATUS_PARSE = 5,
  CVX_STATUS_MODEL = 6,
  CVX_STATUS_PANIC = 7,
} CvxStatus;

typedef enum CvxModelTask {
  CVX_MODEL_TASK_CLASSIFICATION = 0,
  CVX_MODEL_TASK_REGRESSION = 1,
} CvxModelTask;

typedef enum CvxTask {
  CVX_TASK_CTD = 0,
  CVX_TASK_SF = 1,
  CVX_TASK_PF = 2,
} CvxTask;

// Opaque handle to a trained model or voting ensemble.
typedef struct CvxModel CvxModel;

typedef struct CvxMacroMetrics {
  double precision;
  double recall;
  double f1;
  double f1_per_class_avg;
  // Non-zero when some per-class precision or recall had no denominator.
  uint8_t zero_division;
} CvxMacroMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// successful one. Valid until the next cogvox call on the same thread.
const char *cvx_last_error(void);

// Library version as a static NUL-terminated string.
const char *cvx_version(void);

// Loads a model (`CVXM`) or ensemble (`CVXE`) from memory.
//
// # Safety
// `bytes` must point to `len` readable bytes and `out` to writable storage
// for one pointer. Free the handle with [`cvx_model_free`].
enum CvxStatus cvx_model_load(const uint8_t *bytes, size_t len, struct CvxModel **out);

// Loads a model or ensemble from a file path.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable storage for one
// pointer.
enum CvxStatus cvx_model_load_file(const char *path, struct CvxModel **out);

// Releases a handle. Null is accepted.
//
// # Safety
// `model` must come from a load function and not have been freed.
void cvx_model_free(struct CvxModel *model);

// # Safety
// `model` must be a live handle and `out` writable.
enum CvxStatus cvx_model_task(const struct CvxModel *model, enum CvxModelTask *out);

// Number of input columns the model expects.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum CvxStatus cvx_model_n_features(const struct CvxModel *model, size_t *out);

// Predicts for `n_rows` row-major rows of `n_cols` values, in the model's
// column order.
//
// Classifiers write `n_rows * CVX_N_CLASSES` class probabilities (a hard
// vote writes one-hot rows); regressors write `n_rows` MMSE estimates.
// `out_len` is the capacity of `out` in doubles.
//
// # Safety
// `rows` must hold `n_rows * n_cols` doubles and `out` `out_len` doubles.
enum CvxStatus cvx_model_predict(const struct CvxModel *model,
                                 const double *rows,
                                 size_t n_rows,
                                 size_t n_cols,
                                 double *out,
                                 size_t out_len);

// Parses one annotated transcript and writes its fourteen features, in the
// order of the feature table columns. `task` is a [`CvxTask`] value.
//
// # Safety
// `text` must hold `len` bytes and `out` `CVX_TASK_FEATURES` doubles.
enum CvxStatus cvx_transcript_features(const uint8_t *text,
                                       size_t len,
                                       uint32_t task,
                                       double duration_seconds,
                                       double *out);

// Macro precision, recall and F1 over class indices 0..3.
//
// # Safety
// `y_true` and `y_pred` must hold `n` values and `out` must be writable.
enum CvxStatus cvx_macro_metrics(const uint32_t *y_true,
                                 const uint32_t *y_pred,
                                 size_t n,
                                 struct CvxMacroMetrics *out);

// # Safety
// `y_true` and `y_pred` must hold `n` values and `out` must be writable.
enum CvxStatus cvx_rmse(const double *y_true, const double *y_pred, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COGVOX_H */
