#ifndef MSRL_H
#define MSRL_H

/* C interface to msrl-core. Regenerate with `cargo build -p msrl-ffi --features generate-header`. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsrlStatus {
  MSRL_STATUS_OK = 0,
  MSRL_STATUS_NULL_POINTER = 1,
  MSRL_STATUS_INVALID_ARGUMENT = 2,
  MSRL_STATUS_DATA = 3,
  MSRL_STATUS_NUMERICAL = 4,
  MSRL_STATUS_IO = 5,
  MSRL_STATUS_PANIC = 6,
} MsrlStatus;

/**
 * Opaque multiview dataset.
 */
typedef struct MsrlDataset MsrlDataset;

/**
 * Opaque trained model (a full checkpoint).
 */
typedef struct MsrlModel MsrlModel;

/**
 * Hyperparameters mirrored from the Rust training configuration.
 */
typedef struct MsrlTrainConfig {
  double alpha;
  double beta;
  double lr;
  size_t batch_size;
  size_t epochs;
  uint64_t seed;
  double dropout_rate;
  bool row_normalize;
  double delta_floor;
} MsrlTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *msrl_last_error(void);

/**
 * Library defaults: alpha 5, beta 1, lr 1e-3, batch 500, 100 epochs, seed 0,
 * dropout 0.1, no column normalization, simplex floor 1e-8.
 */
MsrlTrainConfig msrl_train_config_default(void);

/**
 * Loads the dataset described by a manifest JSON file.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated string and `out` a valid pointer.
 */
MsrlStatus msrl_dataset_load(const char *manifest_path, MsrlDataset **out);

/**
 * Builds a dataset from in-memory row-major feature matrices: view `l` is
 * `num_samples × dims[l]` at `views[l]`. Data is copied.
 *
 * # Safety
 * `views` and `dims` must hold `num_views` entries, and each `views[l]` must
 * point to `num_samples * dims[l]` doubles.
 */
MsrlStatus msrl_dataset_from_views(const double *const *views,
                                   const size_t *dims,
                                   size_t num_views,
                                   size_t num_samples,
                                   MsrlDataset **out);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t msrl_dataset_num_samples(const MsrlDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t msrl_dataset_num_views(const MsrlDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void msrl_dataset_free(MsrlDataset *dataset);

/**
 * Trains a model from scratch.
 *
 * # Safety
 * `dataset` and `config` must be live pointers and `out` writable.
 */
MsrlStatus msrl_train(const MsrlDataset *dataset,
                      size_t clusters,
                      const MsrlTrainConfig *config,
                      MsrlModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t msrl_model_clusters(const MsrlModel *model);

/**
 * Evaluation-mode prediction in natural sample order. Writes `num_samples`
 * labels into `labels` and, when `consensus` is non-null, the row-major
 * `num_samples × clusters` consensus distributions.
 *
 * # Safety
 * `labels` must hold `labels_len` entries; `consensus`, if non-null, must
 * hold `num_samples * clusters` doubles.
 */
MsrlStatus msrl_predict(const MsrlModel *model,
                        const MsrlDataset *dataset,
                        size_t batch_size,
                        uint32_t *labels,
                        size_t labels_len,
                        double *consensus);

/**
 * # Safety
 * `model` must be live and `path` NUL-terminated.
 */
MsrlStatus msrl_model_save(const MsrlModel *model, const char *path);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
MsrlStatus msrl_model_load(const char *path, MsrlModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void msrl_model_free(MsrlModel *model);

/**
 * Hungarian-matched accuracy, NMI and ARI of `pred` against `truth`.
 *
 * # Safety
 * `pred` and `truth` must hold `n` entries; the outputs must be writable.
 */
MsrlStatus msrl_metrics(const uint32_t *pred,
                        const uint32_t *truth,
                        size_t n,
                        double *acc,
                        double *nmi,
                        double *ari);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSRL_H */
