/* Exercises the C interface end to end; exits non-zero on the first failure. */
#include <stddef.h>
#include <stdio.h>
#include <string.h>

#include "msrl.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: check failed: %s\n", __FILE__, __LINE__, #cond); \
      return 1;                                                       \
    }                                                                 \
  } while (0)

_Static_assert(sizeof(MsrlTrainConfig) == EXPECTED_CONFIG_SIZE, "config size differs from Rust");
_Static_assert(offsetof(MsrlTrainConfig, row_normalize) == EXPECTED_ROWNORM_OFFSET, "config layout differs from Rust");
_Static_assert(offsetof(MsrlTrainConfig, delta_floor) == EXPECTED_FLOOR_OFFSET, "config layout differs from Rust");

int main(int argc, char **argv) {
  const char *ckpt_path = argc > 1 ? argv[1] : "smoke.mvck";
  enum { N = 40 };
  double a[N * 2], b[N * 3];
  uint32_t truth[N];
  for (int i = 0; i < N; i++) {
    double side = (i % 2) ? 10.0 : -10.0;
    truth[i] = (uint32_t)(i % 2);
    a[2 * i] = side + 0.01 * i;
    a[2 * i + 1] = -side;
    for (int k = 0; k < 3; k++) b[3 * i + k] = side * (k + 1) - 0.02 * i;
  }
  const double *views[2] = {a, b};
  size_t dims[2] = {2, 3};

  MsrlDataset *ds = NULL;
  CHECK(msrl_dataset_from_views(views, dims, 2, N, &ds) == MSRL_STATUS_OK);
  CHECK(msrl_dataset_num_samples(ds) == N);
  CHECK(msrl_dataset_num_views(ds) == 2);

  MsrlTrainConfig cfg = msrl_train_config_default();
  CHECK(cfg.alpha == 5.0 && cfg.batch_size == 500 && !cfg.row_normalize);
  cfg.epochs = 30;
  cfg.lr = 0.05;
  MsrlModel *model = NULL;
  CHECK(msrl_train(ds, 2, &cfg, &model) == MSRL_STATUS_OK);
  CHECK(msrl_model_clusters(model) == 2);

  uint32_t labels[N];
  double consensus[N * 2];
  CHECK(msrl_predict(model, ds, N, labels, N, consensus) == MSRL_STATUS_OK);
  for (int i = 0; i < N; i++) CHECK(consensus[2 * i] + consensus[2 * i + 1] > 0.999999);
  double acc, nmi, ari;
  CHECK(msrl_metrics(labels, truth, N, &acc, &nmi, &ari) == MSRL_STATUS_OK);
  CHECK(acc == 1.0 && nmi > 0.999 && ari > 0.999);

  CHECK(msrl_model_save(model, ckpt_path) == MSRL_STATUS_OK);
  MsrlModel *again = NULL;
  CHECK(msrl_model_load(ckpt_path, &again) == MSRL_STATUS_OK);
  uint32_t labels2[N];
  CHECK(msrl_predict(again, ds, N, labels2, N, NULL) == MSRL_STATUS_OK);
  CHECK(memcmp(labels, labels2, sizeof labels) == 0);

  CHECK(msrl_predict(model, ds, N, labels, N - 1, NULL) == MSRL_STATUS_INVALID_ARGUMENT);
  CHECK(msrl_last_error() != NULL);
  CHECK(msrl_train(NULL, 2, &cfg, &model) == MSRL_STATUS_NULL_POINTER);

  msrl_model_free(again);
  msrl_model_free(model);
  msrl_dataset_free(ds);
  puts("ok");
  return 0;
}
