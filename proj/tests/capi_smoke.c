/* Exercises the C API from plain C. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "ltsrepr/ltsrepr.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

#define OK(call)                                                              \
  do {                                                                        \
    int st_ = (call);                                                         \
    if (st_ != LTSR_OK) {                                                     \
      fprintf(stderr, "%s:%d: %s -> %s: %s\n", __FILE__, __LINE__, #call,     \
              ltsr_status_name(st_), ltsr_last_error());                      \
      return 1;                                                               \
    }                                                                         \
  } while (0)

static const char* find_artifact(const ltsr_artifacts* a, const char* name) {
  for (size_t i = 0; i < ltsr_artifacts_count(a); ++i)
    if (strcmp(ltsr_artifacts_name(a, i), name) == 0) return ltsr_artifacts_content(a, i);
  return NULL;
}

int main(void) {
  ltsr_config* cfg = NULL;
  ltsr_dataset* ds = NULL;
  ltsr_model* sgd = NULL;
  ltsr_model* swa = NULL;
  ltsr_model* out = NULL;
  ltsr_artifacts* art = NULL;
  char* text = NULL;
  size_t n_train = 0, n_test = 0;
  int k = 0, d = 0, has = -1;

  EXPECT(strcmp(ltsr_status_name(LTSR_E_PRECONDITION), "precondition") == 0);
  EXPECT(ltsr_version() != NULL);

  OK(ltsr_config_parse(
      "[data]\nnum_classes = 3\ninput_dim = 4\nmax_count = 60\ntest_per_class = 10\n"
      "[model]\nhidden = 8\nrepr_dim = 4\n[optim]\nepochs = 6\n[srepr]\nnum_samples = 2\n",
      &cfg));
  OK(ltsr_config_get(cfg, "data.num_classes", &text));
  EXPECT(strcmp(text, "3") == 0);
  ltsr_string_free(text);

  EXPECT(ltsr_config_set(cfg, "data.bogus", "1") == LTSR_E_INVALID_ARGUMENT);
  EXPECT(strstr(ltsr_last_error(), "bogus") != NULL);
  EXPECT(ltsr_config_set(NULL, "data.num_classes", "1") == LTSR_E_INVALID_ARGUMENT);

  OK(ltsr_dataset_prepare(cfg, &ds));
  OK(ltsr_dataset_info(ds, &n_train, &n_test, &k, &d));
  EXPECT(k == 3 && d == 4 && n_test == 30 && n_train > 0);

  OK(ltsr_config_set(cfg, "swa.enabled", "false"));
  OK(ltsr_pretrain(cfg, ds, &sgd));
  OK(ltsr_model_has_posterior(sgd, &has));
  EXPECT(has == 0);
  OK(ltsr_config_set(cfg, "swa.enabled", "true"));
  OK(ltsr_pretrain(cfg, ds, &swa));
  OK(ltsr_model_has_posterior(swa, &has));
  EXPECT(has == 1);

  OK(ltsr_config_set(cfg, "retrain.method", "srepr"));
  EXPECT(ltsr_retrain(cfg, sgd, ds, &out) == LTSR_E_PRECONDITION);
  EXPECT(out == NULL);
  EXPECT(strstr(ltsr_last_error(), "posterior required") != NULL);
  OK(ltsr_retrain(cfg, swa, ds, &out));
  OK(ltsr_model_metadata(out, &text));
  EXPECT(strstr(text, "\"method\":\"srepr\"") != NULL);
  ltsr_string_free(text);

  OK(ltsr_evaluate(cfg, out, ds, "", &art));
  EXPECT(find_artifact(art, "report.json") != NULL);
  EXPECT(find_artifact(art, "bins.csv") != NULL);
  ltsr_artifacts_destroy(art);
  art = NULL;

  OK(ltsr_analyze(cfg, swa, ds, &art));
  EXPECT(find_artifact(art, "analysis_instances.csv") != NULL);
  ltsr_artifacts_destroy(art);
  art = NULL;
  EXPECT(ltsr_analyze(cfg, sgd, ds, &art) == LTSR_E_PRECONDITION);

  {
    ltsr_model* missing = NULL;
    EXPECT(ltsr_model_load("/nonexistent/file.ckpt", &missing) == LTSR_E_IO);
    EXPECT(missing == NULL);
  }

  ltsr_model_destroy(out);
  ltsr_model_destroy(swa);
  ltsr_model_destroy(sgd);
  ltsr_dataset_destroy(ds);
  ltsr_config_destroy(cfg);
  ltsr_config_destroy(NULL);

  if (failures) {
    fprintf(stderr, "%d check(s) failed\n", failures);
    return 1;
  }
  printf("capi smoke: ok\n");
  return 0;
}
