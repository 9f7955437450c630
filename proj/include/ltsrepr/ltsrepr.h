#ifndef LTSREPR_LTSREPR_H
#define LTSREPR_LTSREPR_H

#include <stddef.h>
#include <stdint.h>

#if defined(LTSR_BUILDING_LIBRARY)
#define LTSR_API __attribute__((visibility("default")))
#else
#define LTSR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every function returning int uses them; on failure the
   message is available from ltsr_last_error() on the calling thread. */
enum ltsr_status {
  LTSR_OK = 0,
  LTSR_E_INVALID_ARGUMENT = 1,
  LTSR_E_IO = 2,
  LTSR_E_FORMAT = 3,
  LTSR_E_PRECONDITION = 4,
  LTSR_E_NUMERIC = 5,
  LTSR_E_PARTIAL = 6,
  LTSR_E_INTERNAL = 99
};

typedef struct ltsr_config ltsr_config;
typedef struct ltsr_dataset ltsr_dataset;
typedef struct ltsr_model ltsr_model;
typedef struct ltsr_artifacts ltsr_artifacts;

LTSR_API const char* ltsr_last_error(void);
LTSR_API const char* ltsr_status_name(int status);
LTSR_API const char* ltsr_version(void);

/* Strings handed out by the library are released with this. */
LTSR_API void ltsr_string_free(char* s);

/* Config */
LTSR_API int ltsr_config_create(ltsr_config** out);
LTSR_API int ltsr_config_load(const char* path, ltsr_config** out);
LTSR_API int ltsr_config_parse(const char* text, ltsr_config** out);
LTSR_API int ltsr_config_from_model(const ltsr_model* model, ltsr_config** out);
/* key is "section.key", e.g. "optim.lr". */
LTSR_API int ltsr_config_set(ltsr_config* config, const char* key, const char* value);
LTSR_API int ltsr_config_get(const ltsr_config* config, const char* key, char** out);
LTSR_API int ltsr_config_serialize(const ltsr_config* config, char** out);
LTSR_API int ltsr_config_validate(const ltsr_config* config);
LTSR_API void ltsr_config_destroy(ltsr_config* config);

/* Dataset (train + test), generated or read from the cache named by
   "data.cache". */
LTSR_API int ltsr_dataset_prepare(const ltsr_config* config, ltsr_dataset** out);
LTSR_API int ltsr_dataset_info(const ltsr_dataset* dataset, size_t* train_size,
                               size_t* test_size, int* num_classes, int* input_dim);
LTSR_API void ltsr_dataset_destroy(ltsr_dataset* dataset);

/* Models */
LTSR_API int ltsr_pretrain(const ltsr_config* config, const ltsr_dataset* dataset,
                           ltsr_model** out);
LTSR_API int ltsr_retrain(const ltsr_config* config, const ltsr_model* input,
                          const ltsr_dataset* dataset, ltsr_model** out);
LTSR_API int ltsr_model_load(const char* path, ltsr_model** out);
LTSR_API int ltsr_model_save(const ltsr_model* model, const char* path);
LTSR_API int ltsr_model_has_posterior(const ltsr_model* model, int* out);
LTSR_API int ltsr_model_metadata(const ltsr_model* model, char** out);
LTSR_API void ltsr_model_destroy(ltsr_model* model);

/* Commands producing named text files. */
LTSR_API int ltsr_evaluate(const ltsr_config* config, const ltsr_model* model,
                           const ltsr_dataset* dataset, const char* prefix,
                           ltsr_artifacts** out);
LTSR_API int ltsr_analyze(const ltsr_config* config, const ltsr_model* model,
                          const ltsr_dataset* dataset, ltsr_artifacts** out);
/* Runs every seed in "run.seeds". Returns LTSR_E_PARTIAL, with *out set,
   when some seeds failed; the failures are listed in sweep_failures.txt. */
LTSR_API int ltsr_sweep(const ltsr_config* config, ltsr_artifacts** out);

LTSR_API size_t ltsr_artifacts_count(const ltsr_artifacts* artifacts);
LTSR_API const char* ltsr_artifacts_name(const ltsr_artifacts* artifacts, size_t index);
LTSR_API const char* ltsr_artifacts_content(const ltsr_artifacts* artifacts, size_t index);
/* Writes every artifact into dir (which must exist). */
LTSR_API int ltsr_artifacts_write(const ltsr_artifacts* artifacts, const char* dir);
LTSR_API void ltsr_artifacts_destroy(ltsr_artifacts* artifacts);

#ifdef __cplusplus
}
#endif

#endif
