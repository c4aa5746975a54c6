/* C interface to the entlab library. Every function returns an entlab_status;
   on failure entlab_last_error() describes the problem (per thread).
   Strings returned through char** are owned by the caller: release them with
   entlab_string_free. Config arguments are JSON objects (see schemas/). */
#ifndef ENTLAB_H
#define ENTLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ENTLAB_API __declspec(dllexport)
#else
#define ENTLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum entlab_status {
  ENTLAB_OK = 0,
  ENTLAB_E_INVALID_ARGUMENT = 1,
  ENTLAB_E_OUT_OF_RANGE = 2,
  ENTLAB_E_EXHAUSTED = 3,
  ENTLAB_E_NOT_FOUND = 4,
  ENTLAB_E_IO = 5,
  ENTLAB_E_FORMAT = 6,
  ENTLAB_E_NUMERICAL = 7,
  ENTLAB_E_DIVERGED = 8,
  ENTLAB_E_INTERNAL = 9
} entlab_status;

typedef struct entlab_dataset entlab_dataset;
typedef struct entlab_model entlab_model;

ENTLAB_API const char* entlab_version(void);
ENTLAB_API const char* entlab_last_error(void);
ENTLAB_API const char* entlab_status_name(entlab_status status);
ENTLAB_API void entlab_string_free(char* s);

/* corpus */
ENTLAB_API entlab_status entlab_dataset_build(const char* corpus_json, entlab_dataset** out);
ENTLAB_API entlab_status entlab_dataset_load(const char* dir, entlab_dataset** out);
ENTLAB_API entlab_status entlab_dataset_save(const entlab_dataset* ds, const char* dir);
ENTLAB_API entlab_status entlab_dataset_size(const entlab_dataset* ds, size_t* n_examples);
/* {"config":..., "chains":[[...]], "warnings":[...], "num_examples":n} */
ENTLAB_API entlab_status entlab_dataset_info(const entlab_dataset* ds, char** json_out);
ENTLAB_API void entlab_dataset_free(entlab_dataset* ds);

/* model */
ENTLAB_API entlab_status entlab_model_load(const char* path, entlab_model** out);
ENTLAB_API entlab_status entlab_model_save(const entlab_model* m, const char* path);
ENTLAB_API entlab_status entlab_model_config(const entlab_model* m, char** json_out);
/* Next-token logits for every position: out has n_tokens * vocab_size doubles. */
ENTLAB_API entlab_status entlab_model_logits(const entlab_model* m, const int* tokens, size_t n_tokens, double* out,
                                             size_t out_len);
ENTLAB_API void entlab_model_free(entlab_model* m);

/* trainer: model_json / train_json may be NULL for defaults. On divergence the
   status is ENTLAB_E_DIVERGED, *out stays NULL and record_json (if given) still
   receives the run record. */
ENTLAB_API entlab_status entlab_train(const entlab_dataset* ds, const char* model_json, const char* train_json,
                                      entlab_model** out, char** record_json);

/* probelab: head-probe table, residual feature directions and logit lens.
   CSVs are written into out_dir when it is non-NULL. */
ENTLAB_API entlab_status entlab_probe(const entlab_model* m, const entlab_dataset* ds, const char* options_json,
                                      const char* out_dir, char** result_json);

/* geometry */
ENTLAB_API entlab_status entlab_welch_bound(int num_features, int dim, double* out);
/* vectors: n rows of dim doubles, row-major; out: n entanglement values. */
ENTLAB_API entlab_status entlab_entanglement(const double* vectors, size_t n, size_t dim, double* out);
ENTLAB_API entlab_status entlab_entangle(const entlab_model* m, const entlab_dataset* ds, const char* options_json,
                                         char** report_json);
ENTLAB_API entlab_status entlab_compare(const double* a, size_t n_a, const double* b, size_t n_b, int bootstrap_n,
                                        uint64_t seed, char** json_out);

/* steerkit */
ENTLAB_API entlab_status entlab_steer(const entlab_model* m, const entlab_dataset* ds, const char* options_json,
                                      char** result_json);

/* sweeper: *failed_cells receives the number of failed grid cells. */
ENTLAB_API entlab_status entlab_sweep(const char* sweep_json, int verbose, char** report_json, size_t* failed_cells);
ENTLAB_API entlab_status entlab_report(const char* out_dir, char** report_json, size_t* failed_cells);

#ifdef __cplusplus
}
#endif

#endif
