/* C interface to the prom3e library. All functions are thread-compatible:
 * distinct handles may be used from different threads. Strings returned
 * through char** must be released with prom3e_string_free. */
#ifndef PROM3E_H
#define PROM3E_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PROM3E_API __declspec(dllexport)
#else
#define PROM3E_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum prom3e_status {
  PROM3E_OK = 0,
  PROM3E_ERR_USAGE = 1,
  PROM3E_ERR_DATA = 2,
  PROM3E_ERR_NUMERIC = 3,
  PROM3E_ERR_IO = 4,
  PROM3E_ERR_BAD_MAGIC = 5,
  PROM3E_ERR_BAD_VERSION = 6,
  PROM3E_ERR_TRUNCATED = 7,
  PROM3E_ERR_SHAPE = 8,
  PROM3E_ERR_INTERNAL = 9
} prom3e_status;

typedef struct prom3e_config prom3e_config;
typedef struct prom3e_dataset prom3e_dataset;
typedef struct prom3e_model prom3e_model;

/* Message of the last failure on the calling thread ("" if none). */
PROM3E_API const char* prom3e_last_error(void);
PROM3E_API const char* prom3e_status_name(prom3e_status s);
PROM3E_API void prom3e_string_free(char* s);

/* modality name ("image", ...) or decimal index -> index */
PROM3E_API prom3e_status prom3e_modality_index(const char* name, size_t modality_count, size_t* out);

PROM3E_API prom3e_status prom3e_config_new(prom3e_config** out);
PROM3E_API void prom3e_config_free(prom3e_config* c);
PROM3E_API prom3e_status prom3e_config_set(prom3e_config* c, const char* key, const char* value);
PROM3E_API prom3e_status prom3e_config_load(prom3e_config* c, const char* path);
PROM3E_API prom3e_status prom3e_config_validate(const prom3e_config* c);
PROM3E_API prom3e_status prom3e_config_text(const prom3e_config* c, char** out);
PROM3E_API uint64_t prom3e_config_seed(const prom3e_config* c);

PROM3E_API prom3e_status prom3e_dataset_generate(const prom3e_config* c, prom3e_dataset** out);
PROM3E_API prom3e_status prom3e_dataset_read(const char* path, prom3e_dataset** out);
PROM3E_API prom3e_status prom3e_dataset_write(const prom3e_dataset* d, const char* path);
PROM3E_API void prom3e_dataset_free(prom3e_dataset* d);
PROM3E_API size_t prom3e_dataset_size(const prom3e_dataset* d);
PROM3E_API size_t prom3e_dataset_modalities(const prom3e_dataset* d);
/* Stratified split with the config's seed and fractions. */
PROM3E_API prom3e_status prom3e_dataset_split(const prom3e_dataset* d, const prom3e_config* c,
                                              prom3e_dataset** train, prom3e_dataset** val,
                                              prom3e_dataset** test);

/* Trains from scratch; writes the best-validation checkpoint if path is
 * non-NULL. report (optional) receives the per-epoch table. */
PROM3E_API prom3e_status prom3e_train(const prom3e_config* c, const prom3e_dataset* train,
                                      const prom3e_dataset* val, const char* checkpoint_path,
                                      prom3e_model** out, char** report);
PROM3E_API prom3e_status prom3e_model_load(const char* path, prom3e_model** out);
PROM3E_API prom3e_status prom3e_model_save(const prom3e_model* m, const char* path);
PROM3E_API void prom3e_model_free(prom3e_model* m);
/* Copy of the config stored with the model. */
PROM3E_API prom3e_status prom3e_model_config(const prom3e_model* m, prom3e_config** out);

/* Retrieval over `eval` (query i matches gallery item i). If tune_set is
 * non-NULL delta is chosen on it and the given delta is ignored. One header
 * line plus one row. */
PROM3E_API prom3e_status prom3e_eval_retrieval(const prom3e_model* m, const prom3e_dataset* eval,
                                               const prom3e_dataset* tune_set, size_t query, size_t target,
                                               double delta, char** report);
/* Species probe; kind NULL runs every feature kind. */
PROM3E_API prom3e_status prom3e_eval_probe(const prom3e_model* m, const prom3e_dataset* train,
                                           const prom3e_dataset* test, const size_t* visible,
                                           size_t visible_count, const char* kind, char** report);
/* Progressive visible sets {m0}, {m0,m1}, ... */
PROM3E_API prom3e_status prom3e_analyze_uncertainty(const prom3e_model* m, const prom3e_dataset* d,
                                                    char** report);
PROM3E_API prom3e_status prom3e_analyze_gap(const prom3e_model* m, const prom3e_dataset* d, size_t a,
                                            size_t b, char** report);
PROM3E_API prom3e_status prom3e_diversity_map(const prom3e_model* m, const prom3e_dataset* d, size_t rows,
                                              size_t cols, double smoothing, char** report);
PROM3E_API prom3e_status prom3e_grad_check(size_t dim, size_t modalities, size_t records, uint64_t seed,
                                           double step, double* max_error, char** report);

#ifdef __cplusplus
}
#endif

#endif
