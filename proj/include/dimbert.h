/* C interface to the dimbert core. All entry points return a status code;
 * DIM_OK means success and anything else left a message in dim_last_error().
 * Handles are opaque and freed with their matching *_free function. Output
 * strings are heap-allocated and released with dim_string_free. Handles are
 * not thread-safe; the error message is thread-local. */
#ifndef DIMBERT_H
#define DIMBERT_H

#include <stddef.h>
#include <stdint.h>

/* The library is built with hidden default visibility; every entry point
 * carries this attribute so it stays exported. */
#if defined(_WIN32)
#define DIM_API
#else
#define DIM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dim_status {
  DIM_OK = 0,
  DIM_ERR_INVALID_ARG = 1,
  DIM_ERR_CONFIG = 2,
  DIM_ERR_SHAPE = 3,
  DIM_ERR_CONTRACT = 4,
  DIM_ERR_VOCAB = 5,
  DIM_ERR_LENGTH = 6,
  DIM_ERR_INDEX = 7,
  DIM_ERR_NUMERIC = 8,
  DIM_ERR_IO = 9,
  DIM_ERR_FINGERPRINT = 10,
  DIM_ERR_INTERNAL = 11
} dim_status;

/* Message for the most recent failure on the calling thread. Never NULL;
 * empty after a success. The pointer stays valid until the next call on the
 * same thread. */
DIM_API const char* dim_last_error(void);

typedef struct dim_config dim_config;
typedef struct dim_corpus dim_corpus;
typedef struct dim_model dim_model;

/* ---- configuration: flat `key = value` text, `#` comments ---- */

DIM_API dim_status dim_config_open(const char* path, dim_config** out);
DIM_API dim_status dim_config_parse(const char* text, dim_config** out);
/* Raw value of one key; `fallback` (may be NULL for empty) when absent.
 * The result goes through dim_string_free. */
DIM_API dim_status dim_config_get(const dim_config* config, const char* key,
                                  const char* fallback, char** out);
DIM_API void dim_config_free(dim_config* config);

/* ---- corpus ---- */

/* Generates scenes, region features, concepts, captions, and referring
 * tasks from the world keys of `config` and the given seed. */
DIM_API dim_status dim_corpus_generate(const dim_config* config, uint64_t seed,
                               dim_corpus** out);
DIM_API dim_status dim_corpus_load(const char* path, dim_corpus** out);
DIM_API dim_status dim_corpus_save(const dim_corpus* corpus, const char* path);
DIM_API dim_status dim_corpus_record_count(const dim_corpus* corpus, int64_t* out);
DIM_API void dim_corpus_free(dim_corpus* corpus);

/* ---- model lifecycle ---- */

/* Fresh model from the model keys of `config`; vocabulary and feature widths
 * come from the corpus. */
DIM_API dim_status dim_model_create(const dim_config* config, const dim_corpus* corpus,
                            dim_model** out);
DIM_API dim_status dim_model_load(const char* path, dim_model** out);
DIM_API dim_status dim_model_save(const dim_model* model, const char* path);
DIM_API dim_status dim_model_parameter_count(const dim_model* model, int64_t* out);
DIM_API dim_status dim_model_fingerprint(const dim_model* model, uint64_t* out);
DIM_API void dim_model_free(dim_model* model);

/* Arithmetic mean of same-architecture checkpoints; optimizer state is
 * dropped. Paths must name at least one checkpoint. */
DIM_API dim_status dim_average_checkpoints(const char* const* paths, size_t count,
                                   const char* out_path);
/* Same, over the last `k` *.ckpt files of a checkpoint directory in
 * filename order (per-epoch checkpoints sort chronologically). */
DIM_API dim_status dim_average_checkpoint_dir(const char* dir, int k,
                                              const char* out_path);

/* ---- training: the model is updated in place ---- */

/* Masked-word pre-training under the task mix. `adapt_phase` nonzero reads
 * the second-stage `adapt.*` keys instead, for domain-adaptive pre-training
 * on a downstream corpus. */
DIM_API dim_status dim_pretrain(dim_model* model, const dim_corpus* corpus,
                        const dim_config* config, int adapt_phase);
DIM_API dim_status dim_finetune_caption(dim_model* model, const dim_corpus* corpus,
                                const dim_config* config);
DIM_API dim_status dim_finetune_referring(dim_model* model, const dim_corpus* corpus,
                                  const dim_config* config);

/* ---- inference and reporting ---- */

/* Beam-searched caption for one record, returned as space-joined words. */
DIM_API dim_status dim_generate_caption(const dim_model* model, const dim_corpus* corpus,
                                int record_index, const dim_config* config,
                                char** out_text);
/* Teacher-forced token accuracy, BLEU over decoded captions, referring
 * accuracy; JSON report. */
DIM_API dim_status dim_evaluate(const dim_model* model, const dim_corpus* corpus,
                        const dim_config* config, char** out_json);
/* Full {esa,dim} x {concepts on,off} x {none,blm,s2slm,both} grid with
 * seed-averaged metrics; JSON report. */
DIM_API dim_status dim_ablate(const dim_corpus* corpus, const dim_config* config,
                      char** out_json);
/* Concept-extractor precision/recall/F1 against scene ground truth per
 * budget in `sweep.budgets`; JSON report. */
DIM_API dim_status dim_sweep_concepts(const dim_corpus* corpus, const dim_config* config,
                              char** out_json);
/* Per-layer, per-head attention matrices for one record plus last-layer
 * head means and top-3 cross-modal columns both ways; JSON artifact.
 * mask_kind is "blm" or "s2slm". */
DIM_API dim_status dim_dump_attention(const dim_model* model, const dim_corpus* corpus,
                              int record_index, const char* mask_kind,
                              char** out_json);

DIM_API void dim_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* DIMBERT_H */
