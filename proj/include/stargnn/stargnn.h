/*
 * C interface to the spatio-temporal region-graph video retrieval library.
 *
 * Objects are opaque handles created and destroyed through this API. Every
 * fallible call returns a stargnn_status; on failure the thread-local
 * message from stargnn_last_error() describes the cause. Status values
 * double as the CLI exit codes.
 */
#ifndef STARGNN_H
#define STARGNN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define STARGNN_API __declspec(dllexport)
#else
#  define STARGNN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum stargnn_status {
  STARGNN_OK = 0,
  STARGNN_ERR_USAGE = 1,
  STARGNN_ERR_DATA = 2,
  STARGNN_ERR_NUMERIC = 3
} stargnn_status;

typedef struct stargnn_config stargnn_config;
typedef struct stargnn_index stargnn_index;

STARGNN_API const char* stargnn_version(void);

/* Message for the last failed call on this thread ("" if none). */
STARGNN_API const char* stargnn_last_error(void);

/* Finer-grained failure category of the last error, e.g. "pipeline_order". */
STARGNN_API const char* stargnn_last_error_kind(void);

/* Frees strings returned through char** out-parameters. */
STARGNN_API void stargnn_string_free(char* s);

/* ---- configuration ---- */

/* path may be NULL for defaults. */
STARGNN_API stargnn_status stargnn_config_load(const char* path, stargnn_config** out);
STARGNN_API void stargnn_config_free(stargnn_config* cfg);
/* key uses dotted form ("backbone.channels"); value is JSON text or a bare string. */
STARGNN_API stargnn_status stargnn_config_set(stargnn_config* cfg, const char* key, const char* value);
/* stage: "features", "graphs", "model" or "embeddings". */
STARGNN_API stargnn_status stargnn_config_hash(const stargnn_config* cfg, const char* stage,
                                               uint64_t* out);
STARGNN_API stargnn_status stargnn_config_to_json(const stargnn_config* cfg, char** out_json);

/* ---- pipeline stages ---- */

typedef struct stargnn_extract_stats {
  size_t computed;
  size_t cached;
  size_t failed;
} stargnn_extract_stats;

STARGNN_API stargnn_status stargnn_synth(const char* out_dir, int base_clips, int transforms,
                                         int distractors, uint64_t seed);

STARGNN_API stargnn_status stargnn_extract(const stargnn_config* cfg, const char* manifest,
                                           stargnn_extract_stats* stats);

STARGNN_API stargnn_status stargnn_build_graphs(const stargnn_config* cfg, const char* manifest,
                                                size_t* built, size_t* cached);

typedef struct stargnn_train_summary {
  int epochs;
  double final_loss;
  double best_val_map;
  size_t train_queries;
  size_t val_queries;
} stargnn_train_summary;

/* train_ratio <= 0 uses the configured ratio; log_path may be NULL. */
STARGNN_API stargnn_status stargnn_train(const stargnn_config* cfg, const char* manifest,
                                         const char* relevance, const char* checkpoint_out,
                                         const char* log_path, double train_ratio,
                                         stargnn_train_summary* summary);

/* checkpoint NULL: static aggregation baseline. split NULL: all entries. */
STARGNN_API stargnn_status stargnn_embed(const stargnn_config* cfg, const char* manifest,
                                         const char* checkpoint, const char* split,
                                         const char* store_out, size_t* count);

/* ---- embedding index ---- */

STARGNN_API stargnn_status stargnn_index_load(const char* path, stargnn_index** out);
STARGNN_API void stargnn_index_free(stargnn_index* index);
STARGNN_API size_t stargnn_index_size(const stargnn_index* index);
STARGNN_API size_t stargnn_index_dim(const stargnn_index* index);
/* Copies dim floats into out. */
STARGNN_API stargnn_status stargnn_index_get(const stargnn_index* index, const char* id,
                                             float* out, size_t dim);
/* Merges the stores at paths[0..n) into out_path. */
STARGNN_API stargnn_status stargnn_index_merge(const char* const* paths, size_t n,
                                               const char* out_path, size_t* count);
/* JSON array [{"id":..,"score":..}] of the top_k candidates (0: all), query excluded. */
STARGNN_API stargnn_status stargnn_index_search(const stargnn_index* index, const char* query_id,
                                                size_t top_k, char** out_json);

/* Writes the report JSON to report_out (may be NULL) and returns mAP. */
STARGNN_API stargnn_status stargnn_evaluate(const stargnn_index* index, const char* relevance,
                                            const char* manifest, size_t distractors,
                                            uint64_t seed, const char* report_out,
                                            double* map_out);

/* mode: "star_gnn" or "static". checkpoint required for star_gnn. */
STARGNN_API stargnn_status stargnn_render_attention(const stargnn_config* cfg, const char* manifest,
                                                    const char* checkpoint, const char* video_id,
                                                    const char* mode, const char* out_dir,
                                                    size_t* files_written);

#ifdef __cplusplus
}
#endif

#endif /* STARGNN_H */
