#ifndef UNIPROFILE_UNIPROFILE_H
#define UNIPROFILE_UNIPROFILE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define UP_API __declspec(dllexport)
#else
#  define UP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum up_status {
  UP_OK = 0,
  UP_ERR_PARSE = 1,
  UP_ERR_VALIDATION = 2,
  UP_ERR_RANGE = 3,
  UP_ERR_SCHEMA = 4,
  UP_ERR_SHAPE = 5,
  UP_ERR_INDEX = 6,
  UP_ERR_CONTRACT = 7,
  UP_ERR_NUMERIC = 8,
  UP_ERR_TRAINING = 9,
  UP_ERR_PARAMETER = 10,
  UP_ERR_CONFIG = 11,
  UP_ERR_IO = 12,
  UP_ERR_STAGE = 13,
  UP_ERR_INVALID_ARGUMENT = 14,
  UP_ERR_INTERNAL = 15
} up_status;

/* Pass for "no cutoff": the whole log is used. */
#define UP_NO_CUTOFF INT64_MIN

typedef struct up_event_log up_event_log;
typedef struct up_profiles up_profiles;

UP_API const char* up_version(void);
UP_API const char* up_status_name(up_status status);
/* Message of the last failure on the calling thread; "" after success. */
UP_API const char* up_last_error(void);
/* Stage named by the last UP_ERR_STAGE failure on the calling thread, else "". */
UP_API const char* up_last_stage(void);
/* Releases strings returned through char** out-parameters. */
UP_API void up_string_free(char* s);

/* Event logs */
UP_API up_status up_event_log_read(const char* path, up_event_log** out);
UP_API up_status up_event_log_write(const up_event_log* log, const char* path);
UP_API void up_event_log_free(up_event_log* log);
UP_API up_status up_event_log_counts(const up_event_log* log, uint64_t* clients, uint64_t* events);
UP_API up_status up_event_log_window(const up_event_log* log, int64_t* start, int64_t* end);
/* Per event type: interactions, clients, entities, average length. */
UP_API up_status up_event_log_stats_json(const up_event_log* log, char** json_out);
UP_API up_status up_event_log_split(const up_event_log* log, int64_t cutoff, int horizon_days,
                                    up_event_log** history, up_event_log** holdout);

/* Profile matrices (.uemb) */
UP_API up_status up_profiles_read(const char* path, up_profiles** out);
UP_API up_status up_profiles_write(const up_profiles* p, const char* path);
UP_API up_status up_profiles_export_tsv(const up_profiles* p, const char* path);
UP_API void up_profiles_free(up_profiles* p);
UP_API up_status up_profiles_shape(const up_profiles* p, uint64_t* rows, uint32_t* dim);
UP_API up_status up_profiles_client_id(const up_profiles* p, uint64_t row, uint64_t* client_id);
/* Copies one row; capacity must be at least dim. */
UP_API up_status up_profiles_row(const up_profiles* p, uint64_t row, float* out, uint32_t capacity);
UP_API up_status up_profiles_metadata_json(const up_profiles* p, char** json_out);
/* 1 when both matrices carry identical ids, dims, metadata and payload bits. */
UP_API up_status up_profiles_equal(const up_profiles* a, const up_profiles* b, int* equal);

/* Stage operations. Each reads and writes files; config_path may be NULL for defaults. */
UP_API up_status up_synth(const char* config_path, const uint64_t* seed, unsigned threads,
                          const char* events_out, const char* truth_out);
UP_API up_status up_ingest(const char* events_path, const char* out_path, char** stats_json_out);
UP_API up_status up_encode(const char* events_path, const char* schema, int64_t cutoff,
                           const char* out_path);
UP_API up_status up_train_ae(const char* events_path, const char* variant, const char* config_path,
                             uint64_t seed, int64_t cutoff, const char* ckpt_out);
UP_API up_status up_embed_ae(const char* ckpt_path, const char* events_path, int64_t cutoff,
                             unsigned threads, const char* out_path);
UP_API up_status up_train_ials(const char* events_path, const char* target, int64_t cutoff, int k,
                               int iterations, uint64_t seed, const char* out_path);
UP_API up_status up_features(const char* events_path, int64_t cutoff, unsigned threads,
                             const char* out_path);
UP_API up_status up_combine(const char* spec_path, const char* out_path);
/* report_json_out may be NULL; report_out may be NULL. */
UP_API up_status up_evaluate(const char* const* profile_paths, size_t n_profiles,
                             const char* events_path, int64_t cutoff, int horizon_days,
                             const char* tasks_csv, uint64_t seed, unsigned threads,
                             const char* report_out, char** report_json_out);

typedef void (*up_stage_callback)(const char* stage, int cache_hit, double seconds, void* user);

/* Full pipeline. seed and work_dir override the config when non-NULL; on_stage
   may be NULL. */
UP_API up_status up_run_pipeline(const char* config_path, const uint64_t* seed, unsigned threads,
                                 const char* work_dir, up_stage_callback on_stage, void* user,
                                 char** report_json_out);

#ifdef __cplusplus
}
#endif

#endif
