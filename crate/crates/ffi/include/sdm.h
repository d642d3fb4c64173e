#ifndef SDM_H
#define SDM_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdmStatus {
  SDM_STATUS_OK = 0,
  SDM_STATUS_NULL_POINTER = 1,
  SDM_STATUS_INVALID_UTF8 = 2,
  SDM_STATUS_PARSE = 3,
  SDM_STATUS_VALIDATION = 4,
  SDM_STATUS_CONTRACT = 5,
  SDM_STATUS_NUMERIC = 6,
  SDM_STATUS_SIMULATION = 7,
  SDM_STATUS_DATA = 8,
  SDM_STATUS_IO = 9,
  SDM_STATUS_JSON = 10,
  SDM_STATUS_BUFFER_TOO_SMALL = 11,
  SDM_STATUS_PANIC = 12,
} SdmStatus;

/**
 * Opaque cascade with its captured snapshots.
 */
typedef struct SdmCascade SdmCascade;

/**
 * Opaque hypergraph.
 */
typedef struct SdmHypergraph SdmHypergraph;

/**
 * Opaque trained model.
 */
typedef struct SdmModel SdmModel;

typedef struct SdmMetrics {
  double acc;
  double balanced_acc;
  double precision;
  double recall;
  double f_score;
  double auc;
} SdmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap` bytes. Returns the full length
 * of the message plus one, so callers can size a buffer with `cap = 0`.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null when `cap` is 0.
 */
size_t sdm_last_error(char *buf, size_t cap);

/**
 * Static NUL-terminated version string.
 */
const char *sdm_version(void);

/**
 * Parses hypergraph text (one hyperedge of node ids per line).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum SdmStatus sdm_hypergraph_parse(const char *text, struct SdmHypergraph **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SdmStatus sdm_hypergraph_load(const char *path, struct SdmHypergraph **out);

/**
 * Random hypergraph with `edges` hyperedges of sizes in `[size_min, size_max]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SdmStatus sdm_hypergraph_generate(size_t nodes,
                                       size_t edges,
                                       size_t size_min,
                                       size_t size_max,
                                       uint64_t seed,
                                       struct SdmHypergraph **out);

/**
 * # Safety
 * `hg` must be a live handle; the outputs must be writable or null.
 */
enum SdmStatus sdm_hypergraph_size(const struct SdmHypergraph *hg, size_t *nodes, size_t *edges);

/**
 * # Safety
 * `hg` must be null or a handle not yet freed.
 */
void sdm_hypergraph_free(struct SdmHypergraph *hg);

/**
 * Simulates one cascade. `config_json` holds cascade settings (null for
 * defaults); `seed` replaces its seed.
 *
 * # Safety
 * `hg` must be a live handle; `config_json` null or NUL-terminated; `out` writable.
 */
enum SdmStatus sdm_cascade_simulate(const struct SdmHypergraph *hg,
                                    const char *config_json,
                                    uint64_t seed,
                                    struct SdmCascade **out);

/**
 * Reads a cascade from its JSON snapshot format.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` writable.
 */
enum SdmStatus sdm_cascade_from_json(const char *json, struct SdmCascade **out);

/**
 * Number of snapshots and of sources.
 *
 * # Safety
 * `cascade` must be a live handle; the outputs writable or null.
 */
enum SdmStatus sdm_cascade_info(const struct SdmCascade *cascade,
                                size_t *snapshots,
                                size_t *sources);

/**
 * Writes 1.0 for sources and 0.0 elsewhere into `labels[0..n]`.
 *
 * # Safety
 * `cascade` must be a live handle; `labels` must hold `len` doubles.
 */
enum SdmStatus sdm_cascade_labels(const struct SdmCascade *cascade, double *labels, size_t len);

/**
 * # Safety
 * `cascade` must be null or a handle not yet freed.
 */
void sdm_cascade_free(struct SdmCascade *cascade);

/**
 * Builds a model from its JSON config (null for defaults) and a checkpoint.
 *
 * # Safety
 * `config_json` null or NUL-terminated; `checkpoint_json` NUL-terminated; `out` writable.
 */
enum SdmStatus sdm_model_load(const char *config_json,
                              const char *checkpoint_json,
                              struct SdmModel **out);

/**
 * Freshly initialized model from its JSON config (null for defaults).
 *
 * # Safety
 * `config_json` null or NUL-terminated; `out` writable.
 */
enum SdmStatus sdm_model_new(const char *config_json, struct SdmModel **out);

/**
 * Source scores for every node of `hg` given the cascade's snapshots.
 *
 * # Safety
 * Handles must be live; `scores` must hold `len` doubles.
 */
enum SdmStatus sdm_model_predict(const struct SdmModel *model,
                                 const struct SdmHypergraph *hg,
                                 const struct SdmCascade *cascade,
                                 double *scores,
                                 size_t len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sdm_model_free(struct SdmModel *model);

/**
 * Jordan-center scores on snapshot `capture` of the cascade.
 *
 * # Safety
 * Handles must be live; `scores` must hold `len` doubles.
 */
enum SdmStatus sdm_jordan_center(const struct SdmHypergraph *hg,
                                 const struct SdmCascade *cascade,
                                 size_t capture,
                                 double *scores,
                                 size_t len);

/**
 * Detection metrics of `scores` against 0/1 `labels` at `threshold`.
 *
 * # Safety
 * `scores` and `labels` must hold `len` doubles; `out` must be writable.
 */
enum SdmStatus sdm_metrics(const double *scores,
                           const double *labels,
                           size_t len,
                           double threshold,
                           struct SdmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDM_H */
