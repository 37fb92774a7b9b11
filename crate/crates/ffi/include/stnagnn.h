#ifndef STNAGNN_H
#define STNAGNN_H

#include <stddef.h>
#include <stdint.h>

/*
 One graph instance: T snapshots of `[N × d]` features and a shared edge set.
 */
typedef struct StnGraph StnGraph;

/*
 Trained parameters plus the model configuration they belong to.
 */
typedef struct StnModel StnModel;

typedef int32_t StnStatus;

#define STN_OK 0

#define STN_ERR_NULL 1

#define STN_ERR_CONFIG 2

#define STN_ERR_DATA 3

#define STN_ERR_NUMERIC 4

#define STN_ERR_IO 5

#define STN_ERR_BUFFER 6

#define STN_ERR_PANIC 7

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *stn_version(void);

/*
 Message for the last failed call on this thread; empty if none. Valid until
 the next failing call on the same thread.
 */
const char *stn_last_error(void);

/*
 Loads a checkpoint JSON. `model_config_json` may be NULL for the default
 configuration; the parameter shapes must match it.

 # Safety
 String arguments must be NUL-terminated or NULL where allowed; `out` must be writable.
 */
StnStatus stn_model_load(const char *checkpoint_path,
                         const char *model_config_json,
                         struct StnModel **out);

/*
 # Safety
 `model` must come from `stn_model_load` and not be freed twice. NULL is ignored.
 */
void stn_model_free(struct StnModel *model);

/*
 Writes `n_classes` logits into `logits_out`.

 # Safety
 Handles must be live; `logits_out` must hold `len` doubles.
 */
StnStatus stn_model_predict(const struct StnModel *model,
                            const struct StnGraph *graph,
                            double *logits_out,
                            size_t len);

/*
 Attention row of query node `(t, j)` over all `T·N` nodes, snapshot-major.

 # Safety
 Handles must be live; `out` must hold `len` doubles.
 */
StnStatus stn_model_attention_row(const struct StnModel *model,
                                  const struct StnGraph *graph,
                                  size_t t,
                                  size_t j,
                                  double *out,
                                  size_t len);

/*
 Builds a graph from raw arrays. `features` is `T·N·d` doubles, snapshot-major
 then row-major; edges are `(edge_u[k], edge_v[k], edge_w[k])` with positive
 weights and any endpoint order.

 # Safety
 Array pointers must hold the stated number of elements; `out` must be writable.
 */
StnStatus stn_graph_from_arrays(size_t n_snapshots,
                                size_t n_nodes,
                                size_t feature_dim,
                                const double *features,
                                size_t n_edges,
                                const size_t *edge_u,
                                const size_t *edge_v,
                                const double *edge_w,
                                struct StnGraph **out);

/*
 Loads one instance from a dataset directory and builds its graph.
 `graph_config_json` may be NULL for defaults.

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
StnStatus stn_graph_build_from_dataset(const char *dataset_dir,
                                       const char *instance_id,
                                       const char *graph_config_json,
                                       struct StnGraph **out);

/*
 Reports `(T, N, d)` of a graph.

 # Safety
 `graph` must be live; output pointers must be writable.
 */
StnStatus stn_graph_shape(const struct StnGraph *graph,
                          size_t *n_snapshots,
                          size_t *n_nodes,
                          size_t *feature_dim);

/*
 # Safety
 `graph` must come from a `stn_graph_*` constructor and not be freed twice. NULL is ignored.
 */
void stn_graph_free(struct StnGraph *graph);

/*
 Spatio-temporal sinusoidal encoding, `T·N·d_model` doubles in `[T][N][d]` order.

 # Safety
 `out` must hold `len` doubles.
 */
StnStatus stn_positional_encoding(size_t d_model,
                                  size_t n_nodes,
                                  size_t n_snapshots,
                                  double *out,
                                  size_t len);

/*
 Mann-Whitney AUC of `scores` against `positive` flags (non-zero = positive).

 # Safety
 `scores` and `positive` must hold `n` elements; `out` must be writable.
 */
StnStatus stn_auc(const double *scores, const uint8_t *positive, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STNAGNN_H */
