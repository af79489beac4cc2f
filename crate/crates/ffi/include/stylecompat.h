#ifndef STYLECOMPAT_H
#define STYLECOMPAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_UTF8 = 2,
  SC_STATUS_BUFFER_TOO_SMALL = 3,
  SC_STATUS_SHAPE = 10,
  SC_STATUS_DOMAIN = 11,
  SC_STATUS_CONTRACT = 12,
  SC_STATUS_NUMERICS = 13,
  SC_STATUS_CONFIG = 14,
  SC_STATUS_INPUT = 15,
  SC_STATUS_SAMPLING = 16,
  SC_STATUS_METRIC = 17,
  SC_STATUS_FORMAT = 18,
  SC_STATUS_IO = 19,
  SC_STATUS_PANIC = 99,
} ScStatus;

/**
 * Exact nearest-neighbour index over stored embeddings.
 */
typedef struct ScIndex ScIndex;

/**
 * Loaded checkpoint.
 */
typedef struct ScModel ScModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/**
 * Copy the calling thread's last error message into `buf`. `len_out`
 * receives the message length; call with `cap = 0` to size the buffer.
 */
enum ScStatus sc_last_error_message(char *buf, size_t cap, size_t *len_out);

/**
 * Area under the ROC curve. `labels[i]` is nonzero for positives.
 */
enum ScStatus sc_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *auc_out);

/**
 * Contrastive loss of one pair of embeddings.
 */
enum ScStatus sc_contrastive_loss(const double *xi,
                                  const double *xj,
                                  size_t dim,
                                  bool compatible,
                                  double margin,
                                  double *loss_out);

/**
 * 64-bit perceptual hash of a grayscale image given row-major.
 */
enum ScStatus sc_phash(const double *pixels, size_t width, size_t height, uint64_t *hash_out);

/**
 * Number of differing bits between two hashes.
 */
uint32_t sc_hamming(uint64_t a, uint64_t b);

/**
 * Load a checkpoint. Release with [`sc_model_free`].
 */
enum ScStatus sc_model_load(const char *path_c, struct ScModel **model_out);

void sc_model_free(struct ScModel *model);

/**
 * Length of the feature vectors the model accepts.
 */
size_t sc_model_input_dim(const struct ScModel *model);

/**
 * Embed one feature vector. `len_out` receives the embedding length.
 */
enum ScStatus sc_model_embed(const struct ScModel *model,
                             const double *features,
                             size_t n_features,
                             double *embedding_out,
                             size_t cap,
                             size_t *len_out);

/**
 * Load an index written by `stylecompat retrieve`. Release with
 * [`sc_index_free`].
 */
enum ScStatus sc_index_load(const char *path_c, struct ScIndex **index_out);

void sc_index_free(struct ScIndex *index);

size_t sc_index_len(const struct ScIndex *index);

size_t sc_index_dim(const struct ScIndex *index);

/**
 * Copy the id stored at `position` into `buf`.
 */
enum ScStatus sc_index_id(const struct ScIndex *index,
                          size_t position,
                          char *buf,
                          size_t cap,
                          size_t *len_out);

/**
 * The `k` best entries for `query`. Positions and scores are written to
 * arrays of at least `k` elements; `count_out` receives how many were
 * filled. `exclude_type < 0` disables type exclusion.
 */
enum ScStatus sc_index_query(const struct ScIndex *index,
                             const double *query,
                             size_t dim,
                             size_t k,
                             int64_t exclude_type,
                             size_t *positions_out,
                             double *scores_out,
                             size_t *count_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STYLECOMPAT_H */
