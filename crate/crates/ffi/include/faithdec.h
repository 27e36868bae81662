#ifndef FAITHDEC_H
#define FAITHDEC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum FdStatus {
  FD_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  FD_STATUS_NULL_OR_INVALID_ARGUMENT = 1,
  // A configuration value or precondition was rejected.
  FD_STATUS_INVALID_CONFIG = 2,
  // An input file could not be read or parsed.
  FD_STATUS_IO = 3,
  // No embedding exists for the requested clip or text.
  FD_STATUS_NOT_FOUND = 4,
  // An external model or service failed.
  FD_STATUS_BACKEND = 5,
  // Numeric failure such as a dimension mismatch or zero vector.
  FD_STATUS_NUMERIC = 6,
  // A panic was caught at the boundary.
  FD_STATUS_INTERNAL = 7,
} FdStatus;

// Embedding provider handle.
typedef struct FdEmbeddings FdEmbeddings;

// Tabular language model handle.
typedef struct FdLm FdLm;

// Decoded captions, best first.
typedef struct FdNBest FdNBest;

// Decoder settings. `max_len` and `rollout_max_len` count BOS and EOS.
typedef struct FdDecodeConfig {
  size_t beam_width;
  double alpha;
  size_t max_len;
  size_t rollout_max_len;
  size_t expansions_per_beam;
  size_t n_best;
  uint64_t seed;
} FdDecodeConfig;

// Library defaults for every decoder setting.
struct FdDecodeConfig fd_config_default(void);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *fd_last_error_message(void);

// Loads a tabular model file into `*out`.
enum FdStatus fd_lm_load_tabular(const char *path, struct FdLm **out);

void fd_lm_free(struct FdLm *lm);

// Loads an embedding store file into `*out`.
enum FdStatus fd_embeddings_load_store(const char *path, struct FdEmbeddings **out);

// Bag-of-words provider over `lm`'s vocabulary. Audio vectors are read
// from the store at `audio_path`, which may be null for a text-only
// provider. `lm` may be freed afterwards.
enum FdStatus fd_embeddings_bag_of_words(const struct FdLm *lm,
                                         const char *audio_path,
                                         struct FdEmbeddings **out);

void fd_embeddings_free(struct FdEmbeddings *embeddings);

// Decodes captions for `context_id`. With `faithful` set the
// faithfulness-guided decoder runs and `embeddings` is required; otherwise
// plain beam search runs and `embeddings` may be null.
enum FdStatus fd_decode(const struct FdLm *lm,
                        const struct FdEmbeddings *embeddings,
                        const char *context_id,
                        const struct FdDecodeConfig *config,
                        bool faithful,
                        struct FdNBest **out);

// Number of hypotheses in `nbest`; 0 for null.
size_t fd_nbest_len(const struct FdNBest *nbest);

// Caption of hypothesis `index`, or null when out of range. Owned by
// `nbest`.
const char *fd_nbest_caption(const struct FdNBest *nbest, size_t index);

// Final-ranking score of hypothesis `index`.
enum FdStatus fd_nbest_score(const struct FdNBest *nbest, size_t index, double *out);

void fd_nbest_free(struct FdNBest *nbest);

// Cosine similarity of two vectors of length `len`.
enum FdStatus fd_cosine_similarity(const double *a, const double *b, size_t len, double *out);

// `(1 - alpha) * p + alpha * sim`, with `p` in [0, 1], `sim` in [-1, 1]
// and `alpha` in [0, 1].
enum FdStatus fd_weighted_score(double p, double sim, double alpha, double *out);

#endif  /* FAITHDEC_H */
